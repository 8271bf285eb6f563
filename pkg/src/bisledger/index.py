"""Lookup structures over accepted transactions.

``ChainIndex`` is what both the ledger and the mempool maintain; a
``LayeredView`` stacks the mempool over the ledger so admission checks can
resolve references to transactions that are pending but not yet mined.
"""
from __future__ import annotations

from .crypto import PublicKey
from .transactions import (
    ContractTx,
    DataAnchorTx,
    PolicyAdvertTx,
    SensorGenesisTx,
    Transaction,
    TxId,
)


class ChainIndex:
    def __init__(self, court_registry: frozenset[PublicKey] | None = None):
        self.court_registry = court_registry
        self.txs: dict[TxId, Transaction] = {}
        self.order: list[TxId] = []
        self.root: dict[TxId, TxId] = {}
        self.chains: dict[TxId, list[TxId]] = {}
        self.sensor_genesis: dict[PublicKey, TxId] = {}
        self.sensor_tips: dict[PublicKey, TxId] = {}
        self.sensors: dict[TxId, list[PublicKey]] = {}
        self.adverts: list[TxId] = []

    # queries shared with LayeredView
    def get(self, tid: TxId) -> Transaction | None:
        return self.txs.get(tid)

    def contract_of(self, tid: TxId) -> TxId | None:
        return self.root.get(tid)

    def genesis_of(self, sensor_pk: PublicKey) -> TxId | None:
        return self.sensor_genesis.get(sensor_pk)

    def sensor_tip(self, sensor_pk: PublicKey) -> TxId | None:
        return self.sensor_tips.get(sensor_pk)

    def sensors_of(self, sct_tid: TxId) -> list[PublicKey]:
        return list(self.sensors.get(sct_tid, ()))

    def chain(self, sct_tid: TxId) -> list[TxId]:
        return list(self.chains.get(sct_tid, ()))

    def __contains__(self, tid: TxId) -> bool:
        return tid in self.txs

    def __len__(self) -> int:
        return len(self.txs)

    def add(self, tx: Transaction, root_lookup=None) -> None:
        """Index an already validated transaction.

        ``root_lookup`` resolves parents that live in a lower layer.
        """
        lookup = root_lookup or self.contract_of
        tid = tx.t_id
        self.txs[tid] = tx
        self.order.append(tid)
        root = None
        if isinstance(tx, ContractTx):
            root = tid
        elif tx.parent is not None:
            root = self.root.get(tx.parent) or lookup(tx.parent)
        if root is not None:
            self.root[tid] = root
            self.chains.setdefault(root, []).append(tid)
        if isinstance(tx, SensorGenesisTx):
            self.sensor_genesis[tx.sensor_pk] = tid
            self.sensor_tips[tx.sensor_pk] = tid
            self.sensors.setdefault(tx.sct_ref, []).append(tx.sensor_pk)
        elif isinstance(tx, DataAnchorTx) and tx.sensor_pk in self.sensor_tips:
            self.sensor_tips[tx.sensor_pk] = tid
        elif isinstance(tx, PolicyAdvertTx):
            self.adverts.append(tid)


class LayeredView:
    """Read-only union of a base index and a pending overlay."""

    def __init__(self, base: ChainIndex, top: ChainIndex):
        self.base = base
        self.top = top
        self.court_registry = base.court_registry

    def get(self, tid):
        return self.top.get(tid) or self.base.get(tid)

    def contract_of(self, tid):
        return self.top.contract_of(tid) or self.base.contract_of(tid)

    def genesis_of(self, sensor_pk):
        return self.top.genesis_of(sensor_pk) or self.base.genesis_of(sensor_pk)

    def sensor_tip(self, sensor_pk):
        return self.top.sensor_tip(sensor_pk) or self.base.sensor_tip(sensor_pk)

    def sensors_of(self, sct_tid):
        return self.base.sensors_of(sct_tid) + self.top.sensors_of(sct_tid)

    def chain(self, sct_tid):
        return self.base.chain(sct_tid) + self.top.chain(sct_tid)

    def __contains__(self, tid):
        return tid in self.top or tid in self.base

    def add(self, tx: Transaction) -> None:
        # Pending anchors from a sensor registered on the base layer move its tip.
        if isinstance(tx, DataAnchorTx) and self.base.sensor_tip(tx.sensor_pk):
            self.top.sensor_tips.setdefault(tx.sensor_pk, self.base.sensor_tip(tx.sensor_pk))
        self.top.add(tx, root_lookup=self.base.contract_of)
