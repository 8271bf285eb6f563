"""Deterministic in-process network: parties submit, miners batch under the wait gate.

Time is virtual (milliseconds). Mining attempts fire every
``wait_period / len(miners)`` ms; at each attempt the next eligible miner in
public-key order takes the whole mempool.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .chain import Ledger, append_block, may_mine
from .crypto import KeyPair, KeyRing, PublicKey
from .errors import ConfigError, Rejected
from .index import ChainIndex, LayeredView
from .parties import AnchoredRecord, Party, Role
from .store import anchor_record, put_record
from .transactions import Transaction, TxId
from .validation import validate_tx


class EventKind(str, enum.Enum):
    SUBMIT_TX = "SubmitTx"
    SENSOR_READING = "SensorReading"
    MINE_ATTEMPT = "MineAttempt"
    PARTY_ACTION = "PartyAction"


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class SimulationTrace(list):
    """List of event dicts, each carrying a virtual timestamp ``at``."""

    def of(self, event: str) -> list[dict]:
        return [e for e in self if e["event"] == event]

    def blocks(self) -> list[dict]:
        return self.of("block")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())
        return path


class Network:
    def __init__(self, miners: int | Iterable[KeyPair] = 1, wait_period: int = 1000, seed: int = 0,
                 court_registry: Iterable[PublicKey] = (), max_block_txs: int | None = None):
        self.rng = random.Random(seed)
        self.seed = seed
        if isinstance(miners, int):
            miners = [KeyPair.generate(self.rng) for _ in range(miners)]
        self.miners: list[KeyPair] = sorted(miners, key=lambda kp: kp.pk)
        if not self.miners:
            raise ConfigError("a network needs at least one miner")
        self.ledger = Ledger(wait_period, frozenset(court_registry))
        self.wait_period = wait_period
        self.max_block_txs = max_block_txs
        self.parties: list[Party] = []
        self.mempool: list[Transaction] = []
        self._pending = ChainIndex(self.ledger.court_registry)
        self.clock = 0
        self.trace = SimulationTrace()
        self._events: list[SimEvent] = []
        self._seq = itertools.count()
        self._rr = 0
        self.tick = max(1, wait_period // len(self.miners))
        self._next_tick = self.tick
        self._schedule_event(self._next_tick, EventKind.MINE_ATTEMPT)

    # -- parties -----------------------------------------------------------------

    @property
    def court_registry(self) -> frozenset[PublicKey]:
        return self.ledger.court_registry

    def register_court(self, pk: PublicKey) -> None:
        registry = self.ledger.court_registry | {pk}
        self.ledger.index.court_registry = registry
        self._pending.court_registry = registry

    def add_party(self, party: Party) -> Party:
        """Join the network. No authorisation is required."""
        self.parties.append(party)
        self.log("join", party=party.name, role=party.role.value)
        return party

    def new_party(self, name: str, role: Role | str, account_id: str = "",
                  registered: bool = True, **kwargs) -> Party:
        ring = KeyRing(name, rng=random.Random(self.rng.getrandbits(64)))
        party = Party(name, Role(role), ring, account_id, **kwargs)
        if party.role is Role.COURT and registered:
            self.register_court(party.pk)
        return self.add_party(party)

    def party(self, name: str) -> Party:
        for p in self.parties:
            if p.name == name:
                return p
        raise KeyError(name)

    # -- transactions ------------------------------------------------------------

    @property
    def view(self) -> LayeredView:
        """Ledger plus mempool, as seen by admission checks."""
        return LayeredView(self.ledger.index, self._pending)

    def log(self, event: str, **fields) -> None:
        self.trace.append({"at": self.clock, "event": event, **fields})

    def submit(self, tx: Transaction) -> TxId:
        view = self.view
        result = validate_tx(tx, view)
        if not result.ok:
            self.log("reject", tid=tx.t_id.hex(), kind=tx.NAME, check=result.check)
            raise result.error()
        view.add(tx)
        self.mempool.append(tx)
        self.log("submit", tid=tx.t_id.hex(), kind=tx.NAME)
        return tx.t_id

    def adverts_by(self, insurance_pk: PublicKey) -> list[Transaction]:
        ids = self.ledger.index.adverts + self._pending.adverts
        txs = [self.view.get(t) for t in ids]
        return [tx for tx in txs if tx.insurance_pk == insurance_pk]

    # -- event loop --------------------------------------------------------------

    def _schedule_event(self, at: int, kind: EventKind, payload: Any = None) -> None:
        heapq.heappush(self._events, SimEvent(at, next(self._seq), kind, payload))

    def schedule(self, at: int, kind: EventKind | str, payload: Any = None) -> None:
        if at < self.clock:
            raise ValueError("cannot schedule in the past")
        self._schedule_event(at, EventKind(kind), payload)

    def run_until(self, t_end: int) -> SimulationTrace:
        if t_end < self.clock:
            raise ValueError("t_end precedes the current clock")
        while self._events and self._events[0].at <= t_end:
            ev = heapq.heappop(self._events)
            self.clock = ev.at
            self._dispatch(ev)
        self.clock = t_end
        return self.trace

    def confirm(self) -> None:
        """Advance virtual time until the mempool has been mined."""
        while self.mempool:
            self.run_until(self._next_tick)

    def _dispatch(self, ev: SimEvent) -> None:
        if ev.kind is EventKind.MINE_ATTEMPT:
            self._mine_attempt()
            self._next_tick = ev.at + self.tick
            self._schedule_event(self._next_tick, EventKind.MINE_ATTEMPT)
        elif ev.kind is EventKind.SUBMIT_TX:
            try:
                self.submit(ev.payload)
            except Rejected:
                pass
        elif ev.kind is EventKind.SENSOR_READING:
            self.sensor_reading(**ev.payload)
        elif ev.kind is EventKind.PARTY_ACTION:
            ev.payload(self)

    def sensor_reading(self, sensor: Party, store, data: bytes, owner: Party | None = None):
        receipt = put_record(store, sensor.pk, data, self.clock)
        tx = anchor_record(sensor.key, self, receipt)
        if owner is not None:
            owner.data_log.append(AnchoredRecord(receipt.locator, tx.t_id, sensor.pk, self.clock))
        return receipt, tx

    def _mine_attempt(self) -> None:
        if not self.mempool:
            return
        n = len(self.miners)
        for k in range(n):
            miner = self.miners[(self._rr + k) % n]
            if may_mine(self.ledger.clock, miner.pk, self.clock):
                self._rr = (self._rr + k + 1) % n
                break
        else:
            return
        batch = self.mempool[: self.max_block_txs] if self.max_block_txs else list(self.mempool)
        block = append_block(self.ledger, batch, miner.pk, self.clock)
        self.mempool = self.mempool[len(batch):]
        self._pending = ChainIndex(self.ledger.court_registry)
        base = self.view
        for tx in self.mempool:
            base.add(tx)
        self.log(
            "block", height=block.height, miner=miner.pk.hex(), hash=block.block_hash.hex(),
            tids=[t.hex() for t in block.tx_ids],
        )


def spawn_network(parties: Iterable[tuple[str, str]] = (), miners: int | Iterable[KeyPair] = 1,
                  wait_period: int = 1000, seed: int = 0, **kwargs) -> Network:
    """Build a network and create ``(name, role)`` parties deterministically from ``seed``."""
    net = Network(miners=miners, wait_period=wait_period, seed=seed, **kwargs)
    for name, role in parties:
        net.new_party(name, role)
    return net
