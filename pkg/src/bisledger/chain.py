"""Append-only block ledger with previous-hash links and a miner wait gate."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .codec import Reader, pack, read_u64, u64, unpack
from .crypto import HASH_LEN, PK_LEN, Hash256, PublicKey, digest
from .errors import ConsensusViolation, EncodingError, NotFound, VerificationFailed
from .index import ChainIndex, LayeredView
from .transactions import (
    ContractTx,
    PolicyAdvertTx,
    Transaction,
    TxId,
    decode_tx,
    wire_bytes,
)
from .validation import validate_tx

ZERO_HASH = bytes(HASH_LEN)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: Hash256
    miner_pk: PublicKey
    timestamp: int
    tx_ids: tuple[TxId, ...]
    block_hash: Hash256
    txs: tuple[Transaction, ...] = field(default=(), repr=False, compare=False)

    @staticmethod
    def header_bytes(height, prev_hash, miner_pk, timestamp, tx_ids) -> bytes:
        return pack([u64(height), prev_hash, miner_pk, u64(timestamp), pack(tx_ids)])

    @property
    def header(self) -> bytes:
        return self.header_bytes(self.height, self.prev_hash, self.miner_pk, self.timestamp, self.tx_ids)

    @classmethod
    def create(cls, height, prev_hash, miner_pk, timestamp, txs) -> "Block":
        tx_ids = tuple(tx.t_id for tx in txs)
        header = cls.header_bytes(height, prev_hash, miner_pk, timestamp, tx_ids)
        return cls(height, prev_hash, miner_pk, timestamp, tx_ids, digest(header), tuple(txs))


def decode_header(data: bytes) -> tuple[int, bytes, bytes, int, tuple[bytes, ...]]:
    r = Reader(data)
    height = read_u64(r.field())
    prev = r.field()
    miner = r.field()
    ts = read_u64(r.field())
    tx_ids = tuple(unpack(r.field()))
    r.expect_end()
    if len(prev) != HASH_LEN or len(miner) != PK_LEN or any(len(t) != HASH_LEN for t in tx_ids):
        raise EncodingError("bad header field length")
    return height, prev, miner, ts, tx_ids


@dataclass
class MinerClock:
    wait_period: int
    last_block_time: dict[PublicKey, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.wait_period <= 0:
            raise ValueError("wait_period must be positive")

    def record(self, miner_pk: PublicKey, now: int) -> None:
        self.last_block_time[miner_pk] = now


def may_mine(clock: MinerClock, miner_pk: PublicKey, now: int) -> bool:
    last = clock.last_block_time.get(miner_pk)
    return last is None or now - last >= clock.wait_period


class Ledger:
    def __init__(self, wait_period: int = 1000, court_registry=None):
        self.blocks: list[Block] = []
        self.index = ChainIndex(frozenset(court_registry) if court_registry is not None else None)
        self.positions: dict[TxId, tuple[int, int]] = {}
        self.clock = MinerClock(wait_period)

    @property
    def court_registry(self):
        return self.index.court_registry

    @property
    def tx_index(self) -> dict[TxId, tuple[int, int, Transaction]]:
        return {tid: (h, p, self.index.txs[tid]) for tid, (h, p) in self.positions.items()}

    @property
    def chain_index(self) -> dict[TxId, list[TxId]]:
        return self.index.chains

    @property
    def tip_hash(self) -> Hash256:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    def get(self, tid: TxId) -> Transaction | None:
        return self.index.get(tid)

    def __contains__(self, tid: TxId) -> bool:
        return tid in self.index

    def transactions(self):
        for block in self.blocks:
            yield from block.txs

    def _commit(self, block: Block) -> None:
        for pos, tx in enumerate(block.txs):
            self.index.add(tx)
            self.positions[tx.t_id] = (block.height, pos)
        self.blocks.append(block)
        self.clock.record(block.miner_pk, block.timestamp)

    def records(self) -> list["BlockRecord"]:
        return [BlockRecord(b.header, b.block_hash, [wire_bytes(tx) for tx in b.txs]) for b in self.blocks]


def append_block(ledger: Ledger, pending: list[Transaction], miner_pk: PublicKey, now: int) -> Block:
    """Validate ``pending`` in order and append it as one block.

    The batch is atomic: the first invalid transaction rejects all of it.
    """
    if not pending:
        raise ValueError("cannot mine an empty block")
    if not may_mine(ledger.clock, miner_pk, now):
        raise ConsensusViolation(
            f"miner {miner_pk.hex()[:12]} must wait {ledger.clock.wait_period} ms between blocks"
        )
    if ledger.blocks and now < ledger.blocks[-1].timestamp:
        raise ConsensusViolation("block timestamp precedes its predecessor")
    view = LayeredView(ledger.index, ChainIndex(ledger.court_registry))
    for tx in pending:
        validate_tx(tx, view).raise_if_rejected()
        view.add(tx)
    block = Block.create(len(ledger.blocks), ledger.tip_hash, miner_pk, now, pending)
    ledger._commit(block)
    return block


# -- verification --------------------------------------------------------------

@dataclass(frozen=True)
class BlockRecord:
    header: bytes
    block_hash: bytes
    txs: list[bytes]


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    blocks_checked: int
    height: int | None = None
    reason: str = ""
    tid: bytes | None = None

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return f"ledger valid: {self.blocks_checked} blocks"
        where = f"block {self.height}"
        if self.tid:
            where += f", tx {self.tid.hex()[:16]}"
        return f"ledger INVALID at {where}: {self.reason}"


def verify_records(records: list[BlockRecord], court_registry=None,
                   wait_period: int | None = None) -> VerificationReport:
    """Re-derive every block hash, link and transaction from raw records."""
    index = ChainIndex(frozenset(court_registry) if court_registry is not None else None)
    prev_hash, prev_ts = ZERO_HASH, 0
    last_by_miner: dict[bytes, int] = {}

    def fail(i, reason, tid=None):
        return VerificationReport(False, i, i, reason, tid)

    for i, rec in enumerate(records):
        try:
            height, prev, miner, ts, tx_ids = decode_header(rec.header)
        except EncodingError as exc:
            return fail(i, f"malformed header: {exc}")
        if digest(rec.header) != rec.block_hash:
            return fail(i, "block hash mismatch")
        if height != i:
            return fail(i, f"height {height} out of sequence")
        if prev != prev_hash:
            return fail(i, "prev_hash does not match predecessor's block hash")
        if ts < prev_ts:
            return fail(i, "timestamp precedes predecessor")
        if wait_period is not None and miner in last_by_miner and ts - last_by_miner[miner] < wait_period:
            return fail(i, "miner violated the wait period")
        if len(tx_ids) != len(rec.txs) or not tx_ids:
            return fail(i, "transaction list does not match header")
        for tid, raw in zip(tx_ids, rec.txs):
            try:
                tx = decode_tx(raw)
            except EncodingError as exc:
                return fail(i, f"malformed transaction: {exc}", tid)
            if tx.t_id != tid:
                return fail(i, "header lists a different transaction id", tid)
            result = validate_tx(tx, index)
            if not result.ok:
                return fail(i, f"{result.check}: {result.detail}", tid)
            index.add(tx)
        prev_hash, prev_ts = rec.block_hash, ts
        last_by_miner[miner] = ts
    return VerificationReport(True, len(records))


def verify_chain(ledger: Ledger) -> VerificationReport:
    return verify_records(ledger.records(), ledger.court_registry, ledger.clock.wait_period)


# -- queries -------------------------------------------------------------------

def walk_contract_chain(ledger: Ledger, sct_tid: TxId) -> list[Transaction]:
    """The contract followed by everything chained to it, in ledger order."""
    if not isinstance(ledger.get(sct_tid), ContractTx):
        raise NotFound(f"no contract {sct_tid.hex()}")
    return [ledger.index.txs[t] for t in ledger.chain_index[sct_tid]]


def find_policies(ledger: Ledger, keyword: str) -> list[PolicyAdvertTx]:
    needle = keyword.casefold()
    return [
        ad for ad in (ledger.index.txs[t] for t in ledger.index.adverts)
        if any(k.casefold() == needle for k in ad.keywords)
    ]


# -- persistence ---------------------------------------------------------------

def dump_records(records: list[BlockRecord]) -> str:
    return "".join(
        json.dumps(
            {"block_hash": r.block_hash.hex(), "header": r.header.hex(), "txs": [t.hex() for t in r.txs]},
            sort_keys=True, separators=(",", ":"),
        ) + "\n"
        for r in records
    )


def save_ledger(ledger: Ledger, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dump_records(ledger.records()))
    os.replace(tmp, path)
    return path


def read_records(path: str | Path) -> list[BlockRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(BlockRecord(
                bytes.fromhex(obj["header"]),
                bytes.fromhex(obj["block_hash"]),
                [bytes.fromhex(t) for t in obj["txs"]],
            ))
        except (ValueError, KeyError, TypeError) as exc:
            raise VerificationFailed(f"ledger INVALID at block {len(records)} (line {lineno + 1}): {exc}")
    return records


def ledger_from_records(records: list[BlockRecord], wait_period: int = 1000, court_registry=None,
                        verify: bool = True) -> Ledger:
    if verify:
        report = verify_records(records, court_registry)
        if not report.ok:
            raise VerificationFailed(report.describe())
    ledger = Ledger(wait_period, court_registry)
    for rec in records:
        height, prev, miner, ts, tx_ids = decode_header(rec.header)
        txs = tuple(decode_tx(raw) for raw in rec.txs)
        ledger._commit(Block(height, prev, miner, ts, tx_ids, rec.block_hash, txs))
    return ledger


def load_ledger(path: str | Path, wait_period: int = 1000, court_registry=None,
                verify: bool = True) -> Ledger:
    return ledger_from_records(read_records(path), wait_period, court_registry, verify)
