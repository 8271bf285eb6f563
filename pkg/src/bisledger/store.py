"""File-backed off-chain record store with on-chain hash anchoring.

Layout::

    <root>/records/<locator>   raw payload bytes
    <root>/index.jsonl         {"locator", "sensor_pk", "captured_at", "payload_hash"} per line

Insurer-side reads go through :func:`authorize_read`, which only issues a
grant for a mined, fully signed data-access transaction.
"""
from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path

from .builders import build_anchor
from .crypto import Hash256, KeyPair, PublicKey, digest
from .errors import AccessDenied, AuthorizationError, IntegrityError, NotFound
from .transactions import DataAccessTx, DataAnchorTx, TxId
from .validation import signatures_valid


@dataclass(frozen=True)
class DataRecord:
    locator: str
    sensor_pk: PublicKey
    captured_at: int
    payload: bytes


@dataclass(frozen=True)
class StoreReceipt:
    locator: str
    payload_hash: Hash256
    captured_at: int


@dataclass(frozen=True)
class ReadGrant:
    dat_tid: TxId
    requester_pk: PublicKey
    locators: frozenset[str]


class FileStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.jsonl"
        self._meta: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                if line.strip():
                    entry = json.loads(line)
                    self._meta[entry["locator"]] = entry

    def __contains__(self, locator: str) -> bool:
        return locator in self._meta

    def __len__(self) -> int:
        return len(self._meta)

    def locators(self) -> list[str]:
        return list(self._meta)

    def metadata(self, locator: str) -> tuple[PublicKey, int, Hash256]:
        entry = self._meta.get(locator)
        if entry is None:
            raise NotFound(f"no record {locator}")
        return bytes.fromhex(entry["sensor_pk"]), entry["captured_at"], bytes.fromhex(entry["payload_hash"])

    def path_of(self, locator: str) -> Path:
        if locator not in self._meta:
            raise NotFound(f"no record {locator}")
        return self.records_dir / locator

    def put(self, sensor_pk: PublicKey, payload: bytes, captured_at: int) -> StoreReceipt:
        if not payload:
            raise ValueError("payload must be non-empty")
        payload_hash = digest(payload)
        with self._lock:
            locator = secrets.token_hex(16)
            while locator in self._meta or (self.records_dir / locator).exists():
                locator = secrets.token_hex(16)
            tmp = self.records_dir / f".{locator}.tmp"
            tmp.write_bytes(payload)
            os.replace(tmp, self.records_dir / locator)
            entry = {
                "locator": locator,
                "sensor_pk": sensor_pk.hex(),
                "captured_at": captured_at,
                "payload_hash": payload_hash.hex(),
            }
            with self.index_path.open("a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._meta[locator] = entry
        return StoreReceipt(locator, payload_hash, captured_at)

    def owner_read(self, locator: str) -> bytes:
        return self.path_of(locator).read_bytes()

    def grant_read(self, grant: ReadGrant, locator: str) -> bytes:
        if locator not in grant.locators:
            raise AccessDenied("Scope", f"{locator} is not covered by the grant")
        return self.path_of(locator).read_bytes()


def put_record(store: FileStore, sensor_pk: PublicKey, payload: bytes, captured_at: int) -> StoreReceipt:
    return store.put(sensor_pk, payload, captured_at)


def anchor_record(sensor: KeyPair, net, receipt: StoreReceipt, prev_tip: TxId | None = None) -> DataAnchorTx:
    """Submit the receipt's digest on the sensor's own chain."""
    view = net.view
    if view.genesis_of(sensor.pk) is None:
        raise AuthorizationError("sensor has no genesis transaction")
    tip = prev_tip if prev_tip is not None else view.sensor_tip(sensor.pk)
    tx = build_anchor(sensor, tip, receipt.payload_hash)
    net.submit(tx)
    return tx


def fetch_and_verify(store: FileStore, locator: str, anchored_hash: Hash256,
                     grant: ReadGrant | None = None) -> bytes:
    payload = store.grant_read(grant, locator) if grant is not None else store.owner_read(locator)
    actual = digest(payload)
    if actual != anchored_hash:
        raise IntegrityError(locator, anchored_hash, actual)
    return payload


def authorize_read(store: FileStore, dat: DataAccessTx, ledger, requester_pk: PublicKey,
                   locators) -> ReadGrant:
    recorded = ledger.get(dat.t_id)
    if recorded is None or recorded != dat:
        raise AccessDenied("NotAnchored", "data access transaction is not on the ledger")
    if not signatures_valid(dat):
        raise AccessDenied("NotAnchored", "data access transaction is not fully signed")
    if requester_pk != dat.insurance_pk:
        raise AccessDenied("Identity", "requester is not the authorised insurer")
    locators = frozenset(locators)
    for loc in locators:
        sensor_pk, captured_at, _ = store.metadata(loc)
        if not dat.scope.covers(sensor_pk, captured_at):
            raise AccessDenied("Scope", f"{loc} lies outside the granted scope")
    return ReadGrant(dat.t_id, requester_pk, locators)
