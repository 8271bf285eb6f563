"""Insurer customer database and the internal credit account book."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import PublicKey
from .errors import InsufficientFunds, NotFound
from .transactions import TxId


@dataclass
class CustomerRecord:
    policy: str
    condition: bytes
    sct_tid: TxId
    user_pk: PublicKey
    sensor_pks: list[PublicKey] = field(default_factory=list)
    payments: list[tuple[int, int]] = field(default_factory=list)
    term: tuple[int, int] = (0, 0)

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "condition": self.condition.hex(),
            "payments": [list(p) for p in self.payments],
            "sct_tid": self.sct_tid.hex(),
            "sensor_pks": [pk.hex() for pk in self.sensor_pks],
            "user_pk": self.user_pk.hex(),
            "term": list(self.term),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CustomerRecord":
        return cls(
            policy=obj["policy"],
            condition=bytes.fromhex(obj["condition"]),
            sct_tid=bytes.fromhex(obj["sct_tid"]),
            user_pk=bytes.fromhex(obj["user_pk"]),
            sensor_pks=[bytes.fromhex(pk) for pk in obj["sensor_pks"]],
            payments=[tuple(p) for p in obj["payments"]],
            term=tuple(obj["term"]),
        )


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class InsurerDB:
    """Customer records keyed by the user's contract public key."""

    def __init__(self):
        self.records: dict[PublicKey, CustomerRecord] = {}

    def add(self, record: CustomerRecord) -> None:
        self.records[record.user_pk] = record

    def lookup(self, user_pk: PublicKey) -> CustomerRecord | None:
        return self.records.get(user_pk)

    def by_sct(self, sct_tid: TxId) -> CustomerRecord:
        for rec in self.records.values():
            if rec.sct_tid == sct_tid:
                return rec
        raise NotFound(f"no customer record for contract {sct_tid.hex()}")

    def __len__(self) -> int:
        return len(self.records)

    def save(self, path: str | Path) -> None:
        data = [r.to_json() for r in self.records.values()]
        _atomic_write(Path(path), json.dumps(data, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "InsurerDB":
        db = cls()
        for obj in json.loads(Path(path).read_text()):
            db.add(CustomerRecord.from_json(obj))
        return db


class AccountBook:
    """Integer credit balances; transfers conserve the total."""

    def __init__(self, balances: dict[str, int] | None = None):
        self.balances: dict[str, int] = {}
        for account, amount in (balances or {}).items():
            self.open(account, amount)

    def open(self, account: str, amount: int = 0) -> None:
        if amount < 0:
            raise ValueError("opening balance must be non-negative")
        self.balances.setdefault(account, 0)
        self.balances[account] += amount

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)

    def transfer(self, src: str, dst: str, amount: int) -> None:
        if amount < 0:
            raise ValueError("amount must be non-negative")
        if self.balance(src) < amount:
            raise InsufficientFunds(f"{src} holds {self.balance(src)}, needs {amount}")
        self.balances[src] = self.balance(src) - amount
        self.balances[dst] = self.balance(dst) + amount

    def total(self) -> int:
        return sum(self.balances.values())

    def save(self, path: str | Path) -> None:
        _atomic_write(Path(path), json.dumps(self.balances, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "AccountBook":
        return cls(json.loads(Path(path).read_text()))
