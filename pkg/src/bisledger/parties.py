from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .builders import counterparty_context
from .crypto import KeyPair, KeyRing, PublicKey
from .records import InsurerDB
from .transactions import Transaction, TxId


class Role(str, enum.Enum):
    USER = "user"
    INSURER = "insurer"
    COURT = "court"
    SENSOR = "sensor"
    PROVIDER = "provider"  # police, technicians and other evidence sources


# Identity-key context per role; users instead hold one key per counterparty.
_IDENTITY_CONTEXT = {
    Role.INSURER: "public",
    Role.COURT: "court",
    Role.SENSOR: "sensor",
    Role.PROVIDER: "evidence",
    Role.USER: "evidence",
}


@dataclass(frozen=True)
class AnchoredRecord:
    locator: str
    anchor_tid: TxId
    sensor_pk: PublicKey
    captured_at: int


def _always(tx: Transaction) -> bool:
    return True


@dataclass(eq=False)
class Party:
    name: str
    role: Role
    ring: KeyRing
    account_id: str = ""
    consent: Callable[[Transaction], bool] = field(default=_always, repr=False)
    db: InsurerDB | None = field(default=None, repr=False)
    contracts: dict[PublicKey, TxId] = field(default_factory=dict, repr=False)
    data_log: list[AnchoredRecord] = field(default_factory=list, repr=False)
    conditions: dict[TxId, bytes] = field(default_factory=dict, repr=False)
    tokens: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.role = Role(self.role)
        if not self.account_id:
            self.account_id = self.name
        if self.role is Role.INSURER and self.db is None:
            self.db = InsurerDB()

    @property
    def key(self) -> KeyPair:
        return self.ring.keypair(_IDENTITY_CONTEXT[self.role])

    @property
    def pk(self) -> PublicKey:
        return self.key.pk

    def key_for(self, counterparty_pk: PublicKey) -> KeyPair:
        """Key this party shows to one counterparty (fresh per counterparty)."""
        return self.ring.keypair(counterparty_context(counterparty_pk))

    def approves(self, tx: Transaction) -> bool:
        return bool(self.consent(tx))
