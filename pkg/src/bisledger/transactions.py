"""Transaction kinds, canonical encoding and transaction identifiers.

Each kind is a frozen dataclass. ``BODY`` lists the hashed fields in wire
order; ``SIGNERS`` pairs every signature field with the key that must have
produced it. The transaction id is the digest of the canonical body, which
leaves out the id itself and all signatures so co-signers sign one message.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any, ClassVar

from .codec import Reader, pack, read_u64, u64, unpack
from .crypto import HASH_LEN, PK_LEN, Hash256, KeyPair, PublicKey, digest
from .errors import EncodingError

INLINE_THRESHOLD = 1024
MAX_KEYWORD_BYTES = 64

TxId = bytes


# -- field value types -------------------------------------------------------

@dataclass(frozen=True)
class ConditionField:
    """Either the payload itself (small) or only its digest (large)."""

    inline: bytes | None = None
    content_hash: Hash256 | None = None

    @classmethod
    def from_payload(cls, payload: bytes, threshold: int = INLINE_THRESHOLD) -> "ConditionField":
        if len(payload) <= threshold:
            return cls(inline=bytes(payload))
        return cls(content_hash=digest(payload))

    @property
    def mode(self) -> str:
        return "inline" if self.inline is not None else "hash"

    @property
    def hash(self) -> Hash256:
        return digest(self.inline) if self.inline is not None else self.content_hash

    def matches(self, payload: bytes) -> bool:
        return self.hash == digest(payload)

    def encode(self) -> bytes:
        if self.inline is not None:
            return b"\x00" + self.inline
        return b"\x01" + self.content_hash

    @classmethod
    def decode(cls, data: bytes) -> "ConditionField":
        if not data:
            raise EncodingError("empty condition field")
        if data[0] == 0:
            if len(data) - 1 > INLINE_THRESHOLD:
                raise EncodingError("inline condition above threshold")
            return cls(inline=data[1:])
        if data[0] == 1 and len(data) == 1 + HASH_LEN:
            return cls(content_hash=data[1:])
        raise EncodingError("bad condition field")

    def to_json(self) -> dict:
        if self.inline is not None:
            try:
                return {"mode": "inline", "text": self.inline.decode("utf-8")}
            except UnicodeDecodeError:
                return {"mode": "inline", "hex": self.inline.hex()}
        return {"mode": "hash", "hash": self.content_hash.hex()}


class Verdict(str, enum.Enum):
    APPROVED = "Approved"
    REJECTED = "Rejected"


_VERDICT_CODE = {Verdict.APPROVED: 1, Verdict.REJECTED: 2}
_CODE_VERDICT = {v: k for k, v in _VERDICT_CODE.items()}


@dataclass(frozen=True)
class DecisionBody:
    verdict: Verdict
    amount: int = 0
    rationale_hash: Hash256 = bytes(HASH_LEN)

    def encode(self) -> bytes:
        return pack([bytes([_VERDICT_CODE[self.verdict]]), u64(self.amount), self.rationale_hash])

    @classmethod
    def decode(cls, data: bytes) -> "DecisionBody":
        parts = unpack(data)
        if len(parts) != 3 or len(parts[0]) != 1 or parts[0][0] not in _CODE_VERDICT:
            raise EncodingError("bad decision body")
        return cls(_CODE_VERDICT[parts[0][0]], read_u64(parts[1]), _exact(parts[2], HASH_LEN))

    def to_json(self) -> dict:
        return {"verdict": self.verdict.value, "amount": self.amount,
                "rationale_hash": self.rationale_hash.hex()}


@dataclass(frozen=True)
class Scope:
    """Sensors plus an inclusive capture-time window."""

    sensors: tuple[PublicKey, ...]
    start: int = 0
    end: int = 2**63 - 1

    def covers(self, sensor_pk: PublicKey, captured_at: int) -> bool:
        return sensor_pk in self.sensors and self.start <= captured_at <= self.end

    def encode(self) -> bytes:
        return pack([pack(self.sensors), u64(self.start), u64(self.end)])

    @classmethod
    def decode(cls, data: bytes) -> "Scope":
        parts = unpack(data)
        if len(parts) != 3:
            raise EncodingError("bad scope")
        sensors = tuple(_exact(p, PK_LEN) for p in unpack(parts[0]))
        return cls(sensors, read_u64(parts[1]), read_u64(parts[2]))

    def to_json(self) -> dict:
        return {"sensors": [s.hex() for s in self.sensors], "start": self.start, "end": self.end}


@dataclass(frozen=True)
class TokenContent:
    policy_type: str
    start: int
    end: int
    last_tx_id: TxId

    def encode(self) -> bytes:
        return pack([self.policy_type.encode("utf-8"), u64(self.start), u64(self.end), self.last_tx_id])

    @classmethod
    def decode(cls, data: bytes) -> "TokenContent":
        parts = unpack(data)
        if len(parts) != 4:
            raise EncodingError("bad token content")
        try:
            policy = parts[0].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError("policy type is not utf-8") from exc
        return cls(policy, read_u64(parts[1]), read_u64(parts[2]), _exact(parts[3], HASH_LEN))

    def to_json(self) -> dict:
        return {"policy_type": self.policy_type, "start": self.start, "end": self.end,
                "last_tx_id": self.last_tx_id.hex()}


# -- field codecs --------------------------------------------------------------

def _exact(data: bytes, n: int) -> bytes:
    if len(data) != n:
        raise EncodingError(f"expected {n} bytes, got {len(data)}")
    return data


class _Codec:
    def __init__(self, encode, decode, to_json):
        self.encode = encode
        self.decode = decode
        self.to_json = to_json


def _decode_keywords(data: bytes) -> tuple[str, ...]:
    try:
        return tuple(k.decode("utf-8") for k in unpack(data))
    except UnicodeDecodeError as exc:
        raise EncodingError("keyword is not utf-8") from exc


KEY = _Codec(lambda v: v, lambda b: _exact(b, PK_LEN), lambda v: v.hex())
HASH = _Codec(lambda v: v, lambda b: _exact(b, HASH_LEN), lambda v: v.hex())
OPT_HASH = _Codec(
    lambda v: v or b"",
    lambda b: None if not b else _exact(b, HASH_LEN),
    lambda v: v.hex() if v else None,
)
COND = _Codec(lambda v: v.encode(), ConditionField.decode, lambda v: v.to_json())
KEYWORDS = _Codec(
    lambda v: pack(k.encode("utf-8") for k in v),
    _decode_keywords,
    list,
)
SCOPE = _Codec(lambda v: v.encode(), Scope.decode, lambda v: v.to_json())
DECISION = _Codec(lambda v: v.encode(), DecisionBody.decode, lambda v: v.to_json())
CONTENT = _Codec(lambda v: v.encode(), TokenContent.decode, lambda v: v.to_json())


# -- transaction kinds ---------------------------------------------------------

@dataclass(frozen=True, kw_only=True)
class Transaction:
    KIND: ClassVar[int] = 0
    NAME: ClassVar[str] = ""
    BODY: ClassVar[tuple[tuple[str, _Codec], ...]] = ()
    SIGNERS: ClassVar[tuple[tuple[str, str], ...]] = ()
    LINK: ClassVar[str | None] = None

    t_id: TxId = b""

    @property
    def multisig(self) -> bool:
        return len(self.SIGNERS) > 1

    @property
    def parent(self) -> TxId | None:
        return getattr(self, self.LINK) if self.LINK else None

    def signer_keys(self) -> dict[str, PublicKey]:
        return {sig: getattr(self, pk) for sig, pk in self.SIGNERS}


@dataclass(frozen=True, kw_only=True)
class PolicyAdvertTx(Transaction):
    KIND: ClassVar[int] = 1
    NAME: ClassVar[str] = "ADVERT"
    BODY: ClassVar = (("insurance_pk", KEY), ("keywords", KEYWORDS), ("details_hash", HASH))
    SIGNERS: ClassVar = (("sign", "insurance_pk"),)

    insurance_pk: PublicKey
    keywords: tuple[str, ...]
    details_hash: Hash256
    sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class NegotiationTx(Transaction):
    KIND: ClassVar[int] = 2
    NAME: ClassVar[str] = "NT"
    BODY: ClassVar = (("insurance_pk", KEY), ("condition", COND), ("pk", KEY))
    SIGNERS: ClassVar = (("sign", "pk"),)

    insurance_pk: PublicKey
    condition: ConditionField
    pk: PublicKey
    sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class ContractTx(Transaction):
    KIND: ClassVar[int] = 3
    NAME: ClassVar[str] = "SCT"
    BODY: ClassVar = (("user_pk", KEY), ("insurance_pk", KEY), ("contract", COND))
    SIGNERS: ClassVar = (("user_sign", "user_pk"), ("insurance_sign", "insurance_pk"))

    user_pk: PublicKey
    insurance_pk: PublicKey
    contract: ConditionField
    user_sign: bytes = b""
    insurance_sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class SensorGenesisTx(Transaction):
    KIND: ClassVar[int] = 4
    NAME: ClassVar[str] = "GENESIS"
    BODY: ClassVar = (("sct_ref", HASH), ("sensor_pk", KEY), ("user_pk", KEY), ("insurance_pk", KEY))
    SIGNERS: ClassVar = (("user_sign", "user_pk"), ("insurance_sign", "insurance_pk"))
    LINK: ClassVar = "sct_ref"

    sct_ref: TxId
    sensor_pk: PublicKey
    user_pk: PublicKey
    insurance_pk: PublicKey
    user_sign: bytes = b""
    insurance_sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class DataAnchorTx(Transaction):
    """Digest of an off-chain record, signed by the sensor or evidence provider."""

    KIND: ClassVar[int] = 5
    NAME: ClassVar[str] = "ANCHOR"
    BODY: ClassVar = (("p_t_id", HASH), ("data_hash", HASH), ("sensor_pk", KEY))
    SIGNERS: ClassVar = (("sign", "sensor_pk"),)
    LINK: ClassVar = "p_t_id"

    p_t_id: TxId
    data_hash: Hash256
    sensor_pk: PublicKey
    sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class ClaimRequestTx(Transaction):
    KIND: ClassVar[int] = 6
    NAME: ClassVar[str] = "CR"
    BODY: ClassVar = (
        ("p_t_id", HASH), ("claim_request", COND), ("data_hash", OPT_HASH),
        ("insurance_pk", KEY), ("user_pk", KEY),
    )
    SIGNERS: ClassVar = (("sign", "user_pk"),)
    LINK: ClassVar = "p_t_id"

    p_t_id: TxId
    claim_request: ConditionField
    data_hash: Hash256 | None = None
    insurance_pk: PublicKey
    user_pk: PublicKey
    sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class DataAccessTx(Transaction):
    KIND: ClassVar[int] = 7
    NAME: ClassVar[str] = "DAT"
    BODY: ClassVar = (
        ("p_t_id", HASH), ("scope", SCOPE), ("exchanged_data_hash", OPT_HASH),
        ("user_pk", KEY), ("insurance_pk", KEY),
    )
    SIGNERS: ClassVar = (("user_sign", "user_pk"), ("insurance_sign", "insurance_pk"))
    LINK: ClassVar = "p_t_id"

    p_t_id: TxId
    scope: Scope
    exchanged_data_hash: Hash256 | None = None
    user_pk: PublicKey
    insurance_pk: PublicKey
    user_sign: bytes = b""
    insurance_sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class DecisionTx(Transaction):
    KIND: ClassVar[int] = 8
    NAME: ClassVar[str] = "DT"
    BODY: ClassVar = (("p_t_id", HASH), ("decision", DECISION), ("user_pk", KEY), ("insurance_pk", KEY))
    SIGNERS: ClassVar = (("user_sign", "user_pk"), ("insurance_sign", "insurance_pk"))
    LINK: ClassVar = "p_t_id"

    p_t_id: TxId
    decision: DecisionBody
    user_pk: PublicKey
    insurance_pk: PublicKey
    user_sign: bytes = b""
    insurance_sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class CourtDecisionTx(Transaction):
    """Court ruling on a decision the user refused to countersign.

    ``disputed_decision`` is the id of the insurer's unmined draft; ``p_t_id``
    is the latest mined transaction of the claim.
    """

    KIND: ClassVar[int] = 9
    NAME: ClassVar[str] = "COURT"
    BODY: ClassVar = (
        ("p_t_id", HASH), ("disputed_decision", HASH), ("decision", DECISION), ("court_pk", KEY),
    )
    SIGNERS: ClassVar = (("court_sign", "court_pk"),)
    LINK: ClassVar = "p_t_id"

    p_t_id: TxId
    disputed_decision: TxId
    decision: DecisionBody
    court_pk: PublicKey
    court_sign: bytes = b""


@dataclass(frozen=True, kw_only=True)
class PIHToken(Transaction):
    KIND: ClassVar[int] = 10
    NAME: ClassVar[str] = "PIH"
    BODY: ClassVar = (
        ("token_content", CONTENT), ("metadata", COND), ("user_pk", KEY), ("insurance_pk", KEY),
    )
    SIGNERS: ClassVar = (("insurance_sign", "insurance_pk"),)

    token_content: TokenContent
    metadata: ConditionField
    user_pk: PublicKey
    insurance_pk: PublicKey
    insurance_sign: bytes = b""

    @property
    def token_id(self) -> TxId:
        return self.t_id


KINDS: dict[int, type[Transaction]] = {
    cls.KIND: cls
    for cls in (
        PolicyAdvertTx, NegotiationTx, ContractTx, SensorGenesisTx, DataAnchorTx,
        ClaimRequestTx, DataAccessTx, DecisionTx, CourtDecisionTx, PIHToken,
    )
}
KIND_NAMES = {cls.NAME: cls for cls in KINDS.values()}


# -- encoding ------------------------------------------------------------------

def canonical_bytes(tx: Transaction) -> bytes:
    """Kind tag followed by the length-prefixed body fields."""
    return bytes([tx.KIND]) + pack(c.encode(getattr(tx, name)) for name, c in tx.BODY)


def compute_tid(tx: Transaction) -> TxId:
    return digest(canonical_bytes(tx))


def seal(tx: Transaction) -> Transaction:
    return replace(tx, t_id=compute_tid(tx))


def sign_as(tx: Transaction, sig_field: str, key: KeyPair) -> Transaction:
    """Return ``tx`` sealed and carrying ``key``'s signature in ``sig_field``."""
    pk_field = dict(tx.SIGNERS)[sig_field]
    if getattr(tx, pk_field) != key.pk:
        raise ValueError(f"{sig_field} must be produced by {pk_field}")
    body = canonical_bytes(tx)
    return replace(tx, t_id=digest(body), **{sig_field: key.sign(body)})


def wire_bytes(tx: Transaction) -> bytes:
    """Full storage encoding: tag, id, canonical body, then signatures."""
    sigs = [getattr(tx, sig) for sig, _ in tx.SIGNERS]
    return bytes([tx.KIND]) + pack([tx.t_id, canonical_bytes(tx), *sigs])


def decode_tx(data: bytes) -> Transaction:
    if not data:
        raise EncodingError("empty transaction")
    cls = KINDS.get(data[0])
    if cls is None:
        raise EncodingError(f"unknown kind tag {data[0]}")
    parts = unpack(data[1:])
    if len(parts) != 2 + len(cls.SIGNERS):
        raise EncodingError(f"{cls.NAME}: wrong field count")
    t_id, body = parts[0], parts[1]
    if not body or body[0] != cls.KIND:
        raise EncodingError("body kind tag does not match")
    r = Reader(body[1:])
    values: dict[str, Any] = {}
    for name, c in cls.BODY:
        values[name] = c.decode(r.field())
    r.expect_end()
    for (sig, _), raw in zip(cls.SIGNERS, parts[2:]):
        values[sig] = raw
    return cls(t_id=t_id, **values)


def to_json(tx: Transaction) -> dict:
    """Readable projection for display. Never used for hashing."""
    out: dict[str, Any] = {"kind": tx.NAME, "t_id": tx.t_id.hex()}
    for name, c in tx.BODY:
        out[name] = c.to_json(getattr(tx, name))
    for sig, _ in tx.SIGNERS:
        out[sig] = getattr(tx, sig).hex()
    return out


def tx_size(tx: Transaction) -> int:
    return len(wire_bytes(tx))

