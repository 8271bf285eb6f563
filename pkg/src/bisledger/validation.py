"""Structural, signature and chain-link validation of transactions."""
from __future__ import annotations

from dataclasses import dataclass

from .crypto import digest, verify
from .errors import REJECTIONS, EncodingError, Rejected
from .transactions import (
    MAX_KEYWORD_BYTES,
    ClaimRequestTx,
    ContractTx,
    CourtDecisionTx,
    DataAccessTx,
    DataAnchorTx,
    DecisionBody,
    DecisionTx,
    PIHToken,
    PolicyAdvertTx,
    SensorGenesisTx,
    Transaction,
    Verdict,
    canonical_bytes,
)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    check: str | None = None
    detail: str = ""
    tid: bytes | None = None

    def __bool__(self) -> bool:
        return self.ok

    def error(self) -> Rejected:
        return REJECTIONS.get(self.check, Rejected)(self.detail, self.tid)

    def raise_if_rejected(self) -> None:
        if not self.ok:
            raise self.error()


ACCEPT = ValidationResult(True)


class _Reject(Exception):
    def __init__(self, check: str, detail: str):
        self.check = check
        self.detail = detail


def validate_tx(tx: Transaction, view) -> ValidationResult:
    """Run the checks in order and report the first one that fails.

    Order: id recomputation, single signatures, 2-of-2 completeness,
    duplicate and link resolution, then kind-specific invariants.
    """
    try:
        _check(tx, view)
    except _Reject as r:
        return ValidationResult(False, r.check, r.detail, getattr(tx, "t_id", None))
    return ACCEPT


def _check(tx: Transaction, view) -> None:
    try:
        body = canonical_bytes(tx)
    except (EncodingError, AttributeError, TypeError, KeyError) as exc:
        raise _Reject("Malformed", f"cannot encode: {exc}")
    if digest(body) != tx.t_id:
        raise _Reject("TidMismatch", "stored t_id differs from digest of body")

    if tx.multisig:
        keys = [getattr(tx, pk) for _, pk in tx.SIGNERS]
        if len(set(keys)) != len(keys):
            raise _Reject("MultisigIncomplete", "co-signers must use distinct keys")
        valid = sum(verify(getattr(tx, pk), body, getattr(tx, sig)) for sig, pk in tx.SIGNERS)
        if valid < len(tx.SIGNERS):
            raise _Reject("MultisigIncomplete", f"{valid} of {len(tx.SIGNERS)} signatures valid")
    else:
        ((sig, pk),) = tx.SIGNERS
        if not verify(getattr(tx, pk), body, getattr(tx, sig)):
            raise _Reject("BadSignature", f"{sig} does not verify under {pk}")

    if tx.t_id in view:
        raise _Reject("Duplicate", "t_id already recorded")
    _LINK_CHECKS.get(type(tx), _no_links)(tx, view)
    _INVARIANTS.get(type(tx), _no_links)(tx, view)


# -- step 4: links -------------------------------------------------------------

def _no_links(tx, view) -> None:
    pass


def _contract_for(tx, view):
    parent = view.get(tx.p_t_id)
    if parent is None:
        raise _Reject("ChainLinkError", "p_t_id does not resolve")
    root = view.contract_of(tx.p_t_id)
    if root is None:
        raise _Reject("ChainLinkError", "p_t_id is not in a contract chain")
    return view.get(root)


def _same_parties(tx, sct: ContractTx) -> None:
    if tx.user_pk != sct.user_pk or tx.insurance_pk != sct.insurance_pk:
        raise _Reject("ChainLinkError", "parties differ from the contract's")


def _genesis_links(tx: SensorGenesisTx, view) -> None:
    sct = view.get(tx.sct_ref)
    if not isinstance(sct, ContractTx):
        raise _Reject("ChainLinkError", "sct_ref does not name a contract")
    _same_parties(tx, sct)
    if view.genesis_of(tx.sensor_pk) is not None:
        raise _Reject("Duplicate", "sensor already has a genesis transaction")


def _anchor_links(tx: DataAnchorTx, view) -> None:
    if view.get(tx.p_t_id) is None:
        raise _Reject("ChainLinkError", "p_t_id does not resolve")
    if view.genesis_of(tx.sensor_pk) is not None:
        if view.sensor_tip(tx.sensor_pk) != tx.p_t_id:
            raise _Reject("ChainLinkError", "sensor anchor must extend the sensor's chain tip")
    elif view.contract_of(tx.p_t_id) is None:
        # third-party evidence must hang off a contract chain
        raise _Reject("ChainLinkError", "evidence anchor is not chained to a contract")


def _claim_links(tx: ClaimRequestTx, view) -> None:
    _same_parties(tx, _contract_for(tx, view))


def _access_links(tx: DataAccessTx, view) -> None:
    if not isinstance(view.get(tx.p_t_id), ClaimRequestTx):
        raise _Reject("ChainLinkError", "data access must reference a claim request")
    _same_parties(tx, _contract_for(tx, view))


def _decision_links(tx: DecisionTx, view) -> None:
    _same_parties(tx, _contract_for(tx, view))


def _court_links(tx: CourtDecisionTx, view) -> None:
    _contract_for(tx, view)


def _pih_links(tx: PIHToken, view) -> None:
    last = tx.token_content.last_tx_id
    root = view.contract_of(last) if view.get(last) is not None else None
    if root is None:
        raise _Reject("ChainLinkError", "last_tx_id is not in a contract chain")
    sct = view.get(root)
    if tx.insurance_pk != sct.insurance_pk:
        raise _Reject("AuthorizationError", "token issuer is not the contract's insurer")
    if tx.user_pk != sct.user_pk:
        raise _Reject("ChainLinkError", "token user differs from the contract's")


_LINK_CHECKS = {
    SensorGenesisTx: _genesis_links,
    DataAnchorTx: _anchor_links,
    ClaimRequestTx: _claim_links,
    DataAccessTx: _access_links,
    DecisionTx: _decision_links,
    CourtDecisionTx: _court_links,
    PIHToken: _pih_links,
}


# -- step 5: kind-specific invariants -----------------------------------------

def check_decision(decision: DecisionBody) -> None:
    if decision.verdict is Verdict.REJECTED and decision.amount != 0:
        raise _Reject("InvariantViolation", "a rejected decision must carry amount 0")


def _decision_invariants(tx: DecisionTx, view) -> None:
    check_decision(tx.decision)


def _court_invariants(tx: CourtDecisionTx, view) -> None:
    registry = view.court_registry
    if registry is not None and tx.court_pk not in registry:
        raise _Reject("AuthorizationError", "court key is not in the registry")
    check_decision(tx.decision)


def _access_invariants(tx: DataAccessTx, view) -> None:
    if tx.scope.start > tx.scope.end:
        raise _Reject("InvariantViolation", "scope time range is empty")
    registered = set(view.sensors_of(view.contract_of(tx.p_t_id)))
    outside = [s for s in tx.scope.sensors if s not in registered]
    if outside:
        raise _Reject("ScopeError", f"{len(outside)} sensor(s) not registered under the contract")


def _advert_invariants(tx: PolicyAdvertTx, view) -> None:
    if not tx.keywords:
        raise _Reject("InvariantViolation", "advert needs at least one keyword")
    for kw in tx.keywords:
        if not kw or len(kw.encode("utf-8")) > MAX_KEYWORD_BYTES:
            raise _Reject("InvariantViolation", f"keyword {kw!r} must be 1..{MAX_KEYWORD_BYTES} bytes")


def _pih_invariants(tx: PIHToken, view) -> None:
    if tx.token_content.start > tx.token_content.end:
        raise _Reject("InvariantViolation", "token duration is empty")


_INVARIANTS = {
    DecisionTx: _decision_invariants,
    CourtDecisionTx: _court_invariants,
    DataAccessTx: _access_invariants,
    PolicyAdvertTx: _advert_invariants,
    PIHToken: _pih_invariants,
}


def signatures_valid(tx: Transaction) -> bool:
    """Every signature slot verifies over the canonical body (ids not checked)."""
    body = canonical_bytes(tx)
    return all(verify(getattr(tx, pk), body, getattr(tx, sig)) for sig, pk in tx.SIGNERS)
