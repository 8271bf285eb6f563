"""Constructors for every transaction kind.

A signer argument may be a ``KeyPair`` (signs), a ``KeyRing`` (the matching
key is looked up) or bare public-key bytes (the slot is filled but left
unsigned, which makes a multisig build fail with ``MultisigIncomplete``).
"""
from __future__ import annotations

from typing import Union

from .crypto import KeyPair, KeyRing, PublicKey, digest
from .errors import (
    AccessDenied,
    AuthorizationError,
    ChainLinkError,
    InvariantViolation,
    MultisigIncomplete,
    NotFound,
    ScopeError,
)
from .transactions import (
    ClaimRequestTx,
    ConditionField,
    ContractTx,
    CourtDecisionTx,
    DataAccessTx,
    DataAnchorTx,
    DecisionBody,
    DecisionTx,
    NegotiationTx,
    PIHToken,
    PolicyAdvertTx,
    Scope,
    SensorGenesisTx,
    TokenContent,
    Transaction,
    TxId,
    Verdict,
    seal,
    sign_as,
)

Signer = Union[KeyPair, KeyRing, bytes]


def counterparty_context(pk: PublicKey) -> str:
    return "peer:" + pk.hex()


def _pk(signer: Signer, context: str | None = None) -> PublicKey:
    if isinstance(signer, KeyPair):
        return signer.pk
    if isinstance(signer, KeyRing):
        if context is None:
            raise ValueError("a key ring needs a counterparty context")
        return signer.keypair(context).pk
    return bytes(signer)


def _resolve(signer: Signer, pk: PublicKey) -> KeyPair | None:
    if isinstance(signer, KeyPair):
        return signer if signer.pk == pk else None
    if isinstance(signer, KeyRing):
        return signer.secret_for(pk)
    return None


def finish(tx: Transaction, signers: dict[str, Signer]) -> Transaction:
    """Seal ``tx`` and apply every available signature.

    Raises ``MultisigIncomplete`` when a 2-of-2 kind is left short.
    """
    tx = seal(tx)
    missing = []
    for sig_field, pk_field in tx.SIGNERS:
        key = _resolve(signers.get(sig_field, b""), getattr(tx, pk_field))
        if key is None:
            missing.append(sig_field)
        else:
            tx = sign_as(tx, sig_field, key)
    if missing and tx.multisig:
        raise MultisigIncomplete(f"missing {', '.join(missing)}", tx.t_id)
    return tx


def build_advert(insurer: Signer, keywords, details: bytes) -> PolicyAdvertTx:
    pk = _pk(insurer, "public")
    tx = PolicyAdvertTx(insurance_pk=pk, keywords=tuple(keywords), details_hash=digest(details))
    return finish(tx, {"sign": insurer})


def draft_negotiation(proposer_pk: PublicKey, insurance_pk: PublicKey, condition: bytes) -> NegotiationTx:
    if not condition:
        raise InvariantViolation("negotiation condition must be non-empty")
    return seal(NegotiationTx(
        insurance_pk=insurance_pk,
        condition=ConditionField.from_payload(condition),
        pk=proposer_pk,
    ))


def build_negotiation(proposer: Signer, insurance_pk: PublicKey, condition: bytes) -> NegotiationTx:
    """Signed offer. A user ring signs with its key dedicated to this insurer."""
    pk = _pk(proposer, counterparty_context(insurance_pk))
    return finish(draft_negotiation(pk, insurance_pk, condition), {"sign": proposer})


def build_contract(user: Signer, insurer: Signer, terms: bytes) -> ContractTx:
    insurance_pk = _pk(insurer, "public")
    user_pk = _pk(user, counterparty_context(insurance_pk))
    tx = ContractTx(user_pk=user_pk, insurance_pk=insurance_pk, contract=ConditionField.from_payload(terms))
    return finish(tx, {"user_sign": user, "insurance_sign": insurer})


def build_sensor_genesis(user: Signer, insurer: Signer, sct: ContractTx, sensor_pk: PublicKey) -> SensorGenesisTx:
    tx = SensorGenesisTx(sct_ref=sct.t_id, sensor_pk=sensor_pk, user_pk=sct.user_pk, insurance_pk=sct.insurance_pk)
    return finish(tx, {"user_sign": user, "insurance_sign": insurer})


def build_anchor(sensor: Signer, p_t_id: TxId, data_hash: bytes) -> DataAnchorTx:
    pk = _pk(sensor, "sensor")
    return finish(DataAnchorTx(p_t_id=p_t_id, data_hash=data_hash, sensor_pk=pk), {"sign": sensor})


def _contract_of(view, tid: TxId) -> ContractTx:
    if view.get(tid) is None:
        raise ChainLinkError("referenced transaction is not recorded", tid)
    root = view.contract_of(tid)
    if root is None:
        raise ChainLinkError("referenced transaction is not in a contract chain", tid)
    return view.get(root)


def build_claim(user: Signer, view, tip: TxId, claim_details: bytes,
                shared_data: bytes | None = None) -> ClaimRequestTx:
    sct = _contract_of(view, tip)
    owns = user == sct.user_pk if isinstance(user, bytes) else _resolve(user, sct.user_pk) is not None
    if not owns:
        raise ChainLinkError("tip belongs to another user's contract", tip)
    tx = ClaimRequestTx(
        p_t_id=tip,
        claim_request=ConditionField.from_payload(claim_details),
        data_hash=digest(shared_data) if shared_data is not None else None,
        insurance_pk=sct.insurance_pk,
        user_pk=sct.user_pk,
    )
    return finish(tx, {"sign": user})


def draft_access(view, claim_tid: TxId, scope: Scope, exchanged_data: bytes | None = None) -> DataAccessTx:
    claim = view.get(claim_tid)
    if not isinstance(claim, ClaimRequestTx):
        raise ChainLinkError("data access must reference a claim request", claim_tid)
    sct = _contract_of(view, claim_tid)
    registered = set(view.sensors_of(sct.t_id))
    if any(s not in registered for s in scope.sensors):
        raise ScopeError("scope names a sensor not registered under the contract", claim_tid)
    return seal(DataAccessTx(
        p_t_id=claim_tid,
        scope=scope,
        exchanged_data_hash=digest(exchanged_data) if exchanged_data is not None else None,
        user_pk=sct.user_pk,
        insurance_pk=sct.insurance_pk,
    ))


def build_access(insurer: Signer, user: Signer, view, claim_tid: TxId, scope: Scope,
                 exchanged_data: bytes | None = None, user_consents: bool = True) -> DataAccessTx:
    """Insurer drafts, user countersigns. A declining user yields no transaction."""
    draft = draft_access(view, claim_tid, scope, exchanged_data)
    if not user_consents:
        raise AccessDenied("Declined", "user refused to countersign the access request")
    return finish(draft, {"insurance_sign": insurer, "user_sign": user})


def draft_decision(view, case_tip: TxId, verdict: Verdict, amount: int,
                   rationale: bytes = b"") -> DecisionTx:
    verdict = Verdict(verdict)
    if verdict is Verdict.REJECTED and amount != 0:
        raise InvariantViolation("a rejected decision must carry amount 0")
    if amount < 0:
        raise InvariantViolation("amount must be non-negative")
    sct = _contract_of(view, case_tip)
    return seal(DecisionTx(
        p_t_id=case_tip,
        decision=DecisionBody(verdict, amount, digest(rationale)),
        user_pk=sct.user_pk,
        insurance_pk=sct.insurance_pk,
    ))


def build_decision(insurer: Signer, user: Signer, view, case_tip: TxId, verdict: Verdict,
                   amount: int, rationale: bytes = b"") -> DecisionTx:
    draft = draft_decision(view, case_tip, verdict, amount, rationale)
    return finish(draft, {"insurance_sign": insurer, "user_sign": user})


def build_court_decision(court: Signer, case_tip: TxId, disputed: TxId, verdict: Verdict,
                         amount: int, rationale: bytes = b"") -> CourtDecisionTx:
    verdict = Verdict(verdict)
    if verdict is Verdict.REJECTED and amount != 0:
        raise InvariantViolation("a rejected decision must carry amount 0")
    tx = CourtDecisionTx(
        p_t_id=case_tip,
        disputed_decision=disputed,
        decision=DecisionBody(verdict, amount, digest(rationale)),
        court_pk=_pk(court, "court"),
    )
    return finish(tx, {"court_sign": court})


def build_history_token(insurer: Signer, view, sct_tid: TxId, policy_type: str,
                        duration: tuple[int, int], metadata: bytes = b"") -> PIHToken:
    sct = view.get(sct_tid)
    if not isinstance(sct, ContractTx):
        raise NotFound(f"no contract {sct_tid.hex()}")
    if _resolve(insurer, sct.insurance_pk) is None:
        raise AuthorizationError("only the contract's insurer may issue its history token", sct_tid)
    last = view.chain(sct_tid)[-1]
    tx = PIHToken(
        token_content=TokenContent(policy_type, duration[0], duration[1], last),
        metadata=ConditionField.from_payload(metadata),
        user_pk=sct.user_pk,
        insurance_pk=sct.insurance_pk,
    )
    return finish(tx, {"insurance_sign": insurer})
