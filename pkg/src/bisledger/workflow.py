"""Insurance lifecycle: negotiation, contract, claims, settlement, disputes, history tokens.

All operations take the :class:`~bisledger.netsim.Network` first; every
transaction goes through ``net.submit`` and ``net.confirm`` so the ledger
stays the single writer.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .builders import (
    build_advert,
    build_court_decision,
    build_history_token,
    build_negotiation,
    build_anchor,
    build_claim,
    draft_access,
    draft_decision,
    finish,
)
from .chain import verify_chain, walk_contract_chain
from .crypto import digest, verify
from .errors import (
    AuthorizationError,
    BadSignature,
    ClaimRejected,
    EncodingError,
    InsufficientFunds,
    IntegrityError,
    InvalidTransition,
    NotFound,
    VerificationFailed,
)
from .parties import Party, Role
from .records import AccountBook, CustomerRecord
from .store import FileStore, authorize_read, fetch_and_verify
from .transactions import (
    ClaimRequestTx,
    ConditionField,
    ContractTx,
    CourtDecisionTx,
    DecisionBody,
    DecisionTx,
    PIHToken,
    PolicyAdvertTx,
    Scope,
    SensorGenesisTx,
    Transaction,
    TxId,
    Verdict,
    canonical_bytes,
    compute_tid,
    decode_tx,
    seal,
    sign_as,
)
from .validation import signatures_valid


# -- claim state machine -------------------------------------------------------

class ClaimState(str, enum.Enum):
    LODGED = "Lodged"
    VERIFIED = "Verified"
    ACCESS_GRANTED = "AccessGranted"
    DATA_CHECKED = "DataChecked"
    DECIDED = "Decided"
    SETTLED = "Settled"
    DISPUTED = "Disputed"
    CLOSED = "Closed"


S = ClaimState
EDGES: dict[ClaimState, frozenset[ClaimState]] = {
    S.LODGED: frozenset({S.VERIFIED, S.CLOSED}),
    S.VERIFIED: frozenset({S.ACCESS_GRANTED}),
    S.ACCESS_GRANTED: frozenset({S.DATA_CHECKED}),
    S.DATA_CHECKED: frozenset({S.DECIDED, S.DISPUTED}),
    S.DECIDED: frozenset({S.SETTLED}),
    S.SETTLED: frozenset(),
    S.DISPUTED: frozenset({S.CLOSED}),
    S.CLOSED: frozenset(),
}


@dataclass(eq=False)
class ClaimCase:
    claim_tid: TxId
    sct_tid: TxId
    user_account: str
    insurer_account: str
    state: ClaimState = S.LODGED
    tip: TxId = b""
    history: list[tuple[ClaimState, int, TxId | None]] = field(default_factory=list)
    flags: list[tuple[str, bytes, bytes]] = field(default_factory=list)
    notes: list[tuple[str, int]] = field(default_factory=list)
    checked: list = field(default_factory=list)
    evidence: list[tuple[str, TxId]] = field(default_factory=list)
    tids: list[TxId] = field(default_factory=list)
    disputed_draft: DecisionTx | None = None
    decision: DecisionBody | None = None
    blocked: str = ""

    def advance(self, to: ClaimState, at: int, tid: TxId | None = None, net=None) -> None:
        if to not in EDGES[self.state]:
            raise InvalidTransition(f"{self.state.value} -> {to.value} is not allowed")
        if net is not None:
            net.log("state", claim=self.claim_tid.hex(), frm=self.state.value, to=to.value)
        self.state = to
        self.history.append((to, at, tid))

    def require(self, *states: ClaimState) -> None:
        if self.state not in states:
            allowed = ", ".join(s.value for s in states)
            raise InvalidTransition(f"case is {self.state.value}; needs {allowed}")


def _record(case: ClaimCase, tid: TxId) -> None:
    case.tip = tid
    case.tids.append(tid)


def _signer(party: Party, tx: Transaction, pk: bytes):
    """The party's key ring if it consents to ``tx``, else just its public key."""
    return party.ring if party.approves(tx) else pk


# -- policy discovery and negotiation -----------------------------------------

def advertise(net, insurer: Party, keywords, details: bytes) -> PolicyAdvertTx:
    tx = build_advert(insurer.ring, keywords, details)
    net.submit(tx)
    return tx


@dataclass(frozen=True)
class AgreedTerms:
    condition: bytes
    nt_tids: tuple[TxId, ...]


@dataclass(frozen=True)
class Abandoned:
    nt_tids: tuple[TxId, ...]


# responder(condition, round, proposer_role) -> None to accept, or a counter-offer
Responder = Callable[[bytes, int, Role], "bytes | None"]


def negotiate(net, user: Party, insurer: Party, opening: bytes, responder: Responder,
              max_rounds: int = 10) -> AgreedTerms | Abandoned:
    """Alternate offers until one side accepts or ``max_rounds`` NTs were sent."""
    if not net.adverts_by(insurer.pk):
        raise NotFound(f"{insurer.name} has no policy advert on the ledger")
    condition, proposer, other = opening, user, insurer
    tids: list[TxId] = []
    for rnd in range(max_rounds):
        signer = user.ring if proposer is user else insurer.key
        nt = build_negotiation(signer, insurer.pk, condition)
        net.submit(nt)
        tids.append(nt.t_id)
        if proposer is user:
            user.conditions[nt.t_id] = condition
        reply = responder(condition, rnd, proposer.role)
        if reply is None:
            net.confirm()
            return AgreedTerms(condition, tuple(tids))
        condition, proposer, other = reply, other, proposer
    net.confirm()
    return Abandoned(tuple(tids))


def scripted_responder(replies) -> Responder:
    """Replay ``replies`` in order; ``None`` accepts. Exhaustion accepts."""
    it = iter(replies)
    return lambda condition, rnd, role: next(it, None)


def threshold_responder(min_premium: int, step: int = 10) -> Responder:
    """Rule-based insurer for ``premium=<n>`` offers.

    Accepts offers at or above ``min_premium``; otherwise counters at the
    minimum. The user side accepts any counter that it is shown.
    """
    def respond(condition: bytes, rnd: int, role: Role):
        if role is not Role.USER:
            return None
        fields = dict(kv.split("=", 1) for kv in condition.decode().split(";") if "=" in kv)
        premium = int(fields.get("premium", "0"))
        if premium >= min_premium:
            return None
        fields["premium"] = str(max(min_premium, premium + step))
        return ";".join(f"{k}={v}" for k, v in fields.items()).encode()
    return respond


# -- contract ------------------------------------------------------------------

def establish_contract(net, user: Party, insurer: Party, terms: AgreedTerms | bytes,
                       sensors: list[Party] = (), policy: str = "general",
                       term: tuple[int, int] | None = None):
    """Mine the SCT and one genesis per sensor, then file the customer record.

    Everything is signed before anything is submitted, so a refused
    signature leaves the ledger untouched.
    """
    condition = terms.condition if isinstance(terms, AgreedTerms) else terms
    user_pk = user.key_for(insurer.pk).pk
    draft = seal(ContractTx(user_pk=user_pk, insurance_pk=insurer.pk,
                            contract=ConditionField.from_payload(condition)))
    sct = finish(draft, {"user_sign": _signer(user, draft, user_pk),
                         "insurance_sign": _signer(insurer, draft, insurer.pk)})
    geneses = []
    for sensor in sensors:
        g = seal(SensorGenesisTx(sct_ref=sct.t_id, sensor_pk=sensor.pk,
                                 user_pk=user_pk, insurance_pk=insurer.pk))
        geneses.append(finish(g, {"user_sign": _signer(user, g, user_pk),
                                  "insurance_sign": _signer(insurer, g, insurer.pk)}))
    for tx in (sct, *geneses):
        net.submit(tx)
    net.confirm()
    if term is None:
        term = (net.clock, net.clock + 365 * 24 * 3600 * 1000)
    record = CustomerRecord(
        policy=policy, condition=condition, sct_tid=sct.t_id, user_pk=user_pk,
        sensor_pks=[s.pk for s in sensors], term=term,
    )
    insurer.db.add(record)
    user.contracts[insurer.pk] = sct.t_id
    user.conditions[sct.t_id] = condition
    return sct, geneses, record


def record_reading(net, sensor: Party, owner: Party, store: FileStore, payload: bytes):
    """Store a reading off-chain and anchor its digest on the sensor's chain."""
    return net.sensor_reading(sensor, store, payload, owner)


def user_tip(view, sct_tid: TxId) -> TxId:
    """Latest transaction of the contract chain that is not sensor traffic."""
    for tid in reversed(view.chain(sct_tid)):
        tx = view.get(tid)
        if isinstance(tx, SensorGenesisTx):
            continue
        if getattr(tx, "sensor_pk", None) is not None and view.genesis_of(tx.sensor_pk):
            continue
        return tid
    return sct_tid


# -- claims --------------------------------------------------------------------

def receive_claim(net, insurer: Party, user: Party, cr: ClaimRequestTx) -> ClaimCase:
    """Insurer-side intake: account lookup, signature check, then mining."""
    record = insurer.db.lookup(cr.user_pk)
    sct_tid = record.sct_tid if record else b""
    case = ClaimCase(cr.t_id, sct_tid, user.account_id, insurer.account_id, tip=cr.t_id)
    case.history.append((S.LODGED, net.clock, cr.t_id))
    if record is None:
        case.advance(S.CLOSED, net.clock, net=net)
        raise ClaimRejected("NoAccount", case)
    if compute_tid(cr) != cr.t_id or not signatures_valid(cr):
        case.advance(S.CLOSED, net.clock, net=net)
        raise ClaimRejected("BadSignature", case)
    net.submit(cr)
    net.confirm()
    case.tids.append(cr.t_id)
    case.advance(S.VERIFIED, net.clock, cr.t_id, net=net)
    return case


def lodge_and_verify_claim(net, user: Party, insurer: Party, claim_details: bytes,
                           shared_data: bytes | None = None) -> ClaimCase:
    sct_tid = user.contracts.get(insurer.pk)
    if sct_tid is None:
        raise NotFound(f"{user.name} has no contract with {insurer.name}")
    tip = user_tip(net.view, sct_tid)
    cr = build_claim(user.ring, net.view, tip, claim_details, shared_data)
    return receive_claim(net, insurer, user, cr)


def request_and_check_data(net, insurer: Party, user: Party, case: ClaimCase, scope: Scope,
                           store: FileStore) -> ClaimCase:
    """DAT round trip, then integrity check of every in-scope anchored record."""
    case.require(S.VERIFIED)
    draft = draft_access(net.view, case.claim_tid, scope)
    if not user.approves(draft):
        case.notes.append(("access-declined", net.clock))
        net.log("access-declined", claim=case.claim_tid.hex())
        return case
    dat = finish(draft, {"insurance_sign": insurer.ring, "user_sign": user.ring})
    net.submit(dat)
    net.confirm()
    _record(case, dat.t_id)
    case.advance(S.ACCESS_GRANTED, net.clock, dat.t_id, net=net)

    wanted = [r for r in user.data_log if scope.covers(r.sensor_pk, r.captured_at)]
    grant = authorize_read(store, dat, net.ledger, insurer.pk, [r.locator for r in wanted])
    for rec in wanted:
        anchored = net.ledger.get(rec.anchor_tid).data_hash
        try:
            fetch_and_verify(store, rec.locator, anchored, grant)
        except IntegrityError as exc:
            case.flags.append((exc.locator, exc.expected, exc.actual))
            net.log("integrity-failure", claim=case.claim_tid.hex(), locator=exc.locator)
        else:
            case.checked.append(rec)
    case.advance(S.DATA_CHECKED, net.clock, net=net)
    return case


def record_third_party_evidence(net, insurer: Party, case: ClaimCase, provider: Party | None,
                                evidence: bytes, store: FileStore):
    """Anchor a provider's report into the contract chain at the case tip."""
    if case.state in (S.LODGED, S.CLOSED):
        raise InvalidTransition(f"cannot add evidence to a {case.state.value} case")
    if provider is None:
        raise BadSignature("evidence must be signed by its provider")
    receipt = store.put(provider.pk, evidence, net.clock)
    tx = build_anchor(provider.key, case.tip, digest(evidence))
    net.submit(tx)
    net.confirm()
    _record(case, tx.t_id)
    case.evidence.append((receipt.locator, tx.t_id))
    return tx


def settle(net, case: ClaimCase, accounts: AccountBook) -> ClaimCase:
    """Apply the mined decision: move credits insurer -> user, then mark Settled."""
    case.require(S.DECIDED)
    d = case.decision
    if d.verdict is Verdict.APPROVED and d.amount:
        try:
            accounts.transfer(case.insurer_account, case.user_account, d.amount)
        except InsufficientFunds as exc:
            case.blocked = str(exc)
            net.log("settlement-blocked", claim=case.claim_tid.hex(), reason=case.blocked)
            return case
    case.blocked = ""
    case.advance(S.SETTLED, net.clock, net=net)
    return case


def decide_and_settle(net, insurer: Party, user: Party, case: ClaimCase, verdict: Verdict,
                      amount: int, accounts: AccountBook, rationale: bytes = b"") -> ClaimCase:
    case.require(S.DATA_CHECKED)
    draft = draft_decision(net.view, case.tip, verdict, amount, rationale)
    if not user.approves(draft):
        case.disputed_draft = sign_as(draft, "insurance_sign", insurer.key)
        case.advance(S.DISPUTED, net.clock, net=net)
        return case
    dt = finish(draft, {"insurance_sign": insurer.ring, "user_sign": user.ring})
    net.submit(dt)
    net.confirm()
    _record(case, dt.t_id)
    case.decision = dt.decision
    case.advance(S.DECIDED, net.clock, dt.t_id, net=net)
    return settle(net, case, accounts)


def adjudicate_dispute(net, court: Party, case: ClaimCase, verdict: Verdict, amount: int,
                       accounts: AccountBook, store: FileStore | None = None) -> ClaimCase:
    """Court re-verifies the chain and the case data, then rules and settles."""
    case.require(S.DISPUTED)
    if court.pk not in net.court_registry:
        raise AuthorizationError(f"{court.name} is not a registered court")
    report = verify_chain(net.ledger)
    if not report.ok:
        raise VerificationFailed(report.describe())
    chained = {tx.t_id for tx in walk_contract_chain(net.ledger, case.sct_tid)}
    missing = [t for t in case.tids if t not in chained]
    if missing:
        raise VerificationFailed(f"{len(missing)} case transaction(s) missing from the contract chain")
    if store is not None:
        for rec in case.checked:
            try:
                fetch_and_verify(store, rec.locator, net.ledger.get(rec.anchor_tid).data_hash)
            except IntegrityError as exc:
                case.flags.append((exc.locator, exc.expected, exc.actual))
    tx = build_court_decision(court.key, case.tip, case.disputed_draft.t_id, verdict, amount)
    if tx.decision.verdict is Verdict.APPROVED and accounts.balance(case.insurer_account) < amount:
        raise InsufficientFunds(f"{case.insurer_account} cannot cover the award of {amount}")
    net.submit(tx)
    net.confirm()
    _record(case, tx.t_id)
    case.decision = tx.decision
    if tx.decision.verdict is Verdict.APPROVED and amount:
        accounts.transfer(case.insurer_account, case.user_account, amount)
    case.advance(S.CLOSED, net.clock, tx.t_id, net=net)
    return case


# -- proof of insurance history -------------------------------------------------

@dataclass(frozen=True)
class HistoryReport:
    policy_type: str
    duration: tuple[int, int]
    transaction_count: int
    claim_count: int
    outcomes: tuple[tuple[str, str, int], ...]  # (decided by, verdict, amount)
    token_id: TxId = b""


def issue_pih(net, insurer: Party, sct_tid: TxId, metadata: bytes = b"") -> PIHToken:
    record = insurer.db.by_sct(sct_tid)
    token = build_history_token(insurer.ring, net.view, sct_tid, record.policy, record.term, metadata)
    net.submit(token)
    net.confirm()
    return token


def verify_pih(token: PIHToken | bytes, ledger) -> HistoryReport:
    """Check a delivered token against the ledger and summarise the history."""
    if isinstance(token, (bytes, bytearray)):
        try:
            token = decode_tx(bytes(token))
        except EncodingError as exc:
            raise VerificationFailed(f"undecodable token: {exc}") from exc
    if not isinstance(token, PIHToken):
        raise VerificationFailed("not a history token")
    body = canonical_bytes(token)
    if digest(body) != token.token_id:
        raise VerificationFailed("token id does not match its content")
    if not verify(token.insurance_pk, body, token.insurance_sign):
        raise VerificationFailed("insurer signature does not verify")
    last = token.token_content.last_tx_id
    sct_tid = ledger.index.contract_of(last)
    if sct_tid is None:
        raise VerificationFailed("last_tx_id is not in any contract chain")
    sct = ledger.get(sct_tid)
    if sct.insurance_pk != token.insurance_pk or sct.user_pk != token.user_pk:
        raise VerificationFailed("token parties differ from the contract's")
    chain = walk_contract_chain(ledger, sct_tid)
    ids = [tx.t_id for tx in chain]
    history = chain[: ids.index(last) + 1]
    outcomes = []
    for tx in history:
        if isinstance(tx, DecisionTx):
            outcomes.append(("insurer", tx.decision.verdict.value, tx.decision.amount))
        elif isinstance(tx, CourtDecisionTx):
            outcomes.append(("court", tx.decision.verdict.value, tx.decision.amount))
    tc = token.token_content
    return HistoryReport(
        policy_type=tc.policy_type,
        duration=(tc.start, tc.end),
        transaction_count=len(history),
        claim_count=sum(isinstance(tx, ClaimRequestTx) for tx in history),
        outcomes=tuple(outcomes),
        token_id=token.token_id,
    )


def issue_and_verify_pih(net, old_insurer: Party, user: Party, new_insurer: Party,
                         sct_tid: TxId, metadata: bytes = b"") -> HistoryReport:
    token = issue_pih(net, old_insurer, sct_tid, metadata)
    user.tokens.append(token)
    new_insurer.tokens.append(token)
    return verify_pih(token, net.ledger)
