from __future__ import annotations

import dataclasses

import pytest

from bisledger import workflow as wf
from bisledger.builders import build_claim
from bisledger.chain import walk_contract_chain
from bisledger.errors import (
    AuthorizationError,
    BadSignature,
    ClaimRejected,
    InvalidTransition,
    MultisigIncomplete,
    NotFound,
    VerificationFailed,
)
from bisledger.records import AccountBook, CustomerRecord, InsurerDB
from bisledger.store import FileStore
from bisledger.transactions import (
    ClaimRequestTx,
    NegotiationTx,
    PIHToken,
    Scope,
    SensorGenesisTx,
    Verdict,
    wire_bytes,
)

from helpers import accounts_for, checked_case, claim_fuzz, contracted, oracle_chain_scan, world

S = wf.ClaimState


@pytest.fixture
def store(tmp_path):
    return FileStore(tmp_path / "store")


# -- negotiation ---------------------------------------------------------------------

def _negotiation_world():
    net = world(seed=71, sensors=0)
    wf.advertise(net, net.party("i0"), ["vehicle"], b"details")
    net.confirm()
    return net


def test_first_offer_accepted():
    net = _negotiation_world()
    out = wf.negotiate(net, net.party("u0"), net.party("i0"), b"premium=100", wf.scripted_responder([None]))
    assert isinstance(out, wf.AgreedTerms) and len(out.nt_tids) == 1
    assert out.condition == b"premium=100"


def test_three_counters_then_accept():
    net = _negotiation_world()
    replies = [b"premium=150", b"premium=120", b"premium=130", None]
    out = wf.negotiate(net, net.party("u0"), net.party("i0"), b"premium=100", wf.scripted_responder(replies))
    assert len(out.nt_tids) == 4
    ledger_nts = [tx.t_id for tx in net.ledger.transactions() if isinstance(tx, NegotiationTx)]
    assert ledger_nts == list(out.nt_tids)
    last = net.ledger.get(out.nt_tids[-1])
    assert last.condition.inline == out.condition == b"premium=130"
    # offers alternate between the user's per-insurer key and the insurer key
    signers = [net.ledger.get(t).pk for t in out.nt_tids]
    assert signers[0] == signers[2] != signers[1] == signers[3] == net.party("i0").pk


def test_round_cap_abandons():
    net = _negotiation_world()
    never = lambda condition, rnd, role: condition + b"!"  # noqa: E731
    out = wf.negotiate(net, net.party("u0"), net.party("i0"), b"premium=1", never, max_rounds=10)
    assert isinstance(out, wf.Abandoned) and len(out.nt_tids) == 10
    assert sum(isinstance(tx, NegotiationTx) for tx in net.ledger.transactions()) == 10


def test_threshold_responder_counters_at_minimum():
    respond = wf.threshold_responder(100)
    assert respond(b"premium=120", 0, wf.Role.USER) is None
    assert respond(b"premium=60;deductible=5", 0, wf.Role.USER) == b"premium=100;deductible=5"
    assert respond(b"premium=100", 1, wf.Role.INSURER) is None


def test_negotiation_requires_advert():
    net = world(seed=72, sensors=0)
    with pytest.raises(NotFound):
        wf.negotiate(net, net.party("u0"), net.party("i0"), b"x", wf.scripted_responder([None]))


# -- contract ----------------------------------------------------------------------

def test_contract_without_sensors():
    net = world(seed=73, sensors=0)
    sct, geneses, record = contracted(net, sensors=())
    assert geneses == [] and record.sensor_pks == []
    assert net.ledger.get(sct.t_id) == sct
    assert net.party("i0").db.by_sct(sct.t_id) is record


def test_contract_with_three_sensors():
    net = world(seed=74, sensors=3)
    sct, geneses, record = contracted(net, sensors=("s0", "s1", "s2"))
    assert len(geneses) == 3 and all(g.sct_ref == sct.t_id for g in geneses)
    assert all(g.t_id in net.ledger for g in geneses)
    assert record.sensor_pks == [net.party(s).pk for s in ("s0", "s1", "s2")]
    assert record.user_pk == sct.user_pk


def test_refused_genesis_aborts_everything():
    net = world(seed=75, sensors=2)
    wf.advertise(net, net.party("i0"), ["vehicle"], b"d")
    net.confirm()
    before = len(list(net.ledger.transactions()))
    u = net.party("u0")
    u.consent = lambda tx: not isinstance(tx, SensorGenesisTx)
    with pytest.raises(MultisigIncomplete):
        wf.establish_contract(net, u, net.party("i0"), b"terms", [net.party("s0"), net.party("s1")])
    net.confirm()
    assert len(list(net.ledger.transactions())) == before and not net.mempool
    assert len(net.party("i0").db) == 0


def test_insurer_db_and_accounts_reload(tmp_path):
    net = world(seed=76, sensors=1)
    contracted(net)
    db = net.party("i0").db
    sct_tid = next(iter(net.party("u0").contracts.values()))
    db.by_sct(sct_tid).payments.append((5, 100))
    db.save(tmp_path / "db.json")
    again = InsurerDB.load(tmp_path / "db.json")
    again.save(tmp_path / "db2.json")
    assert (tmp_path / "db.json").read_text() == (tmp_path / "db2.json").read_text()
    rec = again.by_sct(sct_tid)
    assert isinstance(rec, CustomerRecord) and [tuple(p) for p in rec.payments] == [(5, 100)]
    assert again.lookup(rec.user_pk) is rec
    book = AccountBook({"a": 5, "b": 7})
    book.save(tmp_path / "acc.json")
    assert AccountBook.load(tmp_path / "acc.json").balances == {"a": 5, "b": 7}


# -- claims ------------------------------------------------------------------------

def test_valid_claim_verified():
    net = world(seed=77)
    contracted(net)
    case = wf.lodge_and_verify_claim(net, net.party("u0"), net.party("i0"), b"claim")
    assert case.state is S.VERIFIED and net.ledger.get(case.claim_tid) is not None
    assert [h[0] for h in case.history] == [S.LODGED, S.VERIFIED]


def test_claim_before_contract():
    net = world(seed=78)
    with pytest.raises(NotFound):
        wf.lodge_and_verify_claim(net, net.party("u0"), net.party("i0"), b"claim")


def test_claim_with_unknown_key_is_no_account():
    net = world(seed=79, users=2, insurers=2, sensors=0)
    contracted(net, "u0", "i0", sensors=())
    contracted(net, "u1", "i1", sensors=())
    # u1's claim on its own contract, presented to the wrong insurer
    cr = build_claim(net.party("u1").ring, net.view, net.party("u1").contracts[net.party("i1").pk], b"c")
    with pytest.raises(ClaimRejected) as exc:
        wf.receive_claim(net, net.party("i0"), net.party("u1"), cr)
    assert exc.value.reason == "NoAccount" and exc.value.case.state is S.CLOSED


def test_corrupted_signature_is_bad_signature():
    net = world(seed=80)
    contracted(net)
    u = net.party("u0")
    cr = build_claim(u.ring, net.view, u.contracts[net.party("i0").pk], b"c")
    bad = dataclasses.replace(cr, sign=bytes([cr.sign[0] ^ 1]) + cr.sign[1:])
    with pytest.raises(ClaimRejected) as exc:
        wf.receive_claim(net, net.party("i0"), u, bad)
    assert exc.value.reason == "BadSignature"
    assert bad.t_id not in net.ledger


def test_claim_shared_data_hash():
    net = world(seed=81)
    contracted(net)
    data = bytes(4096)
    case = wf.lodge_and_verify_claim(net, net.party("u0"), net.party("i0"), b"c", data)
    from helpers import oracle_sha256
    assert net.ledger.get(case.claim_tid).data_hash == oracle_sha256(data)


# -- data check ----------------------------------------------------------------------

def test_ten_untampered_records(store):
    net = world(seed=82)
    _, case = checked_case(net, store, readings=10)
    assert case.state is S.DATA_CHECKED and len(case.checked) == 10 and not case.flags
    assert [h[0] for h in case.history] == [S.LODGED, S.VERIFIED, S.ACCESS_GRANTED, S.DATA_CHECKED]


def test_one_of_ten_tampered_is_flagged(store):
    net = world(seed=83)
    contracted(net)
    u, i, s = net.party("u0"), net.party("i0"), net.party("s0")
    receipts = [net.sensor_reading(s, store, b"reading %d" % k, u)[0] for k in range(10)]
    net.confirm()
    victim = receipts[6].locator
    path = store.path_of(victim)
    path.write_bytes(b"X" + path.read_bytes()[1:])
    case = wf.lodge_and_verify_claim(net, u, i, b"claim")
    wf.request_and_check_data(net, i, u, case, Scope((s.pk,)), store)
    assert case.state is S.DATA_CHECKED
    assert [f[0] for f in case.flags] == [victim]
    assert case.flags[0][1] == receipts[6].payload_hash
    assert len(case.checked) == 9


def test_declined_access_stays_verified(store):
    net = world(seed=84)
    contracted(net)
    u, i = net.party("u0"), net.party("i0")
    case = wf.lodge_and_verify_claim(net, u, i, b"claim")
    u.consent = lambda tx: False
    wf.request_and_check_data(net, i, u, case, Scope((net.party("s0").pk,)), store)
    assert case.state is S.VERIFIED and case.notes and case.notes[0][0] == "access-declined"


# -- evidence ----------------------------------------------------------------------

def test_police_evidence_joins_chain(store):
    net = world(seed=85)
    sct, case = checked_case(net, store)
    tx = wf.record_third_party_evidence(net, net.party("i0"), case, net.party("police"), b"report", store)
    walk = [t.t_id for t in walk_contract_chain(net.ledger, sct.t_id)]
    assert tx.t_id in walk and walk == oracle_chain_scan(net.ledger, sct.t_id)
    assert case.tip == tx.t_id


def test_unsigned_evidence_rejected(store):
    net = world(seed=86)
    _, case = checked_case(net, store)
    with pytest.raises(BadSignature):
        wf.record_third_party_evidence(net, net.party("i0"), case, None, b"report", store)


# -- settlement and disputes ---------------------------------------------------------

def test_approved_settlement_conserves(store):
    net = world(seed=87)
    _, case = checked_case(net, store)
    book = accounts_for(net, insurer_balance=10_000)
    total = book.total()
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.APPROVED, 500, book)
    assert case.state is S.SETTLED
    assert (book.balance("i0"), book.balance("u0")) == (9_500, 500)
    assert book.total() == total


def test_rejected_settles_without_transfer(store):
    net = world(seed=88)
    _, case = checked_case(net, store)
    book = accounts_for(net)
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.REJECTED, 0, book)
    assert case.state is S.SETTLED and book.balance("u0") == 0


def test_insufficient_funds_blocks_settlement(store):
    net = world(seed=89)
    _, case = checked_case(net, store)
    book = accounts_for(net, insurer_balance=100)
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.APPROVED, 500, book)
    assert case.state is S.DECIDED and case.blocked
    assert book.balance("i0") == 100


def test_refused_decision_goes_to_court(store):
    net = world(seed=90)
    sct, case = checked_case(net, store)
    u, i = net.party("u0"), net.party("i0")
    book = accounts_for(net)
    u.consent = lambda tx: False
    wf.decide_and_settle(net, i, u, case, Verdict.REJECTED, 0, book)
    assert case.state is S.DISPUTED and case.disputed_draft.t_id not in net.ledger
    wf.adjudicate_dispute(net, net.party("court"), case, Verdict.APPROVED, 500, book, store)
    assert case.state is S.CLOSED and book.balance("u0") == 500
    court_tx = net.ledger.get(case.tip)
    assert court_tx.NAME == "COURT" and court_tx.disputed_decision == case.disputed_draft.t_id
    assert court_tx.t_id in [t.t_id for t in walk_contract_chain(net.ledger, sct.t_id)]


def test_court_upholds_insurer(store):
    net = world(seed=91)
    _, case = checked_case(net, store)
    book = accounts_for(net)
    net.party("u0").consent = lambda tx: False
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.REJECTED, 0, book)
    wf.adjudicate_dispute(net, net.party("court"), case, Verdict.REJECTED, 0, book, store)
    assert case.state is S.CLOSED and book.balance("u0") == 0


def test_unregistered_court(store):
    net = world(seed=92)
    _, case = checked_case(net, store)
    rogue = net.new_party("rogue", "court", registered=False)
    book = accounts_for(net)
    net.party("u0").consent = lambda tx: False
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.REJECTED, 0, book)
    with pytest.raises(AuthorizationError):
        wf.adjudicate_dispute(net, rogue, case, Verdict.APPROVED, 5, book, store)
    assert case.state is S.DISPUTED


def test_illegal_transitions_raise(store):
    net = world(seed=93)
    contracted(net)
    case = wf.lodge_and_verify_claim(net, net.party("u0"), net.party("i0"), b"c")
    with pytest.raises(InvalidTransition):
        wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.APPROVED, 1, accounts_for(net))
    with pytest.raises(InvalidTransition):
        case.advance(S.SETTLED, 0)
    assert case.state is S.VERIFIED


# -- history tokens ------------------------------------------------------------------

def test_pih_after_settled_claim(store):
    net = world(seed=94, insurers=2)
    sct, case = checked_case(net, store)
    wf.decide_and_settle(net, net.party("i0"), net.party("u0"), case, Verdict.APPROVED, 500, accounts_for(net))
    report = wf.issue_and_verify_pih(net, net.party("i0"), net.party("u0"), net.party("i1"), sct.t_id)
    chain = oracle_chain_scan(net.ledger, sct.t_id)
    assert report.transaction_count == len(chain)
    assert report.claim_count == 1 == sum(isinstance(net.ledger.get(t), ClaimRequestTx) for t in chain)
    assert report.outcomes == (("insurer", "Approved", 500),)
    assert report.policy_type == "vehicle"


def test_pih_claim_free_contract():
    net = world(seed=95, insurers=2, sensors=0)
    sct, _, _ = contracted(net, sensors=())
    report = wf.issue_and_verify_pih(net, net.party("i0"), net.party("u0"), net.party("i1"), sct.t_id)
    assert report.claim_count == 0 and report.transaction_count == 1


def test_pih_tampered_bytes_fail():
    net = world(seed=96, insurers=2, sensors=0)
    sct, _, _ = contracted(net, sensors=())
    token = wf.issue_pih(net, net.party("i0"), sct.t_id)
    raw = wire_bytes(token)
    assert wf.verify_pih(raw, net.ledger).transaction_count == 1
    for pos in range(0, len(raw), 7):
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        with pytest.raises(VerificationFailed):
            wf.verify_pih(bytes(bad), net.ledger)


def test_pih_forged_signature_and_foreign_ledger():
    net = world(seed=97, insurers=2, sensors=0)
    sct, _, _ = contracted(net, sensors=())
    token = wf.issue_pih(net, net.party("i0"), sct.t_id)
    forged = dataclasses.replace(token, insurance_sign=net.party("i1").key.sign(b"x"))
    with pytest.raises(VerificationFailed):
        wf.verify_pih(forged, net.ledger)
    other = world(seed=98, sensors=0)
    with pytest.raises(VerificationFailed):
        wf.verify_pih(token, other.ledger)
    assert isinstance(token, PIHToken) and token.token_id == token.t_id


# -- properties ----------------------------------------------------------------------

def test_random_walk_respects_state_machine(tmp_path):
    result = claim_fuzz(seed=99, steps=10_000, root=tmp_path)
    assert result["violations"] == []
    stats = result["stats"]
    assert stats["steps"] >= 10_000
    for state in ("Settled", "Closed", "Disputed"):
        assert stats["states_" + state] > 0


def test_fresh_key_per_insurer():
    net = world(seed=100, insurers=2, sensors=0)
    u = net.party("u0")
    contracted(net, "u0", "i0", sensors=())
    contracted(net, "u0", "i1", sensors=())
    for ins in ("i0", "i1"):
        wf.lodge_and_verify_claim(net, u, net.party(ins), b"c")
    keys = {"i0": set(), "i1": set()}
    for tx in net.ledger.transactions():
        ins_pk = getattr(tx, "insurance_pk", None)
        for name in ("i0", "i1"):
            if ins_pk == net.party(name).pk:
                for field in ("user_pk", "pk"):
                    if getattr(tx, field, None) and getattr(tx, field) != ins_pk:
                        keys[name].add(getattr(tx, field))
    assert keys["i0"] and keys["i1"] and not keys["i0"] & keys["i1"]
