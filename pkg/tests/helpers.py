"""Shared fixtures-as-functions and independent oracles for the test suite."""
from __future__ import annotations

import hashlib
import random
import tempfile
import struct

from bisledger import workflow as wf
from bisledger.chain import Ledger
from bisledger.netsim import Network, spawn_network
from bisledger.parties import Role
from bisledger.records import AccountBook
from bisledger.store import FileStore
from bisledger.transactions import DataAnchorTx, Scope, SensorGenesisTx, Verdict


# -- oracles written without touching the package's codec ------------------------

def oracle_lp(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def oracle_sha256(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def oracle_chain_scan(ledger: Ledger, sct_tid: bytes) -> list[bytes]:
    """Brute force: follow every transaction's parent links until a contract or a dead end."""
    by_id = {}
    order = []
    for block in ledger.blocks:
        for tx in block.txs:
            by_id[tx.t_id] = tx
            order.append(tx.t_id)

    def root(tid, depth=0):
        tx = by_id.get(tid)
        if tx is None or depth > len(order):
            return None
        if tx.NAME == "SCT":
            return tid
        if tx.NAME == "GENESIS":
            return root(tx.sct_ref, depth + 1)
        p = getattr(tx, "p_t_id", None)
        return root(p, depth + 1) if p is not None else None

    return [t for t in order if root(t) == sct_tid]


# -- network fixtures ------------------------------------------------------------

def world(seed: int = 0, wait_period: int = 1000, miners: int = 1, sensors: int = 1,
          users: int = 1, insurers: int = 1) -> Network:
    parties = [(f"u{i}", "user") for i in range(users)]
    parties += [(f"i{i}", "insurer") for i in range(insurers)]
    parties += [(f"s{i}", "sensor") for i in range(sensors)]
    parties += [("court", "court"), ("police", "provider")]
    return spawn_network(parties, miners=miners, wait_period=wait_period, seed=seed)


def contracted(net: Network, user: str = "u0", insurer: str = "i0", sensors=("s0",),
               terms: bytes = b"premium=100", policy: str = "vehicle"):
    u, i = net.party(user), net.party(insurer)
    if not net.adverts_by(i.pk):
        wf.advertise(net, i, ["vehicle", "home"], b"details")
    sct, geneses, record = wf.establish_contract(net, u, i, terms, [net.party(s) for s in sensors],
                                                 policy=policy)
    return sct, geneses, record


def accounts_for(net: Network, insurer_balance: int = 10_000, user_balance: int = 0) -> AccountBook:
    book = AccountBook()
    for p in net.parties:
        if p.role is Role.INSURER:
            book.open(p.account_id, insurer_balance)
        elif p.role is Role.USER:
            book.open(p.account_id, user_balance)
    return book


def checked_case(net: Network, store: FileStore, readings: int = 3, user: str = "u0",
                 insurer: str = "i0", sensors=("s0",)):
    """Contract, readings, claim and data check; returns the case at DataChecked."""
    sct, _, _ = contracted(net, user, insurer, sensors)
    u, i = net.party(user), net.party(insurer)
    for k in range(readings):
        for s in sensors:
            net.sensor_reading(net.party(s), store, f"{s} reading {k}".encode(), u)
        net.run_until(net.clock + 100)
    net.confirm()
    case = wf.lodge_and_verify_claim(net, u, i, b"collision")
    scope = Scope(tuple(net.party(s).pk for s in sensors))
    wf.request_and_check_data(net, i, u, case, scope, store)
    return sct, case


def random_multi_contract_ledger(seed: int, tmp_store: FileStore) -> tuple[Network, list[bytes]]:
    """Several contracts with interleaved sensor, claim and evidence traffic."""
    rng = random.Random(seed)
    n_users = rng.randint(1, 4)
    net = world(seed=seed, sensors=n_users * 2, users=n_users, insurers=rng.randint(1, 2))
    scts = []
    cases = []
    book = accounts_for(net)
    for k in range(n_users):
        insurer = f"i{rng.randrange(len([p for p in net.parties if p.role is Role.INSURER]))}"
        sensors = [f"s{2 * k + j}" for j in range(rng.randint(0, 2))]
        sct, _, _ = contracted(net, f"u{k}", insurer, sensors, terms=f"premium={rng.randint(1, 999)}".encode())
        scts.append((sct.t_id, f"u{k}", insurer, sensors))
    for _ in range(rng.randint(2, 12)):
        sct_tid, u, i, sensors = rng.choice(scts)
        action = rng.random()
        if sensors and action < 0.5:
            net.sensor_reading(net.party(rng.choice(sensors)), tmp_store, rng.randbytes(16), net.party(u))
        elif action < 0.8:
            case = wf.lodge_and_verify_claim(net, net.party(u), net.party(i), b"claim")
            cases.append((case, u, i))
        else:
            net.run_until(net.clock + rng.randint(1, 1500))
    for case, u, i in cases:
        if case.state is wf.ClaimState.VERIFIED and rng.random() < 0.7:
            wf.request_and_check_data(net, net.party(i), net.party(u), case,
                                      Scope(tuple(net.view.sensors_of(case.sct_tid))), tmp_store)
            if rng.random() < 0.5:
                wf.decide_and_settle(net, net.party(i), net.party(u), case,
                                     Verdict.APPROVED, rng.randint(0, 50), book)
    net.confirm()
    return net, [s[0] for s in scts]


def sensor_chain(ledger: Ledger, sensor_pk: bytes) -> list:
    return [tx for tx in ledger.transactions()
            if isinstance(tx, (SensorGenesisTx, DataAnchorTx)) and tx.sensor_pk == sensor_pk]


def multisig_corpus(seed: int = 0, per_kind: int = 25):
    """(view, [(tx, valid_signature_count)]) over SCT, GENESIS, DAT and DT drafts.

    Each fully signed draft is paired with six variants that keep exactly one
    valid signature: the other slot blanked, corrupted, or signed by a stranger.
    """
    import dataclasses

    from bisledger.builders import draft_access, draft_decision, finish
    from bisledger.crypto import KeyPair
    from bisledger.transactions import ConditionField, ContractTx, seal, sign_as

    rng = random.Random(seed)
    net = world(seed=seed, sensors=1)
    sct, _, _ = contracted(net)
    u, i = net.party("u0"), net.party("i0")
    case = wf.lodge_and_verify_claim(net, u, i, b"claim")
    view = net.view
    signers = {"user_sign": u.ring, "insurance_sign": i.ring}
    cases = []
    for k in range(per_kind):
        drafts = [
            seal(ContractTx(user_pk=sct.user_pk, insurance_pk=i.pk,
                            contract=ConditionField.from_payload(f"terms {seed}/{k}".encode()))),
            seal(SensorGenesisTx(sct_ref=sct.t_id, sensor_pk=KeyPair.generate(rng).pk,
                                 user_pk=sct.user_pk, insurance_pk=i.pk)),
            draft_access(view, case.claim_tid, Scope((net.party("s0").pk,), k, k + 100)),
            draft_decision(view, case.tip, Verdict.APPROVED, k),
        ]
        for d in drafts:
            full = finish(d, signers)
            cases.append((full, 2))
            for keep, other in (("user_sign", "insurance_sign"), ("insurance_sign", "user_sign")):
                sig = getattr(full, other)
                stranger = KeyPair.generate(rng).sign(canonical_bytes_of(full))
                cases.append((dataclasses.replace(full, **{other: b""}), 1))
                cases.append((dataclasses.replace(full, **{other: bytes([sig[0] ^ 1]) + sig[1:]}), 1))
                cases.append((dataclasses.replace(full, **{other: stranger}), 1))
    return view, cases


def canonical_bytes_of(tx) -> bytes:
    from bisledger.transactions import canonical_bytes
    return canonical_bytes(tx)


def ledger_with_blocks(n_blocks: int, seed: int = 0, store: FileStore | None = None) -> Network:
    """A network whose ledger holds exactly ``n_blocks`` blocks of mixed traffic."""
    rng = random.Random(seed)
    net = world(seed=seed, sensors=2)
    contracted(net, sensors=("s0", "s1"))
    store = store or FileStore(tempfile.mkdtemp(prefix="bis-fixture-"))
    u, i = net.party("u0"), net.party("i0")
    book = accounts_for(net)
    while len(net.ledger.blocks) < n_blocks:
        remaining = n_blocks - len(net.ledger.blocks)
        if remaining >= 4 and rng.random() < 0.25:
            case = wf.lodge_and_verify_claim(net, u, i, b"claim %d" % len(net.ledger.blocks))
            wf.request_and_check_data(net, i, u, case, Scope(tuple(net.view.sensors_of(case.sct_tid))), store)
            wf.decide_and_settle(net, i, u, case, Verdict.APPROVED, rng.randint(1, 20), book)
        else:
            for _ in range(rng.randint(1, 3)):
                net.sensor_reading(net.party(rng.choice(["s0", "s1"])), store, rng.randbytes(8), u)
            net.confirm()
    return net


def claim_fuzz(seed: int, steps: int, root, restart_every: int = 120) -> dict:
    """Random walk over claim actions; returns counters and any violations seen.

    A fresh network is started every ``restart_every`` steps so court checks,
    which re-verify the whole chain, stay cheap.
    """
    from collections import Counter
    from pathlib import Path

    from bisledger.errors import (
        AuthorizationError,
        ClaimRejected,
        InsufficientFunds,
        InvalidTransition,
    )

    S = wf.ClaimState
    rng = random.Random(seed)
    stats: Counter = Counter()
    violations: list[str] = []
    done = 0
    round_no = 0
    while done < steps:
        round_no += 1
        net = world(seed=rng.getrandbits(32), users=2, insurers=2, sensors=2)
        rogue = net.new_party("rogue", "court", registered=False)
        store = FileStore(Path(root) / f"r{round_no}")
        book = AccountBook()
        for p in net.parties:
            book.open(p.account_id, rng.choice([0, 40, 10_000]) if p.role is Role.INSURER
                      else rng.randint(0, 100) if p.role is Role.USER else 0)
        total = book.total()
        pairs = [("u0", "i0", "s0"), ("u1", "i1", "s1")]
        for u, i, s in pairs:
            contracted(net, u, i, (s,))
        cases: list = []
        for _ in range(min(restart_every, steps - done)):
            done += 1
            u, i, s = rng.choice(pairs)
            user, insurer = net.party(u), net.party(i)
            roll = rng.random()
            try:
                active = [c for c in cases if c[0].state not in (S.SETTLED, S.CLOSED)]
                if roll < 0.10 or not active:
                    cases.append((wf.lodge_and_verify_claim(net, user, insurer, b"c%d" % done), u, i))
                    stats["claims"] += 1
                elif roll < 0.22:
                    net.sensor_reading(net.party(s), store, rng.randbytes(12), user)
                    stats["readings"] += 1
                elif roll < 0.24 and len(store):
                    loc = rng.choice(store.locators())
                    path = store.path_of(loc)
                    data = bytearray(path.read_bytes())
                    bit = rng.randrange(len(data) * 8)
                    data[bit // 8] ^= 1 << (bit % 8)
                    path.write_bytes(bytes(data))
                    stats["tampers"] += 1
                else:
                    case, cu, ci = rng.choice(active if rng.random() < 0.9 else cases)
                    cuser, cins = net.party(cu), net.party(ci)
                    fitting = {S.VERIFIED: "grant", S.DATA_CHECKED: "decide", S.DECIDED: "settle",
                               S.DISPUTED: "dispute"}.get(case.state)
                    if fitting and rng.random() < 0.7:
                        action = fitting
                    else:
                        action = rng.choice(["grant", "evidence", "decide", "dispute", "settle"])
                    consent = rng.random() < 0.75
                    cuser.consent = (lambda tx: True) if consent else (lambda tx: False)
                    verdict = rng.choice([Verdict.APPROVED, Verdict.REJECTED])
                    amount = rng.randint(0, 120) if verdict is Verdict.APPROVED else 0
                    before = case.state
                    if action == "grant":
                        wf.request_and_check_data(net, cins, cuser, case,
                                                  Scope(tuple(net.view.sensors_of(case.sct_tid))), store)
                    elif action == "evidence":
                        wf.record_third_party_evidence(net, cins, case, net.party("police"), b"report", store)
                    elif action == "decide":
                        wf.decide_and_settle(net, cins, cuser, case, verdict, amount, book)
                        if case.state is S.SETTLED:
                            stats["settlements"] += 1
                    elif action == "dispute":
                        court = net.party("court") if rng.random() < 0.9 else rogue
                        wf.adjudicate_dispute(net, court, case, verdict, amount, book, store)
                        stats["adjudications"] += 1
                    else:
                        wf.settle(net, case, book)
                        if before is S.DECIDED and case.state is S.SETTLED:
                            stats["settlements"] += 1
                    cuser.consent = lambda tx: True
            except (InvalidTransition, AuthorizationError, InsufficientFunds, ClaimRejected) as exc:
                stats[type(exc).__name__] += 1
            finally:
                for p in net.parties:
                    p.consent = lambda tx: True
            if book.total() != total:
                violations.append(f"total changed at step {done}")
            if min(book.balances.values()) < 0:
                violations.append(f"negative balance at step {done}")
        net.confirm()
        for ev in net.trace.of("state"):
            stats["transitions"] += 1
            if S(ev["to"]) not in wf.EDGES[S(ev["frm"])]:
                violations.append(f"illegal edge {ev['frm']} -> {ev['to']}")
        chains = {}
        for case, _, _ in cases:
            if case.sct_tid not in chains:
                chains[case.sct_tid] = oracle_chain_scan(net.ledger, case.sct_tid)
            order = [t for t in chains[case.sct_tid] if t in set(case.tids)]
            if order != case.tids:
                violations.append("case transactions missing or out of order in the contract chain")
            stats["states_" + case.state.value] += 1
    stats["steps"] = done
    return {"stats": stats, "violations": violations}
