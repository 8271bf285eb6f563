"""Line-oriented scenario scripts driving a simulated network.

One action per line, ``#`` starts a comment, arguments are ``key=value``
pairs after the positional actor names (shell-style quoting)::

    keygen alice user
    keygen acme insurer balance=100000
    advertise acme keywords=vehicle,home details="fleet cover"
    negotiate alice acme offer="premium=80" min=100
    contract alice acme sensors=dashcam policy=vehicle
    sensor-put dashcam owner=alice data="speed=42" count=3 every=200
    claim alice acme details="rear collision"
    grant acme alice sensors=dashcam
    evidence acme alice provider=police report="officer statement"
    decide acme alice verdict=approved amount=500
    pih acme alice beta

``grant`` and ``decide`` accept a bare ``refuse`` flag (the user declines to
countersign); ``dispute <court> <user> <insurer> verdict=.. amount=..`` then
settles a refused decision in court.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .chain import save_ledger, verify_chain, walk_contract_chain
from .errors import BISError, ScriptError
from .netsim import Network
from .parties import Party, Role
from .records import AccountBook
from .store import FileStore
from .transactions import Scope, Verdict
from . import workflow as wf

ACTIONS = (
    "seed", "wait", "keygen", "advertise", "negotiate", "contract", "sensor-put", "claim",
    "grant", "evidence", "decide", "dispute", "pih", "advance",
)
DEMO_SCRIPT = Path(__file__).with_name("scenarios") / "demo.bis"


@dataclass
class Step:
    number: int
    action: str
    args: list[str]
    opts: dict[str, str]
    flags: set[str]


def parse_script(text: str) -> list[Step]:
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ScriptError(lineno, f"parse error: {exc}") from exc
        if not tokens:
            continue
        action, rest = tokens[0], tokens[1:]
        if action not in ACTIONS:
            raise ScriptError(lineno, f"unknown action {action!r}")
        args, opts, flags = [], {}, set()
        for tok in rest:
            if "=" in tok:
                k, v = tok.split("=", 1)
                opts[k] = v
            elif opts or tok in ("refuse",):
                flags.add(tok)
            else:
                args.append(tok)
        steps.append(Step(lineno, action, args, opts, flags))
    return steps


@dataclass
class ScenarioResult:
    exit_code: int
    net: Network | None
    accounts: AccountBook
    cases: dict = field(default_factory=dict)
    contracts: dict = field(default_factory=dict)
    error: str = ""
    outputs: dict[str, Path] = field(default_factory=dict)


class _Runner:
    def __init__(self, steps: list[Step], out_dir: Path, seed: int | None, wait_period: int):
        self.steps = steps
        self.out_dir = out_dir
        self.seed = seed
        self.wait_period = wait_period
        self.net: Network | None = None
        self.accounts = AccountBook()
        self.opening_total = 0
        self.store = FileStore(out_dir / "store")
        self.cases: dict[tuple[str, str], wf.ClaimCase] = {}
        self.terms: dict[tuple[str, str], bytes] = {}
        self.contracts: dict[tuple[str, str], bytes] = {}

    def network(self) -> Network:
        if self.net is None:
            self.net = Network(miners=1, wait_period=self.wait_period, seed=self.seed or 0)
        return self.net

    def actor(self, step: Step, name: str, role: Role | None = None) -> Party:
        try:
            party = self.network().party(name)
        except KeyError:
            raise ScriptError(step.number, f"unknown actor {name!r}") from None
        if role is not None and party.role is not role:
            raise ScriptError(step.number, f"{name} is a {party.role.value}, expected {role.value}")
        return party

    def need(self, step: Step, n: int) -> list[str]:
        if len(step.args) < n:
            raise ScriptError(step.number, f"{step.action} needs {n} actor name(s)")
        return step.args[:n]

    def case(self, step: Step, user: Party, insurer: Party) -> wf.ClaimCase:
        case = self.cases.get((user.name, insurer.name))
        if case is None:
            raise ScriptError(step.number, f"no open claim between {user.name} and {insurer.name}")
        return case

    def run(self) -> None:
        for step in self.steps:
            try:
                getattr(self, "do_" + step.action.replace("-", "_"))(step)
            except ScriptError:
                raise
            except (BISError, ValueError, KeyError) as exc:
                raise ScriptError(step.number, f"{step.action}: {exc}") from exc

    # -- actions -----------------------------------------------------------

    def do_seed(self, step):
        if self.net is not None:
            raise ScriptError(step.number, "seed must precede every other action")
        if self.seed is None:
            self.seed = int(self.need(step, 1)[0])

    def do_wait(self, step):
        if self.net is not None:
            raise ScriptError(step.number, "wait must precede every other action")
        self.wait_period = int(self.need(step, 1)[0])

    def do_keygen(self, step):
        name, role = self.need(step, 2)
        net = self.network()
        registered = step.opts.get("registered", "yes") != "no"
        net.new_party(name, Role(role), registered=registered)
        balance = int(step.opts.get("balance", 0))
        self.accounts.open(name, balance)
        self.opening_total += balance

    def do_advertise(self, step):
        (name,) = self.need(step, 1)
        insurer = self.actor(step, name, Role.INSURER)
        keywords = [k for k in step.opts.get("keywords", "").split(",") if k]
        wf.advertise(self.net, insurer, keywords, step.opts.get("details", "").encode())
        self.net.confirm()

    def do_negotiate(self, step):
        u, i = self.need(step, 2)
        user, insurer = self.actor(step, u, Role.USER), self.actor(step, i, Role.INSURER)
        offer = step.opts.get("offer", "premium=0").encode()
        responder = wf.threshold_responder(int(step.opts.get("min", 0)))
        result = wf.negotiate(self.net, user, insurer, offer, responder,
                              max_rounds=int(step.opts.get("cap", 10)))
        if isinstance(result, wf.Abandoned):
            raise ScriptError(step.number, f"negotiation abandoned after {len(result.nt_tids)} rounds")
        self.terms[(u, i)] = result.condition

    def do_contract(self, step):
        u, i = self.need(step, 2)
        user, insurer = self.actor(step, u, Role.USER), self.actor(step, i, Role.INSURER)
        terms = step.opts.get("terms", "").encode() or self.terms.get((u, i))
        if not terms:
            raise ScriptError(step.number, f"no agreed terms between {u} and {i}")
        sensors = [self.actor(step, s, Role.SENSOR) for s in step.opts.get("sensors", "").split(",") if s]
        sct, _, record = wf.establish_contract(self.net, user, insurer, terms, sensors,
                                               policy=step.opts.get("policy", "general"))
        self.contracts[(u, i)] = sct.t_id
        if "premium" in step.opts:
            record.payments.append((self.net.clock, int(step.opts["premium"])))

    def do_sensor_put(self, step):
        (s,) = self.need(step, 1)
        sensor = self.actor(step, s, Role.SENSOR)
        owner = self.actor(step, step.opts["owner"], Role.USER) if "owner" in step.opts else None
        count = int(step.opts.get("count", 1))
        every = int(step.opts.get("every", self.wait_period))
        for k in range(count):
            if "size" in step.opts:
                data = self.net.rng.randbytes(int(step.opts["size"]))
            else:
                data = f"{step.opts.get('data', 'reading')};n={k}".encode()
            self.net.sensor_reading(sensor, self.store, data, owner)
            self.net.run_until(self.net.clock + every)
        self.net.confirm()

    def do_claim(self, step):
        u, i = self.need(step, 2)
        user, insurer = self.actor(step, u, Role.USER), self.actor(step, i, Role.INSURER)
        if insurer.pk not in user.contracts:
            raise ScriptError(step.number, f"{u} has no contract with {i}")
        shared = step.opts["share"].encode() if "share" in step.opts else None
        case = wf.lodge_and_verify_claim(self.net, user, insurer,
                                         step.opts.get("details", "claim").encode(), shared)
        self.cases[(u, i)] = case

    def do_grant(self, step):
        i, u = self.need(step, 2)
        insurer, user = self.actor(step, i, Role.INSURER), self.actor(step, u, Role.USER)
        case = self.case(step, user, insurer)
        sensors = tuple(self.actor(step, s, Role.SENSOR).pk
                        for s in step.opts.get("sensors", "").split(",") if s)
        if not sensors:
            sensors = tuple(self.net.view.sensors_of(case.sct_tid))
        scope = Scope(sensors, int(step.opts.get("start", 0)), int(step.opts.get("end", 2**63 - 1)))
        with _consent(user, "refuse" not in step.flags):
            wf.request_and_check_data(self.net, insurer, user, case, scope, self.store)

    def do_evidence(self, step):
        i, u = self.need(step, 2)
        insurer, user = self.actor(step, i, Role.INSURER), self.actor(step, u, Role.USER)
        provider = self.actor(step, step.opts["provider"]) if "provider" in step.opts else None
        wf.record_third_party_evidence(self.net, insurer, self.case(step, user, insurer), provider,
                                       step.opts.get("report", "").encode(), self.store)

    def do_decide(self, step):
        i, u = self.need(step, 2)
        insurer, user = self.actor(step, i, Role.INSURER), self.actor(step, u, Role.USER)
        case = self.case(step, user, insurer)
        verdict = Verdict(step.opts.get("verdict", "approved").capitalize())
        with _consent(user, "refuse" not in step.flags):
            wf.decide_and_settle(self.net, insurer, user, case, verdict,
                                 int(step.opts.get("amount", 0)), self.accounts)

    def do_dispute(self, step):
        c, u, i = self.need(step, 3)
        court = self.actor(step, c, Role.COURT)
        user, insurer = self.actor(step, u, Role.USER), self.actor(step, i, Role.INSURER)
        verdict = Verdict(step.opts.get("verdict", "approved").capitalize())
        wf.adjudicate_dispute(self.net, court, self.case(step, user, insurer), verdict,
                              int(step.opts.get("amount", 0)), self.accounts, self.store)

    def do_pih(self, step):
        old, u, new = self.need(step, 3)
        old_i, user = self.actor(step, old, Role.INSURER), self.actor(step, u, Role.USER)
        new_i = self.actor(step, new, Role.INSURER)
        sct = user.contracts.get(old_i.pk)
        if sct is None:
            raise ScriptError(step.number, f"{u} has no contract with {old}")
        wf.issue_and_verify_pih(self.net, old_i, user, new_i, sct,
                                step.opts.get("metadata", "").encode())

    def do_advance(self, step):
        self.network().run_until(self.network().clock + int(step.opts.get("ms", self.wait_period)))

    # -- end-of-run invariants ----------------------------------------------

    def check_invariants(self) -> None:
        last = self.steps[-1].number if self.steps else 0
        if self.net is None:
            return
        self.net.confirm()
        report = verify_chain(self.net.ledger)
        if not report.ok:
            raise ScriptError(last, report.describe())
        if self.accounts.total() != self.opening_total:
            raise ScriptError(last, "credit total changed")
        if any(v < 0 for v in self.accounts.balances.values()):
            raise ScriptError(last, "negative balance")
        for case in self.cases.values():
            chained = {tx.t_id for tx in walk_contract_chain(self.net.ledger, case.sct_tid)}
            if not set(case.tids) <= chained:
                raise ScriptError(last, "claim transactions missing from their contract chain")


class _consent:
    """Temporarily force a party's consent decision."""

    def __init__(self, party: Party, value: bool):
        self.party, self.value = party, value

    def __enter__(self):
        self.saved = self.party.consent
        if not self.value:
            self.party.consent = lambda tx: False

    def __exit__(self, *exc):
        self.party.consent = self.saved


def run_scenario(script: str | Path, out_dir: str | Path, seed: int | None = None,
                 wait_period: int = 1000) -> ScenarioResult:
    """Execute a script against a fresh network and write its artifacts.

    Writes ``ledger.jsonl``, ``trace.jsonl``, ``summary.txt``,
    ``accounts.json`` and one ``insurer-<name>.json`` per insurer.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = DEMO_SCRIPT.read_text() if str(script) == "demo" else Path(script).read_text()
    runner = None
    try:
        steps = parse_script(text)
        runner = _Runner(steps, out_dir, seed, wait_period)
        runner.run()
        runner.check_invariants()
    except ScriptError as exc:
        accounts = runner.accounts if runner else AccountBook()
        result = ScenarioResult(1, runner.net if runner else None, accounts, error=str(exc))
        if runner and runner.net is not None:
            result.outputs = _write_outputs(runner, out_dir)
        return result
    result = ScenarioResult(0, runner.net, runner.accounts, runner.cases, runner.contracts)
    result.outputs = _write_outputs(runner, out_dir)
    return result


def _write_outputs(runner: _Runner, out_dir: Path) -> dict[str, Path]:
    from .chain import Ledger

    net = runner.net
    ledger = net.ledger if net is not None else Ledger()
    outputs = {"ledger": save_ledger(ledger, out_dir / "ledger.jsonl")}
    if net is not None:
        outputs["trace"] = net.trace.save(out_dir / "trace.jsonl")
        for p in net.parties:
            if p.role is Role.INSURER:
                path = out_dir / f"insurer-{p.name}.json"
                p.db.save(path)
                outputs[f"insurer-{p.name}"] = path
    runner.accounts.save(out_dir / "accounts.json")
    outputs["accounts"] = out_dir / "accounts.json"
    summary = out_dir / "summary.txt"
    summary.write_text(summarize(ledger, runner))
    outputs["summary"] = summary
    return outputs


def summarize(ledger, runner: _Runner) -> str:
    census: dict[str, int] = {}
    for tx in ledger.transactions():
        census[tx.NAME] = census.get(tx.NAME, 0) + 1
    lines = [f"blocks        {len(ledger.blocks)}", f"transactions  {sum(census.values())}"]
    lines += [f"  {k:<11} {v}" for k, v in sorted(census.items())]
    lines.append("claims")
    for (u, i), case in sorted(runner.cases.items()):
        lines.append(f"  {u} -> {i}: {case.state.value}" + (f" (flags: {len(case.flags)})" if case.flags else ""))
    lines.append("balances")
    lines += [f"  {k:<11} {v}" for k, v in sorted(runner.accounts.balances.items())]
    return "\n".join(lines) + "\n"
