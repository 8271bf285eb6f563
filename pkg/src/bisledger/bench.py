"""Throughput benchmark: generate, validate and mine a claim-heavy workload.

Per contract the default mix is one SCT, one sensor genesis, ``anchors``
data anchors, one CR, one DAT and one DT; contracts repeat until exactly
``n`` transactions exist. Only build + admission validation is timed;
mining runs on the virtual clock and is excluded.
"""
from __future__ import annotations

import json
import math
import random
import tempfile
import time
from dataclasses import dataclass, field

from .builders import (
    build_anchor,
    build_claim,
    build_contract,
    build_decision,
    build_sensor_genesis,
    finish,
    draft_access,
)
from .crypto import KeyPair, KeyRing
from .netsim import Network
from .store import FileStore
from .transactions import Scope, Verdict, tx_size


@dataclass
class KindStats:
    samples_us: list[float] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.samples_us)

    @property
    def mean_us(self) -> float:
        return sum(self.samples_us) / len(self.samples_us)

    @property
    def p95_us(self) -> float:
        return percentile(self.samples_us, 95)

    @property
    def mean_size(self) -> float:
        return sum(self.sizes) / len(self.sizes)


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile."""
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class BenchReport:
    n_transactions: int
    n_blocks: int
    payload_size: int
    seed: int
    kinds: dict[str, KindStats]
    wall_seconds: float

    @property
    def total_bytes(self) -> int:
        return sum(sum(k.sizes) for k in self.kinds.values())

    def to_json(self) -> dict:
        return {
            "n_transactions": self.n_transactions,
            "n_blocks": self.n_blocks,
            "payload_size": self.payload_size,
            "seed": self.seed,
            "wall_seconds": round(self.wall_seconds, 3),
            "total_bytes": self.total_bytes,
            "kinds": {
                name: {
                    "count": k.count,
                    "mean_us": round(k.mean_us, 2),
                    "p95_us": round(k.p95_us, 2),
                    "size_bytes": round(k.mean_size, 1),
                    "min_size": min(k.sizes),
                    "max_size": max(k.sizes),
                }
                for name, k in self.kinds.items()
            },
        }

    def to_text(self) -> str:
        rows = [f"{'kind':<8} {'count':>7} {'mean_us':>10} {'p95_us':>10} {'size_B':>8}"]
        for name, k in self.kinds.items():
            rows.append(f"{name:<8} {k.count:>7} {k.mean_us:>10.1f} {k.p95_us:>10.1f} {k.mean_size:>8.0f}")
        rows.append(f"transactions {self.n_transactions} in {self.n_blocks} blocks, "
                    f"{self.total_bytes} bytes on chain, payload {self.payload_size} B, "
                    f"wall {self.wall_seconds:.2f} s")
        return "\n".join(rows)


def bench_poc(n: int, payload_size: int = 1024, seed: int = 0, anchors_per_contract: int = 3,
              store_root: str | None = None, block_every: int = 200) -> BenchReport:
    if n < 1:
        raise ValueError("n must be at least 1")
    if payload_size < 1:
        raise ValueError("payload size must be at least 1 byte")
    rng = random.Random(seed)
    net = Network(miners=1, wait_period=1000, seed=seed)
    insurer = KeyRing("insurer", rng=random.Random(rng.getrandbits(64)))
    kinds: dict[str, KindStats] = {}
    produced = 0
    started = time.perf_counter()

    tmp = tempfile.TemporaryDirectory(prefix="bis-bench-") if store_root is None else None
    store = FileStore(store_root or tmp.name)

    def timed(make):
        nonlocal produced
        if isinstance(make, tuple):
            # the off-chain write (and its hashing) is not timed
            prepare, make = make
            prepared = prepare()
            t0 = time.perf_counter()
            tx = make(prepared)
        else:
            t0 = time.perf_counter()
            tx = make()
        net.submit(tx)
        elapsed = (time.perf_counter() - t0) * 1e6
        stats = kinds.setdefault(tx.NAME, KindStats())
        stats.samples_us.append(elapsed)
        stats.sizes.append(tx_size(tx))
        produced += 1
        if len(net.mempool) >= block_every:
            net.confirm()
        return tx

    try:
        contract_no = 0
        while produced < n:
            user = KeyRing(f"user{contract_no}", rng=random.Random(rng.getrandbits(64)))
            sensor = KeyPair.generate(rng)
            terms = f"policy=vehicle;premium={100 + contract_no % 50};n={contract_no}".encode()
            steps = []
            sct_box = {}

            def sct_step():
                sct_box["sct"] = build_contract(user, insurer, terms)
                return sct_box["sct"]
            steps.append(sct_step)
            steps.append(lambda: build_sensor_genesis(user, insurer, sct_box["sct"], sensor.pk))
            for _ in range(anchors_per_contract):
                steps.append((
                    lambda: store.put(sensor.pk, rng.randbytes(payload_size), net.clock),
                    lambda receipt: build_anchor(sensor, net.view.sensor_tip(sensor.pk), receipt.payload_hash),
                ))
            cr_box = {}

            def claim_step():
                cr_box["cr"] = build_claim(user, net.view, sct_box["sct"].t_id, b"claim: collision")
                return cr_box["cr"]
            steps.append(claim_step)
            steps.append(lambda: finish(
                draft_access(net.view, cr_box["cr"].t_id, Scope((sensor.pk,), 0, 2**63 - 1)),
                {"insurance_sign": insurer, "user_sign": user}))
            steps.append(lambda: build_decision(insurer, user, net.view, net.view.chain(sct_box["sct"].t_id)[-1],
                                                Verdict.APPROVED, 500))
            for step in steps:
                if produced >= n:
                    break
                timed(step)
            contract_no += 1
        net.confirm()
    finally:
        if tmp is not None:
            tmp.cleanup()

    mined = sum(len(b.tx_ids) for b in net.ledger.blocks)
    return BenchReport(mined, len(net.ledger.blocks), payload_size, seed, kinds,
                       time.perf_counter() - started)


def report_json(report: BenchReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
