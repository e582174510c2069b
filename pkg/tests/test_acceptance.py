"""Acceptance suite: one test per criterion, each printing a pass/fail line in the summary."""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_batch
from oracles import cross_entropy, pc_enumerate, uc_enumerate
from lps.evaluation import hungarian
from lps.model import backward, forward, init_params
from lps.numeric import grad_check
from lps.objective import (
    ClassDistribution,
    Hyperparams,
    TrainSchedule,
    adaptive_margin_loss,
    adaptive_margins,
    am_batch_loss,
    confidence_threshold,
    entropy_regularizer,
    pc_loss,
    total_loss,
    uc_loss,
)
from lps.train import ABLATIONS, load_config, run_experiment

BENCHMARK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.cfg"
N_GRAD = 50
HP = Hyperparams()


def _kl_uniform(p):
    K = len(p)
    return sum(x * math.log(x * K) for x in p if x > 0)


# -- 1 ------------------------------------------------------------------------


def _grad_cases(rng):
    K = int(rng.choice([3, 5]))
    B = int(rng.integers(4, 17))
    D = int(rng.integers(2, 9))
    batch, zw, zs = random_batch(rng, B=B, K=K, D=D, n_labeled=int(rng.integers(1, 4)),
                                 n_confident=int(rng.integers(0, 4)))
    return K, batch, zw, zs


def _worst_am_single(rng):
    worst = 0.0
    for _ in range(N_GRAD):
        K = int(rng.choice([3, 5]))
        y = int(rng.integers(K))
        delta = adaptive_margins(ClassDistribution(rng.dirichlet(np.ones(K))), HP.C)

        def f(z):
            r = adaptive_margin_loss(z, y, delta)
            return r.value, r.grad

        worst = max(worst, grad_check(f, rng.standard_normal(K) * 2))
    return worst


def _worst_batch(rng, fn):
    worst = 0.0
    for _ in range(N_GRAD):
        K, batch, zw, zs = _grad_cases(rng)
        dist = ClassDistribution(rng.dirichlet(np.ones(K)))

        def f(x):
            r = fn(batch, x[0], x[1], dist)
            return r.value, r.grad

        worst = max(worst, grad_check(f, np.stack([zw, zs])))
    return worst


def _worst_entropy(rng):
    worst = 0.0
    for _ in range(N_GRAD):
        K = int(rng.choice([3, 5]))
        z = rng.standard_normal((int(rng.integers(1, 17)), K)) * 2
        worst = max(worst, grad_check(lambda x: (entropy_regularizer(x).value, entropy_regularizer(x).grad), z))
    return worst


def _worst_total_with_model(rng):
    worst = 0.0
    for i in range(N_GRAD):
        K, batch, _, _ = _grad_cases(rng)
        params = init_params(batch.weak.shape[1], K, 4 if i % 2 else None, rng)
        dist = ClassDistribution(rng.dirichlet(np.ones(K)))

        def f(vec):
            q = params.with_flat(vec)
            r = total_loss(batch, forward(q, batch.weak), forward(q, batch.strong), dist)
            gw, gs = backward(q, batch.weak, r.grad[0]), backward(q, batch.strong, r.grad[1])
            return r.value, np.concatenate([(gw[n] + gs[n]).ravel() for n in q.names])

        worst = max(worst, grad_check(f, params.flat()))
    return worst


def test_criterion_1_gradient_suite(report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    errors = {
        "l_am": _worst_am_single(rng),
        "L_AM batch": _worst_batch(rng, lambda b, zw, zs, d: am_batch_loss(b, zw, zs, adaptive_margins(d, HP.C))),
        "L_PC": _worst_batch(rng, lambda b, zw, zs, d: pc_loss(b, zw, zs, HP)),
        "L_UC": _worst_batch(rng, lambda b, zw, zs, d: uc_loss(b, zw, zs, HP)),
        "R_Entropy": _worst_entropy(rng),
        "L_total with model": _worst_total_with_model(rng),
    }
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in errors.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f"; {elapsed:.1f}s"
    assert report("1 gradient suite", ok, detail), detail


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_degeneracy(report):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 11))
        z = rng.standard_normal(K) * float(rng.choice([0.1, 1.0, 10.0]))
        y = int(rng.integers(K))
        worst = max(worst, abs(adaptive_margin_loss(z, y, np.zeros(K)).value - cross_entropy(list(z), y)))
    uniform_zero = all(np.all(adaptive_margins(ClassDistribution.uniform(K), C) == 0.0)
                       for K in range(2, 21) for C in (0.5, 1.0, 10.0, 20.0))
    ok = worst < 1e-12 and uniform_zero
    detail = f"max |l_am - CE| = {worst:.1e}; uniform gives zero margins: {uniform_zero}"
    assert report("2 degeneracy", ok, detail), detail


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_margin_ordering(report):
    rng = np.random.default_rng(103)
    order_ok, worst = True, 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 11))
        pi = rng.dirichlet(np.ones(K) * float(rng.choice([0.3, 1.0, 5.0])))
        C = float(rng.choice([1.0, 10.0, 20.0]))
        delta = adaptive_margins(ClassDistribution(pi), C)
        order_ok &= np.array_equal(np.argsort(delta, kind="stable"), np.argsort(pi, kind="stable")[::-1])
        worst = max(worst, abs(delta[np.argmax(pi)] + _kl_uniform(pi) * C))
    ok = bool(order_ok) and worst < 1e-12
    detail = f"order reversed: {bool(order_ok)}; max |Delta_mode + KL*C| = {worst:.1e}"
    assert report("3 margin ordering", ok, detail), detail


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_hungarian(report):
    rng = np.random.default_rng(104)
    start = time.perf_counter()
    mismatches = 0
    for n in range(2, 8):
        perms = list(itertools.permutations(range(n)))
        for _ in range(200):
            cost = rng.random((n, n)) * 100
            best = min(sum(cost[i, p[i]] for i in range(n)) for p in perms)
            mismatches += hungarian(cost).total_cost != best
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    detail = f"{mismatches} mismatches over 1200 matrices; {elapsed:.1f}s"
    assert report("4 hungarian vs brute force", ok, detail), detail


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_contrastive_enumeration(report):
    rng = np.random.default_rng(105)
    worst_pc = worst_uc = 0.0
    for _ in range(100):
        B = int(rng.integers(2, 7))  # 2B <= 12 views
        n_lab = int(rng.integers(0, B + 1))
        batch, zw, zs = random_batch(rng, B=B, K=3, n_labeled=n_lab, n_confident=int(rng.integers(0, B - n_lab + 1)))
        keep = np.flatnonzero(batch.confident_set)
        views = np.concatenate([zw[keep], zs[keep]])
        targets = list(batch.targets[keep]) * 2
        worst_pc = max(worst_pc, abs(pc_loss(batch, zw, zs, HP).value - pc_enumerate(views, targets, HP.tau)))

        low = batch.low_conf_set
        allviews = np.concatenate([zw, zs])
        partner = np.concatenate([np.arange(B, 2 * B), np.arange(B)])
        expected = uc_enumerate(allviews, partner, np.concatenate([low, low]), HP.tau)
        worst_uc = max(worst_uc, abs(uc_loss(batch, zw, zs, HP).value - expected))
    ok = worst_pc < 1e-10 and worst_uc < 1e-10
    detail = f"max error L_PC {worst_pc:.1e}, L_UC {worst_uc:.1e}"
    assert report("5 contrastive enumeration", ok, detail), detail


# -- 6 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_directional_reproduction(report):
    base = load_config(BENCHMARK_CONFIG)
    start = time.perf_counter()
    novel, kl_drops = {}, []
    for seed in range(5):
        for variant, flags in ABLATIONS.items():
            cfg = base.replace(data_seed=seed, init_seed=seed, batch_seed=seed, **flags)
            recs = run_experiment(cfg).records
            novel.setdefault(variant, []).append(recs[-1].novel_acc)
            if variant == "full":
                kl_drops.append(recs[-1].kl_to_prior < recs[10].kl_to_prior)
    elapsed = time.perf_counter() - start
    novel = {k: np.array(v) for k, v in novel.items()}
    beats_am = int(np.sum(novel["full"] > novel["no_am"]))
    beats_pc = int(np.sum(novel["full"] > novel["no_pc"]))
    drops = {k: float(np.mean(novel["full"] - v)) for k, v in novel.items() if k != "full"}
    largest = max(drops, key=drops.get)

    a = beats_am >= 4 and beats_pc >= 4
    b = largest == "no_entropy"
    c = all(kl_drops)
    t = elapsed < 15 * 60
    report("6a full beats no-AM and no-PC in >=4/5 seeds", a, f"no-AM {beats_am}/5, no-PC {beats_pc}/5")
    report("6b no-entropy has the largest mean novel drop", b,
           ", ".join(f"{k} {v:+.3f}" for k, v in drops.items()))
    report("6c final KL below epoch-10 KL in every seed", c, f"{sum(kl_drops)}/5")
    report("6 runtime under 15 min", t, f"{elapsed:.0f}s")
    assert a and b and c and t


# -- 7 ------------------------------------------------------------------------


def test_criterion_7_threshold_schedule(report):
    seen = (0, 1, 2, 3)
    T = 1000
    start = confidence_threshold(5, seen, TrainSchedule(0, T))
    end = confidence_threshold(5, seen, TrainSchedule(T, T))
    seen_values = {confidence_threshold(c, seen, TrainSchedule(t, T)) for c in seen for t in range(0, T + 1, 7)}
    ok = start == 0.4 and end == 0.8 and seen_values == {0.95}
    detail = f"novel(0)={start!r}, novel(T)={end!r}, seen values {sorted(seen_values)}"
    assert report("7 threshold schedule", ok, detail), detail


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_determinism(report, tmp_path):
    cfg = load_config(BENCHMARK_CONFIG).replace(epochs=5, data_seed=7, init_seed=7, batch_seed=7)
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
    ok = a == b and len(a) > 0
    assert report("8 determinism", ok, f"{len(a)} bytes compared"), "metrics.jsonl differs between identical runs"
