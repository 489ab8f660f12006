"""Acceptance gate: one verdict line per criterion in the terminal summary.

Criteria 7 and 8 are self-contained. The others need the IDX files under
``$STVO_ESN_DATA/<dataset>/`` and report BLOCKED when those are absent.
With data present the MNIST criteria take tens of minutes.
"""
import functools
import os
import time

import numpy as np
import pytest

from conftest import Criterion
from stvo_esn import bench, data
from stvo_esn.bench import ExperimentConfig
from stvo_esn.ddtea import StvoConfig, alpha, beta, n_exponent, steady_state, step
from stvo_esn.errors import DataError
from stvo_esn.pipeline import linear_baseline
from stvo_esn.preprocess import fit_pca
from stvo_esn.readout import pseudoinverse

pytestmark = pytest.mark.acceptance

N_F = {"mnist": 44, "emnist-letters": 38, "fashion-mnist": 24}
HEADLINE = {"mnist": (0.981, 0.005), "emnist-letters": (0.884, 0.010), "fashion-mnist": (0.869, 0.010)}
THREADS = os.cpu_count() or 1
SEEDS_10 = tuple(range(10))
SEEDS_3 = (0, 1, 2)


def require(crit: Criterion, *names):
    missing = [n for n in names if not data.dataset_available(n)]
    if missing:
        crit.block(f"dataset(s) {', '.join(missing)} not found under ${data.DATA_ENV} "
                   f"(= {data.data_root()}); run `stvo-esn fetch --dataset <name>`")


@functools.cache
def splits(name):
    return data.load_dataset(name, "train"), data.load_dataset(name, "test")


@functools.cache
def pca_for(name):
    return fit_pca(splits(name)[0].images, n_components=N_F[name])


@functools.cache
def operating_point(name) -> StvoConfig:
    train, _ = splits(name)
    res = bench.calibrate(train, [6.5, 7.0, 7.5], [0.25, 0.5, 1.0], [None], n_theta=100, validation_size=5000)
    return res.best


def headline_run(name, seeds=SEEDS_10):
    cfg = ExperimentConfig(dataset=name, n_theta=5000, activation="stvo", n_f=N_F[name],
                           stvo=operating_point(name), mask_seeds=seeds)
    return bench.run_experiment(cfg, *splits(name), pca=pca_for(name), threads=THREADS)


@functools.cache
def mnist_headline():
    return headline_run("mnist")


def sized_run(name, n_theta, activation, seeds=SEEDS_3, keep=False):
    stvo = operating_point(name) if activation == "stvo" else StvoConfig()
    cfg = ExperimentConfig(dataset=name, n_theta=n_theta, activation=activation, n_f=N_F[name], stvo=stvo,
                           mask_seeds=seeds)
    return bench.run_experiment(cfg, *splits(name), pca=pca_for(name), threads=THREADS, keep_predictions=keep)


# ------------------------------------------------------------ 1, 2, 10

def test_criterion_01_mnist_headline():
    crit = Criterion(1, "MNIST headline accuracy")
    require(crit, "mnist")
    rec = mnist_headline()
    target, tol = HEADLINE["mnist"]
    acc = rec.accuracy_mean
    crit.check(abs(acc - target) <= tol,
               f"{acc:.4f} +- {rec.accuracy_std:.4f} over {len(rec.results)} seeds, expected {target} +- {tol} "
               f"at j_dc={rec.config['stvo']['j_dc']} amplitude={rec.config['stvo']['amplitude']}")


def test_criterion_02_emnist_fmnist_headline():
    crit = Criterion(2, "EMNIST-letters / FMNIST accuracy")
    require(crit, "emnist-letters", "fashion-mnist")
    n_seeds = int(os.environ.get("STVO_ESN_ACCEPT_SEEDS", "10"))
    parts, ok = [], True
    for name in ("emnist-letters", "fashion-mnist"):
        rec = headline_run(name, tuple(range(n_seeds)))
        target, tol = HEADLINE[name]
        ok &= abs(rec.accuracy_mean - target) <= tol
        parts.append(f"{name} {rec.accuracy_mean:.4f} (expected {target} +- {tol})")
    crit.check(ok, "; ".join(parts) + f"; {n_seeds} seed(s)")


def test_criterion_10_determinism():
    crit = Criterion(10, "bit-identical rerun of the headline experiment")
    require(crit, "mnist")
    first = [(r.seed, r.accuracy, r.nrmse) for r in mnist_headline().results]
    second = [(r.seed, r.accuracy, r.nrmse) for r in headline_run("mnist").results]
    crit.check(first == second, f"{len(first)} per-seed (accuracy, nrmse) pairs identical: {first == second}")


# ------------------------------------------------------------ 3, 4

def test_criterion_03_pca_dimensionality():
    crit = Criterion(3, "PCA dimensionality at 80% variance")
    require(crit, *N_F)
    found = {name: fit_pca(splits(name)[0].images, variance_target=0.8).n_f for name in N_F}
    crit.check(all(abs(found[n] - N_F[n]) <= 2 for n in N_F),
               ", ".join(f"{n}: {found[n]} (expected {N_F[n]} +- 2)" for n in N_F))


def test_criterion_04_intraclass_variance():
    crit = Criterion(4, "intraclass variance")
    require(crit, *N_F)
    try:
        conv = data.select_convention(splits("mnist")[0])
        avg = {n: data.intraclass_variance(splits(n)[0], conv)[1] for n in N_F}
    except DataError as exc:
        crit.check(False, str(exc))
    close = all(abs(avg[n] - data.PUBLISHED_INTRACLASS[n]) <= 0.01 * data.PUBLISHED_INTRACLASS[n] for n in N_F)
    ratio = avg["emnist-letters"] / avg["mnist"]
    crit.check(close and abs(ratio - 1.28) <= 0.02,
               f"convention {conv}; " + ", ".join(f"{n}: {avg[n]:.1f}" for n in N_F) + f"; ratio {ratio:.3f}")


# ------------------------------------------------------------ 5, 6, 9

def test_criterion_05_linear_saturation():
    crit = Criterion(5, "identity reservoir equals linear baseline")
    require(crit, "mnist")
    train, test = splits("mnist")
    base = linear_baseline(train, test, pca=pca_for("mnist"))
    top2 = np.sort(base["scores"], axis=0)[-2:]
    near_tie = (top2[1] - top2[0]) <= 1e-9 * np.abs(base["scores"]).max()
    worst, checked = 0, 0
    for n_theta in (44, 100, 500):
        rec = sized_run("mnist", n_theta, "identity", keep=True)
        for r in rec.results:
            differ = r.predictions != base["predictions"]
            worst = max(worst, int(np.sum(differ & ~near_tie)))
            checked += 1
    crit.check(worst == 0, f"{checked} (n_theta, seed) runs; max non-tie label mismatches {worst}; "
                           f"baseline accuracy {base['accuracy']:.4f}")


def test_criterion_06_activation_equivalence():
    crit = Criterion(6, "nonlinear activations agree at n_theta=2000")
    require(crit, "mnist")
    acc = {act: sized_run("mnist", 2000, act).accuracy_mean for act in ("stvo", "relu", "sigmoid", "identity")}
    nonlinear = [acc[a] for a in ("stvo", "relu", "sigmoid")]
    spread = max(nonlinear) - min(nonlinear)
    gap = min(nonlinear) - acc["identity"]
    crit.check(spread <= 0.01 and gap > 0.05,
               ", ".join(f"{a} {v:.4f}" for a, v in acc.items()) + f"; spread {spread:.4f}, gap {gap:.4f}")


def test_criterion_09_small_reservoir():
    crit = Criterion(9, "small-reservoir degradation")
    require(crit, "mnist")
    acc = {n: sized_run("mnist", n, "stvo").accuracy_mean for n in (1, 5, 44)}
    crit.check(acc[1] < 0.30 and acc[5] < acc[44] - 0.10,
               f"n_theta=1: {acc[1]:.4f}, 5: {acc[5]:.4f}, 44: {acc[44]:.4f}")


# ------------------------------------------------------------ 7

def rk4_oracle(s0, j, d, steps=4000):
    """Classical RK4 on ds/dt = alpha s + beta s^(n+1), vectorised over cases."""
    a, b, n = alpha(j), beta(j), n_exponent(j)
    f = lambda s: a * s + b * s ** (n + 1)  # noqa: E731
    h = d / steps
    s = np.array(s0, dtype=float)
    for _ in range(steps):
        k1 = f(s)
        k2 = f(s + 0.5 * h * k1)
        k3 = f(s + 0.5 * h * k2)
        k4 = f(s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def test_criterion_07_dynamics_suite():
    crit = Criterion(7, "oscillator dynamics property suite")
    rng = np.random.default_rng(7)
    cases = 120
    t0 = time.perf_counter()

    def draw_j(lo=6.1, hi=8.5):
        return rng.uniform(lo, hi, cases)

    def to_d(j, tau):
        return tau / (n_exponent(j) * alpha(j))

    j = draw_j()
    star = np.array([steady_state(x) for x in j])
    fixed = np.max(np.abs(step(star, j, 10 ** rng.uniform(-6, 0, cases)) - star))

    j, s = draw_j(), rng.uniform(0.05, 0.999, cases)
    d1, d2 = to_d(j, rng.uniform(1e-3, 5, cases)), to_d(j, rng.uniform(1e-3, 5, cases))
    semigroup = np.max(np.abs(step(step(s, j, d1), j, d2) / step(s, j, d1 + d2) - 1))

    j, s = draw_j(), rng.uniform(0.05, 0.999, cases)
    d = to_d(j, 10 ** rng.uniform(-3, 1, cases))
    oracle = np.max(np.abs(step(s, j, d) / rk4_oracle(s, j, d) - 1))

    j, s = draw_j(), rng.uniform(0.05, 0.999, cases)
    star = np.array([steady_state(x) for x in j])
    new = step(s, j, to_d(j, rng.uniform(1e-3, 20, cases)))
    keep = np.abs(s - star) > 1e-6
    monotone = bool(np.all((np.minimum(s, star) < new) & (new < np.maximum(s, star)) | ~keep))

    j, s = draw_j(), rng.uniform(0.05, 0.999, cases)
    vanishing = np.max(np.abs(step(s, j, np.full(cases, 1e-15)) / s - 1))

    elapsed = time.perf_counter() - t0
    ok = fixed < 1e-10 and semigroup < 1e-9 and oracle < 1e-6 and monotone and vanishing < 1e-9 and elapsed < 1.0
    crit.check(ok, f"{cases} cases each; fixed point {fixed:.1e}, semigroup {semigroup:.1e}, ODE {oracle:.1e}, "
                   f"monotone {monotone}, d_t->0 {vanishing:.1e}; {elapsed:.2f} s")


# ------------------------------------------------------------ 8

def test_criterion_08_pseudoinverse():
    crit = Criterion(8, "Penrose conditions")
    rng = np.random.default_rng(8)
    worst = 0.0
    kinds = {"tall": 0, "wide": 0, "rank-deficient": 0}
    for i in range(50):
        kind = list(kinds)[i % 3]
        kinds[kind] += 1
        m, n = rng.integers(2, 60, 2)
        if kind == "tall":
            m, n = max(m, n) + 1, min(m, n)
            a = rng.normal(size=(m, n))
        elif kind == "wide":
            m, n = min(m, n), max(m, n) + 1
            a = rng.normal(size=(m, n))
        else:
            r = int(rng.integers(1, min(m, n)))
            a = rng.normal(size=(m, r)) @ rng.normal(size=(r, n))
        p = pseudoinverse(a)
        norm = np.linalg.norm(a, 2)
        res = (np.linalg.norm(a @ p @ a - a, 2), np.linalg.norm(p @ a @ p - p, 2),
               np.linalg.norm((a @ p).T - a @ p, 2), np.linalg.norm((p @ a).T - p @ a, 2))
        worst = max(worst, max(res) / norm)
    crit.check(worst < 1e-8, f"50 matrices {kinds}; worst residual {worst:.1e} x ||A||")
