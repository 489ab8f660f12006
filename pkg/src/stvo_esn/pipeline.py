"""End-to-end reservoir classifier: project, mask, drive the oscillator, read out."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import readout
from .data import Dataset, one_hot
from .ddtea import Activation, StvoConfig, run_reservoir
from .errors import DegenerateTargets
from .preprocess import (ARTIFACT_VERSION, PcaModel, RandomMask, ScaleStats, encode, fit_pca,
                         generate_mask, project, to_current)

DEFAULT_BLOCK = 1000


def reservoir_states(x_prime, mask: RandomMask, activation, stvo: StvoConfig, stats: ScaleStats) -> np.ndarray:
    """Reservoir output for rows of reduced vectors, returned as ``(n_theta, m)``.

    The oscillator is driven by the affine current signal; pointwise
    activations see the masked values divided by their training RMS.
    """
    activation = Activation(activation)
    x_dd = encode(mask, x_prime)
    if activation is Activation.STVO:
        out = run_reservoir(to_current(x_dd, stvo, stats), stvo, activation)
    else:
        gain = 1.0 / stats.rms if stats.rms > 0 else 1.0
        out = run_reservoir(x_dd * gain, stvo, activation)
    return out.T


def _blocks(n: int, size: int):
    return [slice(lo, min(lo + size, n)) for lo in range(0, n, size)]


def masked_stats(x_prime, mask: RandomMask, block: int = DEFAULT_BLOCK) -> ScaleStats:
    stats, seen = None, 0
    for sl in _blocks(x_prime.shape[0], block):
        part = ScaleStats.from_values(encode(mask, x_prime[sl]))
        m = sl.stop - sl.start
        stats = part if stats is None else stats.merge(part, seen, m)
        seen += m
    return stats


def _map_blocks(fn, n, block, threads):
    slices = _blocks(n, block)
    if threads <= 1 or len(slices) == 1:
        for sl in slices:
            yield sl, fn(sl)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map preserves order, keeping accumulation deterministic.
        yield from zip(slices, pool.map(fn, slices))


def nrmse(y_all, t_all) -> float:
    """Normalised RMS error between score and target columns."""
    y = np.asarray(y_all, dtype=float)
    t = np.asarray(t_all, dtype=float)
    if y.shape != t.shape:
        raise ValueError(f"scores {y.shape} and targets {t.shape} differ in shape")
    num = np.mean(np.sum((y - t) ** 2, axis=0))
    den = np.mean(np.sum((t - t.mean(axis=1, keepdims=True)) ** 2, axis=0))
    if den == 0:
        raise DegenerateTargets("all targets are identical")
    return float(np.sqrt(num / den))


@dataclass(eq=False)
class EsnModel:
    pca: PcaModel
    mask: RandomMask
    activation: Activation
    stvo: StvoConfig
    stats: ScaleStats
    weights: readout.ReadoutWeights
    n_classes: int

    @property
    def n_theta(self) -> int:
        return self.mask.n_theta

    def states(self, x_prime) -> np.ndarray:
        return reservoir_states(x_prime, self.mask, self.activation, self.stvo, self.stats)

    def scores(self, images, block: int = DEFAULT_BLOCK, threads: int = 1, projected: bool = False) -> np.ndarray:
        xp = np.asarray(images, dtype=float) if projected else project(self.pca, images)
        out = np.empty((self.n_classes, xp.shape[0]))
        fn = lambda sl: readout.predict(self.weights, self.states(xp[sl]))  # noqa: E731
        for sl, y in _map_blocks(fn, xp.shape[0], block, threads):
            out[:, sl] = y
        return out

    def predict(self, images, **kw) -> np.ndarray:
        return readout.classify(self.scores(images, **kw))

    def evaluate(self, ds: Dataset, x_prime=None, **kw) -> dict:
        y = self.scores(ds.images if x_prime is None else x_prime, projected=x_prime is not None, **kw)
        pred = readout.classify(y)
        return {
            "accuracy": float(np.mean(pred == ds.labels)),
            "nrmse": nrmse(y, one_hot(ds.labels, self.n_classes)),
            "predictions": pred,
        }

    def metadata(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "n_f": self.pca.n_f,
            "n_theta": self.n_theta,
            "n_classes": self.n_classes,
            "activation": self.activation.value,
            "mask": self.mask.to_dict(),
            "stvo": self.stvo.to_dict(),
            "scale_stats": {"lo": self.stats.lo, "hi": self.stats.hi, "rms": self.stats.rms},
            "ridge_lambda": self.weights.ridge_lambda,
            "explained_variance_ratio": float(self.pca.explained_variance_ratio.sum()),
        }

    def save(self, path) -> None:
        np.savez(path, meta=np.array(json.dumps(self.metadata())), w_out=self.weights.w_out,
                 **self.pca.to_arrays())

    @classmethod
    def load(cls, path) -> "EsnModel":
        with np.load(path) as f:
            meta = json.loads(str(f["meta"]))
            pca = PcaModel.from_arrays(f)
            w = readout.ReadoutWeights(np.asarray(f["w_out"]), meta["ridge_lambda"])
        if meta["version"] != ARTIFACT_VERSION:
            raise ValueError(f"model artifact version {meta['version']} is not supported")
        return cls(pca=pca, mask=RandomMask.from_dict(meta["mask"]), activation=Activation(meta["activation"]),
                   stvo=StvoConfig.from_dict(meta["stvo"]), stats=ScaleStats(**meta["scale_stats"]),
                   weights=w, n_classes=meta["n_classes"])


def fit_model(train: Dataset, n_theta: int, activation="stvo", stvo: StvoConfig | None = None, seed: int = 0,
              pca: PcaModel | None = None, variance_target: float | None = 0.8, n_f: int | None = None,
              ridge_lambda: float = 0.0, method: str = "auto", block: int = DEFAULT_BLOCK,
              threads: int = 1, x_prime=None) -> EsnModel:
    """Train the readout of a fresh reservoir on ``train``.

    ``method`` picks the readout solver: ``svd`` materialises all reservoir
    states, ``gram`` streams ``S S^T`` in blocks, ``auto`` chooses ``svd``
    while the state matrix stays under ~2e7 entries.
    """
    stvo = stvo or StvoConfig()
    activation = Activation(activation)
    if pca is None:
        pca = fit_pca(train.images, variance_target=variance_target, n_components=n_f)
    xp = project(pca, train.images) if x_prime is None else x_prime
    mask = generate_mask(n_theta, pca.n_f, seed)
    stats = masked_stats(xp, mask, block)
    t = one_hot(train.labels, train.n_classes)
    if method == "auto":
        method = "svd" if n_theta * xp.shape[0] <= 2e7 else "gram"
    fn = lambda sl: reservoir_states(xp[sl], mask, activation, stvo, stats)  # noqa: E731
    if method == "svd":
        s = np.empty((n_theta, xp.shape[0]))
        for sl, block_states in _map_blocks(fn, xp.shape[0], block, threads):
            s[:, sl] = block_states
        w = readout.train_readout(s, t, ridge_lambda, method="svd")
    elif method == "gram":
        acc = readout.GramAccumulator(n_theta, train.n_classes)
        for sl, block_states in _map_blocks(fn, xp.shape[0], block, threads):
            acc.add(block_states, t[:, sl])
        w = acc.solve(ridge_lambda)
    else:
        raise ValueError(f"unknown readout method {method!r}")
    return EsnModel(pca, mask, activation, stvo, stats, w, train.n_classes)


def linear_baseline(train: Dataset, test: Dataset, pca: PcaModel | None = None,
                    variance_target: float | None = 0.8, n_f: int | None = None) -> dict:
    """Direct regression on the PCA projection: ``argmax(T X'^+ x')``."""
    if pca is None:
        pca = fit_pca(train.images, variance_target=variance_target, n_components=n_f)
    xp_train = project(pca, train.images).T
    w = readout.train_readout(xp_train, one_hot(train.labels, train.n_classes), method="svd")
    y = readout.predict(w, project(pca, test.images).T)
    pred = readout.classify(y)
    return {
        "accuracy": float(np.mean(pred == test.labels)),
        "nrmse": nrmse(y, one_hot(test.labels, test.n_classes)),
        "predictions": pred,
        "scores": y,
        "n_f": pca.n_f,
    }
