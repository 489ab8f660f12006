"""Experiments, sweeps, operating-point calibration and result export."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .ddtea import Activation, StvoConfig
from .errors import EmptyGrid, StvoEsnError, SubcriticalError
from .pipeline import fit_model
from .preprocess import PcaModel, fit_pca, project

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("dataset", "activation", "n_theta", "seed", "accuracy", "nrmse", "wall_ms")


def derive_seeds(master: int, count: int) -> list[int]:
    """Sub-seeds from a master seed: the first ``count`` words of ``SeedSequence(master)``."""
    return [int(s) for s in np.random.SeedSequence(master).generate_state(count)]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    n_theta: int = 100
    activation: str = "stvo"
    variance_target: float | None = 0.8
    n_f: int | None = None
    stvo: StvoConfig = field(default_factory=StvoConfig)
    mask_seeds: tuple = tuple(range(10))
    ridge_lambda: float = 0.0
    readout_method: str = "auto"
    block_size: int = 1000

    def __post_init__(self):
        if self.n_theta < 1:
            raise ValueError("n_theta must be >= 1")
        seeds = tuple(int(s) for s in self.mask_seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise ValueError("mask_seeds must be non-empty and distinct")
        object.__setattr__(self, "mask_seeds", seeds)
        object.__setattr__(self, "activation", Activation(self.activation).value)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stvo"] = self.stvo.to_dict()
        d["mask_seeds"] = list(self.mask_seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "stvo" in d and isinstance(d["stvo"], dict):
            d["stvo"] = StvoConfig.from_dict(d["stvo"])
        return cls(**d)


@dataclass
class SeedResult:
    seed: int
    accuracy: float
    nrmse: float
    wall_ms: float
    predictions: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class ExperimentRecord:
    config: dict
    results: list
    n_f: int | None = None
    artifacts: dict = field(default_factory=dict)

    @property
    def dataset(self) -> str:
        return self.config["dataset"]

    @property
    def activation(self) -> str:
        return self.config["activation"]

    @property
    def n_theta(self) -> int:
        return self.config["n_theta"]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.results])

    @property
    def nrmses(self) -> np.ndarray:
        return np.array([r.nrmse for r in self.results])

    @property
    def accuracy_mean(self) -> float:
        return float(self.accuracies.mean())

    @property
    def accuracy_std(self) -> float:
        return float(self.accuracies.std())

    @property
    def nrmse_mean(self) -> float:
        return float(self.nrmses.mean())

    @property
    def nrmse_std(self) -> float:
        return float(self.nrmses.std())

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "n_f": self.n_f,
            "results": [{"seed": r.seed, "accuracy": r.accuracy, "nrmse": r.nrmse, "wall_ms": r.wall_ms}
                        for r in self.results],
            "summary": {"accuracy_mean": self.accuracy_mean, "accuracy_std": self.accuracy_std,
                        "nrmse_mean": self.nrmse_mean, "nrmse_std": self.nrmse_std},
            "artifacts": self.artifacts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(config=d["config"], results=[SeedResult(**r) for r in d["results"]],
                   n_f=d.get("n_f"), artifacts=d.get("artifacts", {}))


class SweepError(StvoEsnError):
    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def run_experiment(config: ExperimentConfig, train: Dataset, test: Dataset, pca: PcaModel | None = None,
                   threads: int = 1, keep_predictions: bool = False, projections=None) -> ExperimentRecord:
    """Train and test one reservoir per mask seed and aggregate the metrics.

    PCA is fitted on ``train`` once and shared by all seeds. ``projections``
    may carry precomputed ``(train_x', test_x')`` for that PCA.
    """
    if pca is None:
        pca = fit_pca(train.images, variance_target=config.variance_target, n_components=config.n_f)
    if projections is None:
        projections = (project(pca, train.images), project(pca, test.images))
    xp_train, xp_test = projections
    results = []
    for seed in config.mask_seeds:
        t0 = time.perf_counter()
        try:
            model = fit_model(train, config.n_theta, config.activation, config.stvo, seed, pca=pca,
                              ridge_lambda=config.ridge_lambda, method=config.readout_method,
                              block=config.block_size, threads=threads, x_prime=xp_train)
            ev = model.evaluate(test, x_prime=xp_test, block=config.block_size, threads=threads)
        except StvoEsnError as exc:
            ctx = f"{config.dataset}/{config.activation}/n_theta={config.n_theta}/seed={seed}"
            exc.args = (f"{ctx}: {exc}",) + exc.args[1:]
            raise
        wall = (time.perf_counter() - t0) * 1e3
        log.info("%s %s n_theta=%d seed=%d acc=%.4f nrmse=%.4f (%.0f ms)", config.dataset, config.activation,
                 config.n_theta, seed, ev["accuracy"], ev["nrmse"], wall)
        results.append(SeedResult(seed, ev["accuracy"], ev["nrmse"], wall,
                                  ev["predictions"] if keep_predictions else None))
    return ExperimentRecord(config=config.to_dict(), results=results, n_f=pca.n_f)


def _cell_key(d: dict) -> tuple:
    return (d["config"]["activation"], d["config"]["n_theta"])


def sweep(base: ExperimentConfig, n_theta_values, activations, train: Dataset, test: Dataset,
          results_path=None, threads: int = 1, pca: PcaModel | None = None) -> list[ExperimentRecord]:
    """Cross-product of reservoir sizes and activations with shared seeds.

    With ``results_path`` each finished cell is appended as a JSON line and
    cells already present are loaded instead of recomputed.
    """
    n_theta_values = list(n_theta_values)
    if any(v < 1 for v in n_theta_values) or n_theta_values != sorted(n_theta_values):
        raise ValueError("n_theta_values must be positive and sorted")
    done = {}
    path = Path(results_path) if results_path else None
    if path is not None and path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                done[_cell_key(d)] = ExperimentRecord.from_dict(d)
    if pca is None:
        pca = fit_pca(train.images, variance_target=base.variance_target, n_components=base.n_f)
    projections = (project(pca, train.images), project(pca, test.images))
    records = []
    for act, n_theta in itertools.product([Activation(a).value for a in activations], n_theta_values):
        if (act, n_theta) in done:
            records.append(done[(act, n_theta)])
            continue
        cfg = replace(base, n_theta=n_theta, activation=act)
        try:
            rec = run_experiment(cfg, train, test, pca=pca, threads=threads, projections=projections)
        except Exception as exc:
            raise SweepError(f"sweep stopped at {act}/n_theta={n_theta}: {exc}", records) from exc
        records.append(rec)
        if path is not None:
            with open(path, "a") as f:
                f.write(json.dumps(rec.to_dict()) + "\n")
    return records


@dataclass
class CalibrationResult:
    best: StvoConfig
    grid: list  # dicts with j_dc, amplitude, d_t, accuracy

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "grid": self.grid}


def calibrate(train: Dataset, j_dc_values, amplitudes, d_t_values, n_theta: int = 100, seed: int = 0,
              validation_size: int = 5000, variance_target: float | None = 0.8,
              base: StvoConfig | None = None) -> CalibrationResult:
    """Grid-search the oscillator operating point on a held-out tail of ``train``.

    The last ``validation_size`` training samples (at most a fifth of the
    set) are the validation split. ``None`` in ``d_t_values`` means the
    bias-dependent default. The first grid point reaching the best score wins.
    """
    points = list(itertools.product(j_dc_values, amplitudes, d_t_values))
    if not points:
        raise EmptyGrid("calibration grid is empty")
    base = base or StvoConfig()
    v = min(validation_size, len(train) // 5)
    fit_part = train.subset(slice(0, len(train) - v))
    val_part = train.subset(slice(len(train) - v, None))
    pca = fit_pca(fit_part.images, variance_target=variance_target)
    xp_fit, xp_val = project(pca, fit_part.images), project(pca, val_part.images)
    grid, best, best_acc = [], None, -1.0
    for j_dc, amp, d_t in points:
        try:
            cfg = replace(base, j_dc=float(j_dc), amplitude=float(amp), d_t=None if d_t is None else float(d_t))
        except SubcriticalError as exc:
            raise SubcriticalError(f"grid point (j_dc={j_dc}, amplitude={amp}, d_t={d_t}): {exc}", j=j_dc) from exc
        model = fit_model(fit_part, n_theta, Activation.STVO, cfg, seed, pca=pca, x_prime=xp_fit)
        acc = model.evaluate(val_part, x_prime=xp_val)["accuracy"]
        grid.append({"j_dc": cfg.j_dc, "amplitude": cfg.amplitude, "d_t": cfg.d_t, "accuracy": acc})
        log.info("calibrate j_dc=%g amplitude=%g d_t=%.4g -> %.4f", cfg.j_dc, cfg.amplitude, cfg.d_t, acc)
        if acc > best_acc:
            best, best_acc = cfg, acc
    return CalibrationResult(best, grid)


# ---------------------------------------------------------------- export

def _rows(records):
    for rec in records:
        for r in rec.results:
            yield {"dataset": rec.dataset, "activation": rec.activation, "n_theta": rec.n_theta,
                   "seed": r.seed, "accuracy": repr(float(r.accuracy)), "nrmse": repr(float(r.nrmse)),
                   "wall_ms": repr(float(r.wall_ms))}


def export_results(records, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# stvo-esn results schema {SCHEMA_VERSION}\n")
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(_rows(records))
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps({"schema": SCHEMA_VERSION, "records": [r.to_dict() for r in records]}, indent=1)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.write_text(text)
    return path


def import_results(path) -> list:
    """Inverse of :func:`export_results`.

    CSV files come back as ``ExperimentRecord``s whose config holds only
    the CSV columns.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported results schema {doc.get('schema')}")
        return [ExperimentRecord.from_dict(d) for d in doc["records"]]
    lines = text.splitlines()
    if not lines or lines[0] != f"# stvo-esn results schema {SCHEMA_VERSION}":
        raise ValueError("missing or unsupported results schema line")
    records: dict = {}
    for row in csv.DictReader(lines[1:]):
        key = (row["dataset"], row["activation"], int(row["n_theta"]))
        rec = records.setdefault(key, ExperimentRecord(
            config={"dataset": key[0], "activation": key[1], "n_theta": key[2]}, results=[]))
        rec.results.append(SeedResult(int(row["seed"]), float(row["accuracy"]), float(row["nrmse"]),
                                      float(row["wall_ms"])))
    return list(records.values())


# ---------------------------------------------------------------- figures

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def line_chart_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", log_x: bool = True,
                   width: int = 640, height: int = 420) -> str:
    """Minimal self-contained SVG line chart. ``series`` maps label -> (xs, ys)."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.array([1.0])
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.array([0.0])
    tx = np.log10 if log_x else (lambda v: np.asarray(v, float))
    x0, x1 = float(tx(xs_all.min())), float(tx(xs_all.max()))
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    px = lambda v: left + (float(tx(v)) - x0) / (x1 - x0) * pw  # noqa: E731
    py = lambda v: top + (1 - (float(v) - y0) / (y1 - y0)) * ph  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
           f'font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    ticks = sorted(set(xs_all.tolist()))
    for xv in ticks if len(ticks) <= 12 else ticks[:: max(1, len(ticks) // 10)]:
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{ylabel}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(xs, ys):
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = top + 16 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def plot_records(records, out_dir, prefix: str = "sweep") -> list[Path]:
    """Accuracy and NRMSE versus reservoir size, one line per dataset/activation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict = {}
    for rec in records:
        groups.setdefault(f"{rec.dataset} {rec.activation}", []).append(rec)
    paths = []
    for metric, ylabel in (("accuracy_mean", "accuracy"), ("nrmse_mean", "NRMSE")):
        series = {}
        for label, recs in groups.items():
            recs = sorted(recs, key=lambda r: r.n_theta)
            series[label] = ([r.n_theta for r in recs], [getattr(r, metric) for r in recs])
        p = out_dir / f"{prefix}_{ylabel.lower()}.svg"
        p.write_text(line_chart_svg(series, f"{ylabel} vs reservoir size", "N_theta", ylabel))
        paths.append(p)
    return paths
