"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, bench, data
from .ddtea import StvoConfig
from .errors import DataError, EmptyGrid, NumericalError
from .pipeline import EsnModel, fit_model, linear_baseline

log = logging.getLogger("stvo_esn")

SUBCOMMANDS = ("fetch", "calibrate", "train", "eval", "baseline", "sweep", "plot", "inspect")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip("-"):
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment description")
    common.add_argument("--dataset")
    common.add_argument("--n-theta", help="reservoir size, or comma list for sweep")
    common.add_argument("--activation", help="stvo|relu|sigmoid|identity, comma list for sweep")
    common.add_argument("--seeds", help="mask seeds, e.g. 0-9 or 0,3,7")
    common.add_argument("--amplitude", type=float)
    common.add_argument("--j-dc", type=float)
    common.add_argument("--d-t", type=float)
    common.add_argument("--ridge", type=float)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--data-root", help=f"dataset root (default ${data.DATA_ENV} or ./data)")
    common.add_argument("--model", help="model artifact (.npz) for eval/inspect")
    common.add_argument("--results", help="results file (.csv/.json) for plot")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, dotted for nesting (stvo.j_dc=7.2)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = _Parser(prog="stvo-esn", description="Time-multiplexed spin-torque-oscillator reservoir benchmarks")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "fetch": "download a dataset from the configured mirrors",
        "calibrate": "grid-search the oscillator operating point",
        "train": "train one reservoir and write a model artifact",
        "eval": "print test accuracy and NRMSE of a model artifact",
        "baseline": "print accuracy of linear regression on the PCA projection",
        "sweep": "run the reservoir-size x activation grid",
        "plot": "render SVG charts from a results file",
        "inspect": "print model metadata",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise UsageError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def resolve_config(args) -> dict:
    """Defaults <- config file <- --set overrides <- explicit flags."""
    doc = bench.ExperimentConfig().to_dict()
    doc.update({"sweep": {"n_theta": [1, 5, 10, 20, 44, 100, 200, 500, 1000, 2000, 5000],
                          "activations": ["stvo", "relu", "sigmoid", "identity"]},
                "calibration": {"j_dc": [6.5, 7.0, 7.5], "amplitude": [0.25, 0.5, 1.0], "d_t": [None],
                                "n_theta": 100, "validation_size": 5000, "seed": 0}})
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        for key, value in _flatten(user):
            _set_dotted(doc, key, value)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(doc, key, value)
    flags = {"dataset": args.dataset, "stvo.amplitude": args.amplitude, "stvo.j_dc": args.j_dc,
             "stvo.d_t": args.d_t, "ridge_lambda": args.ridge}
    for key, value in flags.items():
        if value is not None:
            _set_dotted(doc, key, value)
    if args.seeds:
        doc["mask_seeds"] = _int_list(args.seeds)
    if args.n_theta:
        sizes = _int_list(args.n_theta)
        doc["n_theta"] = sizes[0]
        doc["sweep"]["n_theta"] = sizes
    if args.activation:
        acts = args.activation.split(",")
        doc["activation"] = acts[0]
        doc["sweep"]["activations"] = acts
    return doc


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k not in ("coefficients",):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _experiment(doc: dict) -> bench.ExperimentConfig:
    fields = {k: v for k, v in doc.items() if k not in ("sweep", "calibration")}
    try:
        return bench.ExperimentConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, NumericalError):
            raise
        raise UsageError(f"invalid configuration: {exc}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, argv, doc: dict, artifacts) -> Path:
    manifest = {
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": doc,
        "seeds": doc.get("mask_seeds"),
        "artifacts": {p.name: _sha256(p) for p in map(Path, artifacts)},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1, default=str))
    return path


def _need(value, flag: str):
    if not value:
        raise UsageError(f"{flag} is required for this command")
    return value


def run(args, argv) -> int:
    doc = resolve_config(args)
    out = Path(args.out)
    root = args.data_root
    cmd = args.command

    if cmd == "fetch":
        dest = data.fetch(doc["dataset"], root)
        print(f"{doc['dataset']} -> {dest}")
        return 0

    if cmd == "inspect":
        model = EsnModel.load(_need(args.model, "--model"))
        print(json.dumps(model.metadata(), indent=1))
        return 0

    if cmd == "plot":
        records = bench.import_results(_need(args.results, "--results"))
        for p in bench.plot_records(records, out):
            print(p)
        return 0

    cfg = _experiment(doc)
    train = data.load_dataset(cfg.dataset, "train", root)
    out.mkdir(parents=True, exist_ok=True)

    if cmd == "calibrate":
        cal = doc["calibration"]
        res = bench.calibrate(train, cal["j_dc"], cal["amplitude"], cal["d_t"], n_theta=cal["n_theta"],
                              seed=cal["seed"], validation_size=cal["validation_size"],
                              variance_target=cfg.variance_target, base=cfg.stvo)
        path = out / "calibration.json"
        path.write_text(json.dumps(res.to_dict(), indent=1))
        write_manifest(out, cmd, argv, doc, [path])
        b = res.best
        print(f"best j_dc={b.j_dc!r} amplitude={b.amplitude!r} d_t={b.d_t!r}")
        return 0

    if cmd == "train":
        seed = cfg.mask_seeds[0]
        model = fit_model(train, cfg.n_theta, cfg.activation, cfg.stvo, seed, variance_target=cfg.variance_target,
                          n_f=cfg.n_f, ridge_lambda=cfg.ridge_lambda, method=cfg.readout_method,
                          block=cfg.block_size, threads=args.threads)
        path = out / "model.npz"
        model.save(path)
        write_manifest(out, cmd, argv, doc, [path])
        print(f"model -> {path} (n_f={model.pca.n_f}, n_theta={model.n_theta}, seed={seed})")
        return 0

    test = data.load_dataset(cfg.dataset, "test", root)

    if cmd == "eval":
        model = EsnModel.load(_need(args.model, "--model"))
        ev = model.evaluate(test, block=cfg.block_size, threads=args.threads)
        print(f"accuracy={ev['accuracy']!r} nrmse={ev['nrmse']!r}")
        return 0

    if cmd == "baseline":
        ev = linear_baseline(train, test, variance_target=cfg.variance_target, n_f=cfg.n_f)
        print(f"accuracy={ev['accuracy']!r} nrmse={ev['nrmse']!r}")
        return 0

    if cmd == "sweep":
        sw = doc["sweep"]
        records = bench.sweep(cfg, sorted(sw["n_theta"]), sw["activations"], train, test,
                              results_path=out / "records.jsonl", threads=args.threads)
        paths = [bench.export_results(records, out / "results.csv"),
                 bench.export_results(records, out / "results.json")]
        paths += bench.plot_records(records, out)
        write_manifest(out, cmd, argv, doc, paths)
        for rec in records:
            print(f"{rec.dataset} {rec.activation} n_theta={rec.n_theta} "
                  f"accuracy={rec.accuracy_mean:.4f}+-{rec.accuracy_std:.4f} nrmse={rec.nrmse_mean:.4f}")
        return 0

    raise UsageError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return run(args, argv)
    except (UsageError, EmptyGrid) as exc:
        print(f"stvo-esn: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"stvo-esn: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"stvo-esn: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
