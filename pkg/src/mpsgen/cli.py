"""Command line entry points.

Subcommands: ``gen-data``, ``train``, ``train-gan``, ``sample``,
``eval``, and ``experiment``.  All artifacts are CSV or JSON.  Exit
codes: 0 success, 1 usage or validation problem, 2 numerical failure,
3 I/O failure.

Every subcommand accepts ``--config FILE`` holding flat ``key=value``
lines that mirror the long flags; explicit flags win.  When the
environment variable ``MPSGEN_OUT_DIR`` is set, relative output paths
are placed under it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np
import torch

from . import __version__
from .datasets import (
    Dataset,
    from_support,
    gen_moons,
    gen_spiral,
    load_dataset_csv,
    load_iris,
    save_dataset_csv,
    to_support,
)
from .embeddings import KINDS, make_embedding
from .errors import (
    ArgumentError,
    ModelFormatError,
    MpsError,
    NotSpdError,
    NumericalError,
    TrainingFailedError,
)
from .metrics import MetricsReport, accuracy, fid_like, outlier_rate, perturbed_accuracy
from .mps import MpsEnsemble, load_model, save_model
from .rng import RngStream
from .sampling import ReducedDensityMatrix, build_cdf, inverse_cdf, interpolate_latent, sample
from .training import GanConfig, TrainConfig, train_classifier, train_gan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

OUT_DIR_ENV = "MPSGEN_OUT_DIR"

_OUTPUT_DESTS = ("out", "out_model", "out_csv", "out_json", "history")

_SAMPLE_CHUNK_CELLS = 2_000_000


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _load_config(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _coerce(action: argparse.Action, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise _UsageError(f"cannot read {value!r} as a boolean")
    return action.type(value) if action.type else value


def _apply_config(args: argparse.Namespace, sub: argparse.ArgumentParser, argv: list[str]):
    if not getattr(args, "config", None):
        return
    cfg = _load_config(args.config)
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in cfg.items():
        if key not in actions:
            raise _UsageError(f"unknown config key {key!r}")
        if key in explicit:
            continue
        setattr(args, key, _coerce(actions[key], value))


def _resolve_outputs(args: argparse.Namespace):
    base = os.environ.get(OUT_DIR_ENV)
    if not base:
        return
    for dest in _OUTPUT_DESTS:
        value = getattr(args, dest, None)
        if value and not os.path.isabs(value):
            setattr(args, dest, os.path.join(base, value))


def _write_history(path: str | None, history: list[dict]):
    if not path:
        return
    with open(path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")


def _write_report(path: str | None, report: dict):
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _csv_rows(path: str, header: list[str], rows: list[list]):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad integer list {text!r}: {exc}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad float list {text!r}: {exc}") from exc


def cmd_gen_data(args) -> int:
    rng = RngStream(args.seed)
    if args.dataset == "spiral":
        ds = gen_spiral(args.n, rng)
    elif args.dataset == "moons":
        ds = gen_moons(args.n, args.noise, rng)
    elif args.dataset == "iris":
        ds = load_iris()
    else:
        raise _UsageError(f"unknown dataset {args.dataset!r}")
    save_dataset_csv(ds, args.out)
    lo, hi = ds.feature_range
    print(
        f"wrote {ds.features.shape[0]} rows to {args.out} "
        f"(raw range [{lo:.6g}, {hi:.6g}])"
    )
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        sigma_init=args.sigma,
        val_fraction=args.val_fraction,
        optimizer=args.optimizer,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    ds = load_dataset_csv(args.data)
    embedding = make_embedding(args.embedding, args.d)
    feats = to_support(embedding, ds.features)
    model, history = train_classifier(
        feats, ds.labels, embedding, args.bond_dim, _train_config(args)
    )
    save_model(model, args.out_model)
    _write_history(args.history, history)
    best = max((h["val_accuracy"] for h in history), default=float("nan"))
    print(
        json.dumps(
            {"model": args.out_model, "epochs_run": len(history), "val_accuracy": best}
        )
    )
    return EXIT_OK


def cmd_train_gan(args) -> int:
    model = load_model(args.model)
    ds = load_dataset_csv(args.data)
    feats = to_support(model.embedding, ds.features)
    floor = None if args.acc_floor == "auto" else float(args.acc_floor)
    cfg = GanConfig(
        adversarial_epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch_size=args.batch_size,
        gen_lr=args.gen_lr,
        disc_lr=args.disc_lr,
        disc_hidden=tuple(_int_list(args.disc_hidden)),
        disc_pretrain_epochs=args.disc_pretrain,
        accuracy_floor=floor,
        retrain_budget=args.retrain_budget,
        bins=args.bins,
        seed=args.seed,
    )
    train_cfg = TrainConfig(learning_rate=args.lr, seed=args.seed)
    try:
        refined, history = train_gan(model, feats, ds.labels, cfg, train_cfg)
    except TrainingFailedError as exc:
        if exc.checkpoint is not None and args.out_model:
            save_model(exc.checkpoint, args.out_model)
            print(f"saved last good checkpoint to {args.out_model}", file=sys.stderr)
        raise
    save_model(refined, args.out_model)
    _write_history(args.history, history)
    final_acc = history[-1]["val_accuracy"] if history else float("nan")
    print(json.dumps({"model": args.out_model, "epochs_run": len(history), "val_accuracy": final_acc}))
    return EXIT_OK


def cmd_sample(args) -> int:
    model = load_model(args.model)
    n = model.n_sites
    if args.nu_file:
        nu = np.loadtxt(args.nu_file, delimiter=",", ndmin=2, dtype=np.float64)
        if nu.shape[1] != n:
            raise ArgumentError(
                f"latent file has {nu.shape[1]} columns, model has {n} sites"
            )
    else:
        if args.count < 1:
            raise _UsageError("--count must be >= 1")
        nu = RngStream(args.seed).uniform(size=(args.count, n))
    chunk = max(1, _SAMPLE_CHUNK_CELLS // max(args.bins, 1))
    pieces = []
    for s in range(0, nu.shape[0], chunk):
        pieces.append(sample(model, args.cls, nu[s : s + chunk], bins=args.bins))
    xs = from_support(model.embedding, np.vstack(pieces))
    ds = Dataset(
        features=np.clip(xs, 0.0, 1.0),
        labels=np.full(xs.shape[0], args.cls, dtype=np.int64),
        feature_range=(0.0, 1.0),
    )
    save_dataset_csv(ds, args.out)
    print(f"wrote {xs.shape[0]} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = load_dataset_csv(args.data)
    feats = to_support(model.embedding, ds.features)
    report = MetricsReport(
        accuracy=accuracy(model, feats, ds.labels), n_eval=ds.features.shape[0]
    )
    if args.samples:
        gen = load_dataset_csv(args.samples)
        report.fid_like = fid_like(ds.features, gen.features)
        report.outlier_rate = outlier_rate(ds.features, gen.features, k=args.k)
        report.n_samples = gen.features.shape[0]
    _write_report(args.out_json, report.as_dict())
    return EXIT_OK


def _experiment_binning(args) -> int:
    embedding = make_embedding("fourier", args.d)
    rdm = ReducedDensityMatrix(v=torch.eye(args.d, dtype=torch.float64), log_scale=0.0)
    rows = []
    for bins in _int_list(args.bins_list):
        times = []
        x = float("nan")
        for _ in range(max(args.reps, 1)):
            t0 = time.perf_counter()
            table = build_cdf(rdm, embedding, bins=bins)
            x = inverse_cdf(table, args.nu)
            times.append(time.perf_counter() - t0)
        err = (x - args.nu) ** 2
        rows.append([bins, err, float(np.median(times))])
    _csv_rows(args.out_csv, ["bins", "squared_error", "median_seconds"], rows)
    print(f"wrote {len(rows)} rows to {args.out_csv}")
    return EXIT_OK


def _experiment_bond_dim(args) -> int:
    rows = []
    embedding = make_embedding(args.embedding, args.d)
    for seed in _int_list(args.seeds):
        ds = gen_spiral(args.n, RngStream(seed))
        feats = to_support(embedding, ds.features)
        for bond in _int_list(args.bond_dims):
            cfg = dataclasses.replace(_train_config(args), seed=seed)
            _, history = train_classifier(feats, ds.labels, embedding, bond, cfg)
            best = max(h["val_accuracy"] for h in history)
            rows.append([bond, seed, best])
    _csv_rows(args.out_csv, ["bond_dim", "seed", "val_accuracy"], rows)
    print(f"wrote {len(rows)} rows to {args.out_csv}")
    return EXIT_OK


def _experiment_robustness(args) -> int:
    ds = load_dataset_csv(args.data)
    modes = ["eval", "train"] if args.mode == "both" else [args.mode]
    rows = []
    for kind in args.embeddings.split(","):
        embedding = make_embedding(kind.strip(), args.d)
        feats = to_support(embedding, ds.features)
        for seed in _int_list(args.seeds):
            cfg = dataclasses.replace(_train_config(args), seed=seed)
            base_model, _ = train_classifier(feats, ds.labels, embedding, args.bond_dim, cfg)
            for mode_i, mode in enumerate(modes):
                for sigma_i, sigma in enumerate(_float_list(args.sigmas)):
                    acc = perturbed_accuracy(
                        base_model,
                        feats,
                        ds.labels,
                        sigma,
                        RngStream(seed).derive(1000 * (mode_i + 1) + sigma_i),
                        mode=mode,
                        train_cfg=cfg,
                    )
                    rows.append([kind.strip(), mode, sigma, seed, acc])
    _csv_rows(args.out_csv, ["embedding", "mode", "sigma", "seed", "accuracy"], rows)
    print(f"wrote {len(rows)} rows to {args.out_csv}")
    return EXIT_OK


def _experiment_latent(args) -> int:
    model = load_model(args.model)
    rng = RngStream(args.seed)
    nu_a = rng.uniform(size=model.n_sites)
    nu_b = rng.uniform(size=model.n_sites)
    path = interpolate_latent(model, args.cls, nu_a, nu_b, args.steps, bins=args.bins)
    path = from_support(model.embedding, path)
    ts = np.linspace(0.0, 1.0, args.steps)
    rows = [
        [args.cls, i, float(ts[i])] + [float(v) for v in path[i]]
        for i in range(args.steps)
    ]
    header = ["class", "step", "t"] + [f"x{i}" for i in range(model.n_sites)]
    _csv_rows(args.out_csv, header, rows)
    print(f"wrote {len(rows)} rows to {args.out_csv}")
    return EXIT_OK


_EXPERIMENTS = {
    "binning": _experiment_binning,
    "bond-dim": _experiment_bond_dim,
    "robustness": _experiment_robustness,
    "latent": _experiment_latent,
}


def cmd_experiment(args) -> int:
    return _EXPERIMENTS[args.kind](args)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--lr", type=float, default=0.01, help="learning rate")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.1, help="init offset scale")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="mpsgen", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mpsgen {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def new(name: str, fn, **kwargs):
        p = subs.add_parser(name, **kwargs)
        p.add_argument("--config", help="key=value defaults file")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
        registry[name] = p
        return p

    p = new("gen-data", cmd_gen_data, help="generate or export a benchmark dataset")
    p.add_argument("--dataset", choices=("spiral", "moons", "iris"), required=True)
    p.add_argument("--n", type=int, default=8000, help="rows per class (spiral) or total (moons)")
    p.add_argument("--noise", type=float, default=0.1, help="moons jitter scale")
    p.add_argument("--out", required=True)

    p = new("train", cmd_train, help="fit a classifier ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--embedding", choices=KINDS, required=True)
    p.add_argument("--d", type=int, default=None, help="features per site")
    p.add_argument("--bond-dim", "--D", dest="bond_dim", type=int, default=4)
    _add_train_flags(p)
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", help="write per-epoch JSONL here")

    p = new("train-gan", cmd_train_gan, help="adversarially refine a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=20, help="adversarial epochs")
    p.add_argument("--steps-per-epoch", type=int, default=25)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--gen-lr", type=float, default=1e-3)
    p.add_argument("--disc-lr", type=float, default=1e-3)
    p.add_argument("--disc-hidden", default="64,64")
    p.add_argument("--disc-pretrain", type=int, default=3)
    p.add_argument("--acc-floor", default="auto", help="'auto' or a float in [0, 1]")
    p.add_argument("--retrain-budget", type=int, default=50)
    p.add_argument("--bins", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01, help="recovery learning rate")
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", help="write per-epoch JSONL here")

    p = new("sample", cmd_sample, help="draw samples from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="cls", type=int, required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--nu-file", help="CSV of latent rows instead of seeded draws")
    p.add_argument("--bins", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = new("eval", cmd_eval, help="score a model (and optionally samples) on data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", help="sample CSV for distribution metrics")
    p.add_argument("--k", type=int, default=5, help="nearest neighbours for outliers")
    p.add_argument("--out-json")

    p = new("experiment", cmd_experiment, help="canned studies writing CSV tables")
    p.add_argument("--kind", choices=sorted(_EXPERIMENTS), required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--embedding", default="fourier")
    p.add_argument("--embeddings", default="fourier,legendre", help="robustness kinds")
    p.add_argument("--bond-dim", "--D", dest="bond_dim", type=int, default=4)
    p.add_argument("--bins-list", default="10,100,1000,10000")
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--reps", type=int, default=100, help="timing repetitions (median)")
    p.add_argument("--bond-dims", default="1,2,4,8")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--n", type=int, default=2000, help="spiral rows per class")
    p.add_argument("--data", help="dataset CSV (robustness)")
    p.add_argument("--sigmas", default="0,0.05,0.1,0.2")
    p.add_argument("--mode", choices=("eval", "train", "both"), default="eval")
    p.add_argument("--model", help="trained model (latent)")
    p.add_argument("--class", dest="cls", type=int, default=0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--bins", type=int, default=1000)
    _add_train_flags(p)

    return parser, registry


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        args = parser.parse_args(argv)
        sub = registry.get(args.command)
        if sub is not None:
            _apply_config(args, sub, argv)
        _resolve_outputs(args)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, TrainingFailedError, NotSpdError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ModelFormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except MpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
