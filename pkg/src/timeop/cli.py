"""Command-line entry point: train, evaluate, perturb, diagnose, oracle-check, generate."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import ConfigError, RunConfig, parse_config_text
from .data import DataError, load_features, load_interactions, make_temporal_split, train_view
from .evaluation import evaluate
from .model import NumericError
from .oracle import run_suite
from .synthetic import DriftConfig, generate, write_dataset
from .training import CheckpointError, build_model, read_checkpoint, train, write_checkpoint, write_history

log = logging.getLogger("timeop")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_ORACLE = 0, 1, 2, 3, 4
METRIC_COLUMNS = ("recall@10", "recall@20", "ndcg@10", "ndcg@20")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def set_threads(n: int | None) -> None:
    """Cap BLAS and kernel parallelism; ``1`` gives the bitwise-reproducible mode."""
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import warnings

    import numba
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def load_config(args) -> RunConfig:
    """Config file (or defaults) with ``--set key=value`` lines appended; later keys win."""
    pairs = getattr(args, "set", None) or []
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        text, base = path.read_text(encoding="utf-8"), path.parent
    else:
        text, base = "", Path.cwd()
    cfg = parse_config_text(text + "\n" + "\n".join(pairs), base=base)
    if getattr(args, "out", None):
        cfg = cfg.with_overrides(output_dir=str(args.out))
    return cfg


def load_data(cfg: RunConfig):
    if not cfg.interactions:
        raise ConfigError("interactions: no interaction file given")
    log_ = load_interactions(cfg.interactions)
    features = {}
    for m in cfg.modalities:
        if m == "id":
            continue
        if m not in cfg.features:
            raise ConfigError(f"features: no file for modality {m!r}")
        features[m] = load_features(cfg.features[m])
    return log_, make_temporal_split(log_), features


def checkpoint_config(cfg: RunConfig) -> str:
    """Config echo stored inside checkpoints; the output location is left out so
    identical runs written to different directories give identical files."""
    return "".join(line + "\n" for line in cfg.echo().splitlines() if not line.startswith("output_dir"))


def load_checkpoint(path):
    """Rebuild config, data and model from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    text, params = read_checkpoint(path)
    cfg = parse_config_text(text)
    log_, split, features = load_data(cfg)
    model = build_model(cfg, log_, split, features)
    if set(params) != set(model.params):
        raise CheckpointError(f"{path}: parameter set does not match the configured model")
    for name, arr in params.items():
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects "
                                  f"{model.params[name].shape}")
        model.params[name] = arr.astype(model.params[name].dtype)
    return cfg, log_, split, model


def _metric_rows(metrics: dict, split_name: str):
    return [(split_name, k, v) for k, v in sorted(metrics.items())]


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    log_, split, features = load_data(cfg)
    res = train(cfg, log_, split, features)
    write_history(res.history, out / "history.csv")
    write_checkpoint(out / "checkpoint.bin", checkpoint_config(cfg), res.model.params)
    fwd = res.model.forward()
    rows = (_metric_rows(evaluate(res.model, log_, split, target="valid", fwd=fwd).metrics, "valid")
            + _metric_rows(evaluate(res.model, log_, split, target="test", fwd=fwd).metrics, "test"))
    diag.write_rows(out / "metrics.csv", ("split", "metric", "value"), rows)
    print(f"best epoch {res.best_epoch} of {len(res.history)}; wrote {out}")
    for r in rows:
        print(f"  {r[0]:5s} {r[1]:10s} {r[2]:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, log_, split, model = load_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    fwd = model.forward()
    rows = []
    for target in args.target:
        rows += _metric_rows(evaluate(model, log_, split, target=target, fwd=fwd).metrics, target)
    diag.write_rows(out / args.name, ("split", "metric", "value"), rows)
    for r in rows:
        print(f"  {r[0]:5s} {r[1]:10s} {r[2]:.4f}")
    return EXIT_OK


def perturbation_study(cfg: RunConfig, log_, split, features, seeds) -> tuple:
    """Train and test once per (mode, seed); returns (per-run rows, mean rows)."""
    runs, sums = [], defaultdict(lambda: np.zeros(len(METRIC_COLUMNS)))
    for seed in seeds:
        for mode in diag.PERTURB_MODES:
            perturbed = diag.perturb_timestamps(log_, split, mode, seed=seed)
            res = train(cfg.with_overrides(seed=seed), perturbed, split, features)
            m = evaluate(res.model, perturbed, split, target="test").metrics
            vals = [m[c] for c in METRIC_COLUMNS]
            runs.append((mode.capitalize(), seed, *vals))
            sums[mode] += vals
            log.info("%s seed %d: %s", mode, seed, vals)
    means = [(mode.capitalize(), *(sums[mode] / len(seeds))) for mode in diag.PERTURB_MODES]
    return runs, means


def cmd_perturb(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    log_, split, features = load_data(cfg)
    try:
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    runs, means = perturbation_study(cfg, log_, split, features, seeds)
    diag.write_rows(out / "perturbation_runs.csv", ("setting", "seed", *METRIC_COLUMNS), runs)
    diag.write_rows(out / "perturbation.csv", ("setting", *METRIC_COLUMNS), means)
    print(f"{'setting':10s}" + "".join(f"{c:>11s}" for c in METRIC_COLUMNS))
    for row in means:
        print(f"{row[0]:10s}" + "".join(f"{v:11.4f}" for v in row[1:]))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg, log_, split, model = load_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    view = train_view(log_, split)
    users = split.eval_users
    fwd = model.forward()
    report = evaluate(model, log_, split, target="test", fwd=fwd)
    baseline = None
    if args.baseline:
        _, blog, bsplit, bmodel = load_checkpoint(args.baseline)
        if blog.n_users != log_.n_users or blog.n_items != log_.n_items:
            raise DataError("baseline checkpoint was trained on a different dataset")
        baseline = evaluate(bmodel, blog, bsplit, target="test")
    buckets = diag.span_buckets(view, users, args.buckets)
    diag.write_rows(out / "buckets.csv", ("bucket", "n_users", "metric", "model", "baseline", "delta"),
                    diag.bucket_metrics(report, buckets, baseline, args.buckets))

    if model.bank.K >= 2:
        targets = log_.items[split.test[users]]
        erows = diag.energy_diagnostics(model, fwd, users, targets, buckets)
        keys = [k for k in erows[0] if k != "bucket"]
        diag.write_rows(out / "energy.csv", ("bucket", *keys), erows)
        ms = diag.mixing_stats(fwd.g[:log_.n_users][users])
        diag.write_rows(out / "mixing.csv", ("quantity", "median", "q1", "q3", "mean"), ms["summary"])
        print(f"energy monotonic rate {erows[0]['monotonic_rate']:.4f}; "
              f"median normalized gate entropy {np.median(ms['normalized_entropy']):.4f}")
    else:
        print("single-scale bank: energy and mixing diagnostics skipped")

    header, grows = diag.gating_rows(fwd.g[:log_.n_users], fwd.beta, log_.user_ids)
    diag.write_rows(out / "gating.csv", header, grows)
    spans = diag.user_spans(view, users) / cfg.time_unit
    mrows = diag.modality_mixture_by_span(fwd.beta[users], spans, model.modalities)
    diag.write_rows(out / "modality_mixture.csv",
                    ("bucket", "n_users", "min_log_span", "max_log_span", *model.modalities), mrows)
    print(f"wrote diagnostics to {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    rows = run_suite(args.graphs, args.seed)
    by_check = defaultdict(list)
    for r in rows:
        by_check[r.check].append(r)
    ok = True
    print(f"{'check':26s}{'passed':>10s}{'worst':>14s}{'tolerance':>12s}")
    for name, rs in by_check.items():
        n_ok = sum(r.passed for r in rs)
        ok &= n_ok == len(rs)
        print(f"{name:26s}{n_ok:>6d}/{len(rs):<3d}{max(r.value for r in rs):14.3e}{rs[0].tolerance:12.1e}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        diag.write_rows(Path(args.out) / "oracle.csv", ("check", "case", "value", "tolerance", "passed"),
                        [(r.check, r.case, r.value, r.tolerance, int(r.passed)) for r in rows])
    print("oracle: all checks passed" if ok else "oracle: FAILED")
    return EXIT_OK if ok else EXIT_ORACLE


def cmd_generate(args) -> int:
    gcfg = DriftConfig(n_users=int(round(2000 * args.scale)), n_items=int(round(1000 * args.scale)))
    try:
        log_, features = generate(gcfg, seed=args.seed)
    except ValueError as exc:
        raise UsageError(f"generate: {exc}") from None
    out = Path(args.out)
    paths = write_dataset(log_, features, out)
    feats = ",".join(f"{m}:{paths[m].name}" for m in features)
    (out / "config.txt").write_text(
        f"interactions = {paths['interactions'].name}\nfeatures = {feats}\n"
        f"modalities = id,{','.join(features)}\n", encoding="utf-8")
    print(f"{log_.n_interactions} interactions, {log_.n_users} users, {log_.n_items} items -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="timeop", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads (default: all cores; 1 = deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key = value run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (overrides output_dir)")

    sp = sub.add_parser("train", help="train a model, write checkpoint, history and metrics")
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint and write a metrics CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out")
    sp.add_argument("--name", default="metrics.csv")
    sp.add_argument("--target", nargs="+", choices=("valid", "test"), default=["valid", "test"])
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("perturb", help="timestamp perturbation study over all modes")
    with_config(sp)
    sp.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser("diagnose", help="span buckets, energy, mixing and modality CSVs")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--baseline", help="second checkpoint to compare against per bucket")
    sp.add_argument("--buckets", type=int, default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("oracle-check", help="spectral checks on random small graphs")
    sp.add_argument("--graphs", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("generate", help="write a synthetic drift dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scale", type=float, default=1.0, help="multiplies user and item counts")
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        set_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining shape and consistency problems come from the inputs
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
