"""Command-line entry point: ``spclt <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format/configuration error,
3 numeric failure. SPCLT_SEED, when set, overrides every seed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .classify import knn_classify
from .dataio import ReprSet, load_dataset, load_labels, read_repr, save_dataset, write_repr, znormalize
from .encoder import Encoder, EncoderConfig, encode_dataset
from .errors import ConfigurationError, ContractViolation, FormatError, NumericError, ParseError
from .grid_search import default_plan, grid_search, load_plan
from .structure_metrics import DEFAULT_K, evaluate
from .synth import GENERATORS, generate
from .trainer import METHODS, LossConfig, method_config, train

log = logging.getLogger("spclt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT = "checkpoint.spck"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(flag: int | None, fallback: int = 0) -> int:
    env = os.environ.get("SPCLT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"SPCLT_SEED must be an integer, got {env!r}") from None
    return fallback if flag is None else flag


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigurationError(f"{path} must hold a JSON object")
    return d


def loss_config_from_json(d: dict) -> LossConfig:
    """Accepts the nested form written to config.json or a flat {"method": ..., "tau_inst": ...} form."""
    d = dict(d)
    if "clt" in d or "ggeo" in d:
        return LossConfig.from_dict(d)
    method = d.pop("method", "TS2Vec")
    try:
        return method_config(method, **d)
    except TypeError as exc:
        raise ConfigurationError(f"bad loss config: {exc}") from None


def _dump(obj, path: str | Path | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    print(text)


def _load(path: str, normalize: str = "none"):
    ds = load_dataset(path)
    for w in ds.warnings:
        log.warning("%s: %s", path, w)
    return ds if normalize == "none" else znormalize(ds, normalize)


# -- subcommands ---------------------------------------------------------------
def cmd_train(args) -> int:
    raw = _read_json(args.config)
    enc_fields = raw.pop("encoder", {})
    normalize = raw.pop("normalize", args.normalize)
    if args.method:
        raw["method"] = args.method
    if args.seed is not None or "SPCLT_SEED" in os.environ:
        raw["seed"] = _seed(args.seed)
    cfg = loss_config_from_json(raw)
    ds = _load(args.data, normalize)
    try:
        enc_cfg = EncoderConfig(input_dim=ds.shape[2], **enc_fields)
    except TypeError as exc:
        raise ConfigurationError(f"bad encoder config: {exc}") from None

    enc, weights, hist = train(ds, enc_cfg, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    enc.save(out / CHECKPOINT)
    hist.write_csv(out / "history.csv")
    hist.write_val_csv(out / "val.csv")
    config = {"loss": cfg.to_dict(), "encoder": asdict(enc.cfg), "data": str(args.data),
              "normalize": normalize, "digest": cfg.digest(), "version": __version__}
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    reps = ReprSet(encode_dataset(enc, ds.data), provenance=cfg.digest())
    loc, glob = evaluate(ds, reps, DEFAULT_K)
    metrics = {
        "method": cfg.method,
        "initial_val_l_clt": hist.initial_val,
        "best_val_l_clt": hist.best_val,
        "val_ratio": hist.best_val / hist.initial_val if hist.initial_val else float("nan"),
        "stopped_early": hist.stopped_early,
        "epochs": len(hist.val) - 1,
        "steps": len(hist.steps),
        "sigma_clt": weights.sigma_clt,
        "sigma_sp": weights.sigma_sp,
        "structure": {"local": loc.to_dict(), "global": glob.to_dict()},
        "history": hist.steps,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True, allow_nan=True) + "\n")
    summary = {k: metrics[k] for k in ("method", "initial_val_l_clt", "best_val_l_clt", "epochs", "steps")}
    _dump(summary)
    return EXIT_OK


def _checkpoint_path(p: str) -> Path:
    path = Path(p)
    return path / CHECKPOINT if path.is_dir() else path


def cmd_encode(args) -> int:
    ckpt = _checkpoint_path(args.checkpoint)
    blob = ckpt.read_bytes()
    enc = Encoder.from_bytes(blob)
    ds = _load(args.data, args.normalize)
    if ds.shape[2] != enc.cfg.input_dim:
        raise ConfigurationError(f"data has D={ds.shape[2]}, checkpoint expects {enc.cfg.input_dim}")
    digest = hashlib.sha256(blob).hexdigest()[:16]
    rs = ReprSet(encode_dataset(enc, ds.data), provenance=f"spck:{digest};data:{ds.name}")
    write_repr(rs, args.out)
    _dump({"out": str(args.out), "shape": list(rs.reps.shape), "provenance": rs.provenance})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = _load(args.data, args.normalize)
    rs = read_repr(args.repr)
    loc, glob = evaluate(ds, rs, args.k)
    _dump({"local": loc.to_dict(), "global": glob.to_dict()}, args.out)
    return EXIT_OK


def cmd_grid_search(args) -> int:
    plan = load_plan(args.plan) if args.plan else default_plan()
    if args.seed is not None or "SPCLT_SEED" in os.environ:
        plan.seed = _seed(args.seed)
    if args.iterations is not None:
        plan.iterations = args.iterations
    ds = _load(args.data, args.normalize)
    result = grid_search(ds, plan, jobs=args.jobs)
    out = Path(args.out)
    result.write(out)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    _dump({m: {"val_l_clt": result.scores[m], "digest": c.digest()} for m, c in result.best.items()})
    return EXIT_OK


def cmd_classify(args) -> int:
    tr = read_repr(args.train_repr).instance_reps
    te = read_repr(args.test_repr).instance_reps
    rep = knn_classify(tr, load_labels(args.train_labels), te, load_labels(args.test_labels), args.k)
    _dump(rep.to_dict(), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = generate(args.kind, args.n, args.t, args.d, args.classes, _seed(args.seed))
    save_dataset(ds, args.out)
    _dump({"out": str(args.out), "name": ds.name, "shape": list(ds.shape)})
    return EXIT_OK


REPORT_COLUMNS = ["run", "method", "best_val_l_clt", "val_ratio"] + [
    f"{scale}_{m}" for scale in ("local", "global") for m in ("knn", "trust", "cont", "mrre", "drmse")]


def report_rows(run_dirs: list[str]) -> list[dict]:
    order = list(METHODS)
    rows = []
    for d in run_dirs:
        p = Path(d)
        m = _read_json(str(p / "metrics.json"))
        row = {"run": p.name, "method": m["method"], "best_val_l_clt": m["best_val_l_clt"],
               "val_ratio": m["val_ratio"]}
        for scale in ("local", "global"):
            for k in ("knn", "trust", "cont", "mrre", "drmse"):
                row[f"{scale}_{k}"] = m["structure"][scale][k]
        rows.append(row)
    rows.sort(key=lambda r: (order.index(r["method"]) if r["method"] in order else len(order), r["method"], r["run"]))
    return rows


def render_report(rows: list[dict]) -> str:
    cells = [REPORT_COLUMNS] + [[r[c] if isinstance(r[c], str) else f"{r[c]:.4f}" for c in REPORT_COLUMNS]
                                for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    rows = report_rows(args.runs)
    if args.csv:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        Path(args.csv).write_text(buf.getvalue())
    sys.stdout.write(render_report(rows))
    return EXIT_OK


# -- parser --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spclt", description="Structure-preserving contrastive learning for time series.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    norm = dict(choices=["none", "per-instance", "per-dataset"], default="none",
                help="z-normalisation applied after loading")

    s = sub.add_parser("train", help="train an encoder; writes a run directory")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="loss config JSON (nested or flat form)")
    s.add_argument("--method", choices=list(METHODS), help="overrides the method in --config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--normalize", **norm)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="encode a dataset with a trained checkpoint")
    s.add_argument("--checkpoint", required=True, help="run directory or .spck file")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--normalize", **norm)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("evaluate", help="local and global structure-preservation metrics")
    s.add_argument("--data", required=True)
    s.add_argument("--repr", required=True)
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--out")
    s.add_argument("--normalize", **norm)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grid-search", help="staged hyperparameter search")
    s.add_argument("--data", required=True)
    s.add_argument("--plan", help="plan JSON; defaults to the seven-stage strategy")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--iterations", type=int, help="override the per-run iteration budget")
    s.add_argument("--seed", type=int)
    s.add_argument("--normalize", **norm)
    s.set_defaults(func=cmd_grid_search)

    s = sub.add_parser("classify", help="k-NN classification on instance representations")
    s.add_argument("--train-repr", required=True)
    s.add_argument("--train-labels", required=True)
    s.add_argument("--test-repr", required=True)
    s.add_argument("--test-labels", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("synth", help="write a seeded synthetic dataset (.ts or .csv)")
    s.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--t", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="compare run directories in one table")
    s.add_argument("runs", nargs="+", help="run directories written by train")
    s.add_argument("--csv", help="also write the table as CSV")
    s.set_defaults(func=cmd_report)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ContractViolation, ParseError, FormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
