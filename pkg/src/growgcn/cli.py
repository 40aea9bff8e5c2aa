"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

Subcommands:
    prepare sbm | planetoid   write a dataset bundle
    train                     train one model (repeats supported), save
                              reports, checkpoints, and a summary CSV
    sweep                     grid over depth, rank, or ablation cells
    gradcheck                 randomized gradient verification suite
    eval                      accuracy of a checkpoint on a bundle split
    export-embeddings         dump one layer's features to CSV
"""

import argparse
import csv
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as gdata
from . import gradcheck as gc
from . import metrics as gmetrics
from .errors import DataError, NumericalAbort
from .train import TrainConfig

# the package __init__ rebinds the `train` attribute to the train() function,
# so `from . import train` is unreliable; fetch the module itself instead
gtrain = sys.modules["growgcn.train"]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the exit-code contract wants 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config file

CONFIG_KEYS = {f.name for f in fields(TrainConfig)} | {
    "trainer", "variant", "repeats", "fixed_splits",
}

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _coerce(key, raw):
    raw = raw.strip()
    if key in ("trainer", "variant", "loss_reduction", "new_layer_init"):
        return raw
    low = raw.lower()
    if low in _BOOLS:
        return _BOOLS[low]
    if low in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def read_config_file(path):
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(str(e), file=path) from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError("expected 'key = value'", file=path, line=lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise DataError(f"unknown config key {key!r}", file=path, line=lineno)
        out[key] = _coerce(key, raw)
    return out


def _resolve(args, cfg_file, key, default):
    """Precedence: explicit flag > config file > default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in cfg_file:
        return cfg_file[key]
    return default


def build_train_config(args, cfg_file):
    base = TrainConfig()
    kwargs = {}
    for f in fields(TrainConfig):
        kwargs[f.name] = _resolve(args, cfg_file, f.name, getattr(base, f.name))
    return TrainConfig(**kwargs).validate()


# ---------------------------------------------------------------- data access

def _parse_sbm_spec(text):
    spec = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"bad --sbm field {part!r}, expected k=v")
        k, v = part.split("=", 1)
        spec[k.strip()] = v.strip()
    known = {"classes", "per_class", "p_in", "p_out", "f", "signal", "seed"}
    unknown = set(spec) - known
    if unknown:
        raise UsageError(f"unknown --sbm fields {sorted(unknown)}")
    try:
        return dict(
            classes=int(spec.get("classes", 4)),
            nodes_per_class=int(spec.get("per_class", 100)),
            p_in=float(spec.get("p_in", 0.1)),
            p_out=float(spec.get("p_out", 0.01)),
            f=int(spec.get("f", 32)),
            signal=float(spec.get("signal", 2.0)),
            seed=int(spec.get("seed", 0)),
        )
    except ValueError as e:
        raise UsageError(f"bad --sbm value: {e}") from e


def _load_dataset(args):
    if getattr(args, "sbm", None):
        try:
            return gdata.generate_sbm(**_parse_sbm_spec(args.sbm))
        except ValueError as e:
            raise UsageError(str(e)) from e
    if not getattr(args, "data", None):
        raise UsageError("either --data or --sbm is required")
    return gdata.load_bundle(args.data)


def _resplit(data, seed):
    """Fresh evaluation split: 20/class train, val/test capped at 1000 each."""
    per_class = min(20, int(np.bincount(data.labels).min()))
    rest = data.n - per_class * data.C
    held = min(1000, rest // 2)
    if held < 1:
        raise DataError("dataset too small to draw val/test splits")
    return data.with_splits(
        gdata.split_per_class(data.labels, per_class, held, held, seed)
    )


def run_repeats(data, cfg, trainer, variant, repeats, fixed_splits):
    """Train ``repeats`` models with seeds cfg.seed..cfg.seed+repeats-1.

    Unless fixed_splits is set, each repeat redraws the train/val/test split
    with its own seed. Returns (stacks, reports).
    """
    stacks, reports = [], []
    for k in range(repeats):
        seed = cfg.seed + k
        run_cfg = replace(cfg, seed=seed)
        run_data = data if fixed_splits else _resplit(data, seed)
        stack, report = gtrain.train(run_data, run_cfg, trainer=trainer, variant=variant)
        stacks.append(stack)
        reports.append(report)
    return stacks, reports


def _mean_std(values):
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


# ---------------------------------------------------------------- subcommands

def cmd_prepare(args):
    if args.kind == "sbm":
        if not 0.0 <= args.p_out <= args.p_in <= 1.0:
            raise UsageError("require 0 <= p_out <= p_in <= 1")
        ds = gdata.generate_sbm(
            classes=args.classes, nodes_per_class=args.per_class,
            p_in=args.p_in, p_out=args.p_out, f=args.f, signal=args.signal,
            seed=args.seed,
        )
    else:
        ds = load_planetoid(args.content, args.cites, name=args.name,
                            split_seed=args.split_seed)
    gdata.save_bundle(ds, args.out)
    print(f"wrote bundle {ds.name}: n={ds.n} f={ds.f} c={ds.C} "
          f"edges={ds.adjacency.nnz // 2} -> {args.out}")
    return 0


def load_planetoid(content_path, cites_path, name="cora", split_seed=0):
    """Convert the classic citation-network distribution to a bundle.

    ``.content`` lines: <paper_id> <f binary features> <class_name>;
    ``.cites`` lines: <cited> <citing>. Unknown ids in .cites are skipped
    (the public files contain a handful).
    """
    ids, rows, class_names = [], [], []
    for lineno, line in enumerate(gdata._read_lines(content_path), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 3:
            raise DataError("expected <id> <features...> <label>",
                            file=content_path, line=lineno)
        ids.append(parts[0])
        try:
            rows.append([float(x) for x in parts[1:-1]])
        except ValueError:
            raise DataError("non-numeric feature field", file=content_path,
                            line=lineno) from None
        class_names.append(parts[-1])
    if not ids:
        raise DataError("no rows", file=content_path)
    f = len(rows[0])
    for lineno, row in enumerate(rows, 1):
        if len(row) != f:
            raise DataError(f"row has {len(row)} features, first row has {f}",
                            file=content_path, line=lineno)
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(class_names))
    labels = np.array([classes.index(c) for c in class_names], dtype=np.int64)

    edges = []
    for lineno, line in enumerate(gdata._read_lines(cites_path), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError("expected '<cited> <citing>'", file=cites_path, line=lineno)
        a, b = index.get(parts[0]), index.get(parts[1])
        if a is None or b is None or a == b:
            continue
        edges.append((a, b))

    n = len(ids)
    X = np.asarray(rows, dtype=np.float64)
    held = min(1000, (n - 20 * len(classes)) // 2)
    splits = gdata.split_per_class(labels, 20, held, held, split_seed)
    ds = gdata.GraphDataset(
        n=n, f=f, C=len(classes), X=X, labels=labels,
        adjacency=gdata.build_adjacency(edges, n), splits=splits, name=name,
    )
    return ds.validate()


def _write_summary_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_train(args):
    cfg_file = read_config_file(args.config) if args.config else {}
    cfg = build_train_config(args, cfg_file)
    trainer = _resolve(args, cfg_file, "trainer", "standard")
    variant = _resolve(args, cfg_file, "variant", "gcn")
    repeats = int(_resolve(args, cfg_file, "repeats", 1))
    fixed = bool(_resolve(args, cfg_file, "fixed_splits", False))
    if trainer not in gtrain.TRAINERS:
        raise UsageError(f"unknown trainer {trainer!r}")
    if variant not in gtrain.VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")

    data = _load_dataset(args)
    if trainer == "lgt" and cfg.use_lora and cfg.depth > 1:
        max_rank = min(data.f, cfg.hidden_dim)
        if cfg.lora_rank > max_rank:
            raise UsageError(
                f"lora rank {cfg.lora_rank} exceeds min(feature dim, hidden dim)"
                f" = {max_rank}; lower --rank or raise --hidden-dim")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stacks, reports = run_repeats(data, cfg, trainer, variant, repeats, fixed)

    for k, (stack, report) in enumerate(zip(stacks, reports)):
        (out / f"report_seed{cfg.seed + k}.json").write_text(report.to_json(indent=1))
        ckpt.save_checkpoint(stack, out / f"model_seed{cfg.seed + k}.ckpt")

    accs = [r.test_acc for r in reports]
    walls = [r.total_wall_clock for r in reports]
    mean, std = _mean_std(accs)
    _write_summary_csv(
        out / "summary.csv",
        [[data.name, trainer, variant, cfg.depth, repeats,
          f"{mean:.6f}", f"{std:.6f}", f"{statistics.fmean(walls):.3f}"]],
        ["dataset", "trainer", "variant", "depth", "repeats",
         "mean_test_acc", "std_test_acc", "mean_wall_clock_s"],
    )
    print(f"{data.name} {trainer}/{variant} depth={cfg.depth}: "
          f"test acc {mean:.4f} +/- {std:.4f} over {repeats} seed(s)")
    return 0


ABLATION_CELLS = (
    ("gcn", "standard", {}),
    ("gcn+lt", "lgt", {"use_lora": False, "new_layer_init": "glorot"}),
    ("gcn+lt+lora", "lgt", {"use_lora": True, "new_layer_init": "glorot"}),
    ("gcn+lt+lora+identity", "lgt", {"use_lora": True, "new_layer_init": "identity"}),
)


def _run_cell(payload):
    """One sweep grid cell; module-level so process pools can pickle it."""
    if payload.get("bundle"):
        data = gdata.load_bundle(payload["bundle"])
    else:
        data = gdata.generate_sbm(**payload["sbm"])
    cfg = TrainConfig(**payload["cfg"])
    _, reports = run_repeats(
        data, cfg, payload["trainer"], payload["variant"],
        payload["repeats"], payload["fixed_splits"],
    )
    accs = [r.test_acc for r in reports]
    mean, std = _mean_std(accs)
    return {
        "label": payload["label"],
        "value": payload["value"],
        "mean_acc": mean,
        "std_acc": std,
        "mean_wall_clock": statistics.fmean(r.total_wall_clock for r in reports),
        "mean_epochs": statistics.fmean(r.total_epochs for r in reports),
    }


def _format_table(rows, columns):
    widths = [max(len(str(r[i])) for r in [columns] + rows) for i in range(len(columns))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def cmd_sweep(args):
    cfg_file = read_config_file(args.config) if args.config else {}
    cfg = build_train_config(args, cfg_file)
    trainer = _resolve(args, cfg_file, "trainer", "lgt")
    variant = _resolve(args, cfg_file, "variant", "gcn")
    repeats = int(_resolve(args, cfg_file, "repeats", 5))
    fixed = bool(_resolve(args, cfg_file, "fixed_splits", False))
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")

    if args.axis in ("depth", "rank"):
        if not args.values:
            raise UsageError(f"--values required for the {args.axis} axis")
        try:
            values = [int(v) for v in args.values.split(",")]
        except ValueError:
            raise UsageError(f"--values must be comma-separated ints") from None
        if any(v < 1 for v in values):
            raise UsageError("axis values must be >= 1")
    elif args.values:
        raise UsageError("--values only applies to depth/rank axes")

    base = {"trainer": trainer, "variant": variant, "repeats": repeats,
            "fixed_splits": fixed, "bundle": args.data, "sbm": None}
    if getattr(args, "sbm", None):
        base["bundle"] = None
        base["sbm"] = _parse_sbm_spec(args.sbm)
    elif not args.data:
        raise UsageError("either --data or --sbm is required")

    payloads = []
    if args.axis == "depth":
        for v in values:
            payloads.append(dict(base, label=f"depth{v}", value=v,
                                 cfg=dict(asdict(cfg), depth=v)))
    elif args.axis == "rank":
        for v in values:
            payloads.append(dict(base, label=f"rank{v}", value=v, trainer="lgt",
                                 cfg=dict(asdict(cfg), lora_rank=v)))
    else:  # ablation
        for label, cell_trainer, overrides in ABLATION_CELLS:
            payloads.append(dict(base, label=label, value=label, trainer=cell_trainer,
                                 cfg=dict(asdict(cfg), **overrides)))

    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_rows = [
        [args.axis, r["label"], r["value"], f"{r['mean_acc']:.6f}", f"{r['std_acc']:.6f}",
         f"{r['mean_epochs']:.1f}", f"{r['mean_wall_clock']:.3f}"]
        for r in results
    ]
    _write_summary_csv(out / "sweep.csv", csv_rows,
                       ["axis", "cell", "value", "mean_test_acc", "std_test_acc",
                        "mean_epochs", "mean_wall_clock_s"])

    table_rows = [
        [r["label"], f"{r['mean_acc']:.4f} +/- {r['std_acc']:.4f}",
         f"{r['mean_epochs']:.1f}", f"{r['mean_wall_clock']:.2f}s"]
        for r in results
    ]
    table = _format_table(table_rows, ["cell", "test_acc", "epochs", "wall_clock"])
    if args.axis == "rank":
        best = max(results, key=lambda r: r["mean_acc"])
        table += f"\nbest mean accuracy at {best['label']}"
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_gradcheck(args):
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    result = gc.run_suite(seeds=args.seeds, eps=args.eps, threshold=args.threshold,
                          corrupt_backward=args.corrupt_backward)
    head_err = max(gc.sgc_head_case(s, eps=args.eps) for s in range(min(args.seeds, 10)))
    print(f"stack checks: {result.seeds} seeds, max relative error {result.max_error:.3e}")
    print(f"propagation head check: max relative error {head_err:.3e}")
    ok = result.passed and head_err < args.threshold
    print(f"{'PASS' if ok else 'FAIL'} (threshold {args.threshold:.1e})")
    if not ok:
        raise NumericalAbort("gradient check failed")
    return 0


def cmd_eval(args):
    stack = ckpt.load_checkpoint(args.checkpoint)
    data = gdata.load_bundle(args.data)
    mask = getattr(data.splits, args.split)
    acc = gtrain.evaluate(stack, data, mask)
    print(f"{args.split} accuracy: {acc:.4f}")
    return 0


def cmd_export(args):
    stack = ckpt.load_checkpoint(args.checkpoint)
    data = gdata.load_bundle(args.data)
    try:
        gmetrics.export_embeddings(stack, data, args.layer, args.out)
    except ValueError as e:
        raise UsageError(str(e)) from e
    print(f"wrote layer {args.layer} embeddings to {args.out}")
    return 0


# ---------------------------------------------------------------- arg parsing

def _add_train_flags(p):
    p.add_argument("--data", help="bundle directory")
    p.add_argument("--sbm", help="inline block-model spec, e.g. "
                   "'classes=4,per_class=100,p_in=0.1,p_out=0.01,f=32,signal=2,seed=0'")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--trainer", choices=gtrain.TRAINERS)
    p.add_argument("--variant", choices=gtrain.VARIANTS)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--dropout", dest="dropout_p", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--rank", dest="lora_rank", type=int)
    p.add_argument("--alpha", dest="lora_alpha", type=float)
    p.add_argument("--lora-lr", dest="lora_lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--loss-reduction", dest="loss_reduction", choices=["mean", "sum"])
    p.add_argument("--no-merge-adapters", dest="merge_adapters", action="store_false",
                   default=None)
    p.add_argument("--no-lora", dest="use_lora", action="store_false", default=None)
    p.add_argument("--new-layer-init", dest="new_layer_init",
                   choices=["identity", "glorot"])
    p.add_argument("--pairnorm-s", dest="pairnorm_s", type=float)
    p.add_argument("--no-row-normalize", dest="row_normalize_features",
                   action="store_false", default=None)
    p.add_argument("--fixed-splits", dest="fixed_splits", action="store_true",
                   default=None, help="reuse the bundle's splits for every repeat")


def make_parser():
    parser = Parser(prog="growgcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prepare", help="write a dataset bundle")
    prep_sub = prep.add_subparsers(dest="kind", required=True)
    ps = prep_sub.add_parser("sbm", help="stochastic block model")
    ps.add_argument("--classes", type=int, default=4)
    ps.add_argument("--per-class", dest="per_class", type=int, default=100)
    ps.add_argument("--p-in", dest="p_in", type=float, default=0.1)
    ps.add_argument("--p-out", dest="p_out", type=float, default=0.01)
    ps.add_argument("--f", type=int, default=32)
    ps.add_argument("--signal", type=float, default=2.0)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_prepare)
    pp = prep_sub.add_parser("planetoid", help="convert .content/.cites files")
    pp.add_argument("--content", required=True)
    pp.add_argument("--cites", required=True)
    pp.add_argument("--name", default="cora")
    pp.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_prepare)

    tr = sub.add_parser("train", help="train one configuration")
    _add_train_flags(tr)
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_train)

    sw = sub.add_parser("sweep", help="grid over depth, rank, or ablation cells")
    _add_train_flags(sw)
    sw.add_argument("--axis", choices=["depth", "rank", "ablation"], required=True)
    sw.add_argument("--values", help="comma-separated ints for depth/rank axes")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", required=True, help="output directory")
    sw.set_defaults(func=cmd_sweep)

    gcp = sub.add_parser("gradcheck", help="randomized gradient verification")
    gcp.add_argument("--seeds", type=int, default=100)
    gcp.add_argument("--eps", type=float, default=1e-5)
    gcp.add_argument("--threshold", type=float, default=1e-6)
    gcp.add_argument("--corrupt-backward", action="store_true",
                     help="sabotage relu's backward to prove the check can fail")
    gcp.set_defaults(func=cmd_gradcheck)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a bundle")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-embeddings", help="dump one layer's features")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--layer", type=int, required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
