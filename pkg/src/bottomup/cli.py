"""Command-line entry point: gradient checks, benchmarks, ablations, eval.

Artifacts land under --out with fixed names (gradcheck.json, bench.csv,
ablate.csv, eval.json, plus SVG charts); payloads carry no timestamps, so
identical seeded invocations write byte-identical files. Exit codes are a
stable contract: 0 success, 1 usage error, 2 check or experiment failure.

BOTTOMUP_THREADS caps worker threads (dataset generation and, when set
before startup, the BLAS pool).
"""

import os

_threads = os.environ.get("BOTTOMUP_THREADS", "").strip()
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import kernels
from .kitti import (
    DEFAULT_DIFFICULTY,
    LabelParseError,
    difficulty_filter,
    load_label_file,
    to_box3d,
)
from .metrics import Detection, EmptyGroundTruth, EvalRecord, ap_r40, bev_iou, iou_3d
from .svgplot import line_chart
from .toy3d import SceneConfig, TrainConfig, VARIANTS, eval_toy, make_dataset, save_dataset, train_toy

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

_DEFAULT_BENCH_SIZES = "32x96x64,64x96x64,128x96x64,256x96x64"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here reserves 2 for
    check failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_sizes(text):
    sizes = []
    for part in text.split(","):
        dims = part.lower().split("x")
        if len(dims) != 3:
            raise ValueError(f"size {part!r} is not HxWxC")
        sizes.append(tuple(int(d) for d in dims))
    return sizes


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _pick(args, config, name, default):
    """Flag value if given, else config-file value, else the default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def raise_malloc_reuse_threshold():
    """Ask glibc to serve large blocks from the heap free list.

    The training and benchmark loops churn multi-megabyte temporaries;
    without this every one is a fresh mmap plus page faults. No-op off
    glibc.
    """
    try:
        import ctypes

        libc = ctypes.CDLL(None, use_errno=True)
        m_mmap_threshold = -3
        libc.mallopt(m_mmap_threshold, 1 << 30)
    except (OSError, AttributeError):
        pass


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    config = _load_config(args.config)
    tol = _pick(args, config, "tol", 1e-6)
    if tol <= 0:
        print(f"error: --tol must be positive, got {tol}", file=sys.stderr)
        return EXIT_USAGE
    seed = _pick(args, config, "seed", 0)
    sizes = _parse_sizes(_pick(args, config, "sizes", "6x5x4"))
    trials = _pick(args, config, "trials", 20)
    out_dir = Path(_pick(args, config, "out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    results = run_suite(sizes=sizes, seed=int(seed), trials=int(trials))
    failures = [name for name, err in results.items() if not err < tol]
    report = {
        "seed": int(seed),
        "tolerance": tol,
        "trials": int(trials),
        "sizes": ["x".join(map(str, s)) for s in sizes],
        "results": {name: err for name, err in results.items()},
        "failures": failures,
    }
    with (out_dir / "gradcheck.json").open("w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    for name, err in results.items():
        status = "ok" if err < tol else "FAIL"
        print(f"{status:4s} {name:24s} max rel err {err:.3e}")
    if failures:
        print(f"gradcheck: {len(failures)} op(s) above tolerance {tol}")
        return EXIT_FAILURE
    print(f"gradcheck: all {len(results)} checks below {tol}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args):
    raise_malloc_reuse_threshold()
    config = _load_config(args.config)
    sizes = _parse_sizes(_pick(args, config, "sizes", _DEFAULT_BENCH_SIZES))
    quad_sizes = _parse_sizes(_pick(args, config, "quadratic-sizes",
                                    _pick(args, config, "sizes",
                                          _DEFAULT_BENCH_SIZES)))
    reps = int(_pick(args, config, "reps", 3))
    seed = int(_pick(args, config, "seed", 0))
    out_dir = Path(_pick(args, config, "out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    backends = kernels.available_backends() if args.compare_backends else [None]
    for backend in backends:
        rows.extend(bench_mod.run_scaling(sizes, reps=reps, seed=seed,
                                          kernel="cca", backend=backend))
    rows.extend(bench_mod.run_scaling(quad_sizes, reps=reps, seed=seed,
                                      kernel="quadratic"))
    bench_mod.write_csv(rows, out_dir / "bench.csv")

    series = {}
    slopes = {}
    for key in {(r.kernel, r.backend) for r in rows}:
        subset = [r for r in rows if (r.kernel, r.backend) == key]
        name = f"{key[0]}[{key[1]}]"
        series[name] = [(r.pixels, r.median_ns) for r in subset]
        if len(subset) >= 3:
            slopes[name] = bench_mod.fit_slope(subset)
    line_chart(series, out_dir / "bench.svg", title="wall clock vs pixels",
               xlabel="H*W", ylabel="median ns", loglog=True)
    for name in sorted(slopes):
        print(f"{name:18s} log-log slope vs H*W: {slopes[name]:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args):
    raise_malloc_reuse_threshold()
    config = _load_config(args.config)
    variant_text = _pick(args, config, "variants", ",".join(VARIANTS))
    variants = [v.strip() for v in variant_text.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        print(f"error: unknown variant(s) {unknown}; valid: {list(VARIANTS)}",
              file=sys.stderr)
        return EXIT_USAGE
    seeds = [int(s) for s in str(_pick(args, config, "seeds", "0,1,2")).split(",")]
    epochs = int(_pick(args, config, "epochs", TrainConfig.epochs))
    data_seed = int(_pick(args, config, "seed", 0))
    n_train = int(_pick(args, config, "train-frames", 2000))
    n_val = int(_pick(args, config, "val-frames", 400))
    n_ambig = int(_pick(args, config, "ambig-frames", 400))
    out_dir = Path(_pick(args, config, "out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    scene = SceneConfig()
    train_cfg = TrainConfig(
        epochs=epochs,
        batch_size=int(_pick(args, config, "batch-size", TrainConfig.batch_size)),
        lr=float(_pick(args, config, "lr", TrainConfig.lr)),
    )
    train_set = make_dataset([data_seed, 11], n_train, scene)
    val_set = make_dataset([data_seed, 22], n_val, scene)
    ambig_set = make_dataset([data_seed, 33], n_ambig, scene, ambiguous_only=True)
    save_dataset(out_dir / "train.jsonl", train_set)
    save_dataset(out_dir / "val.jsonl", val_set)
    save_dataset(out_dir / "ambig.jsonl", ambig_set)

    fields = ["variant", "seed", "ambig_depth_mae", "val_depth_mae",
              "val_dims_mae", "val_ap", "final_loss"]
    rows = []
    curves = {}
    try:
        for variant in variants:
            for seed in seeds:
                model, losses = train_toy(variant, train_set, scene, epochs,
                                          seed, train_cfg)
                ambig_rep = eval_toy(model, ambig_set, scene, train_cfg,
                                     ambiguous_only_objects=True,
                                     with_detections=False)
                val_rep = eval_toy(model, val_set, scene, train_cfg)
                rows.append({
                    "variant": variant,
                    "seed": seed,
                    "ambig_depth_mae": ambig_rep.depth_mae,
                    "val_depth_mae": val_rep.depth_mae,
                    "val_dims_mae": val_rep.dims_mae,
                    "val_ap": val_rep.ap if val_rep.ap is not None else "",
                    "final_loss": losses[-1] if losses else "",
                })
                if losses:
                    curves[f"{variant}/s{seed}"] = list(enumerate(losses))
                print(f"{variant:18s} seed {seed}: ambig depth MAE "
                      f"{ambig_rep.depth_mae:.3f} m, val AP "
                      f"{val_rep.ap if val_rep.ap is not None else float('nan'):.3f}")
    except Exception as exc:  # training divergence or similar
        print(f"ablation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    for variant in variants:
        mine = [r for r in rows if r["variant"] == variant]
        if not mine:
            continue
        aps = [r["val_ap"] for r in mine if r["val_ap"] != ""]
        finals = [r["final_loss"] for r in mine if r["final_loss"] != ""]
        rows.append({
            "variant": variant,
            "seed": "mean",
            "ambig_depth_mae": float(np.mean([r["ambig_depth_mae"] for r in mine])),
            "val_depth_mae": float(np.mean([r["val_depth_mae"] for r in mine])),
            "val_dims_mae": float(np.mean([r["val_dims_mae"] for r in mine])),
            "val_ap": float(np.mean(aps)) if aps else "",
            "final_loss": float(np.mean(finals)) if finals else "",
        })

    with (out_dir / "ablate.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v
                             for k, v in row.items()})
    if curves:
        line_chart(curves, out_dir / "ablate.svg", title="training loss",
                   xlabel="epoch", ylabel="mean loss")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _labels_by_frame(path):
    path = Path(path)
    if path.is_dir():
        return {p.name: load_label_file(p) for p in sorted(path.glob("*.txt"))}
    return {path.name: load_label_file(path)}


def _to_conf(scores):
    """Monotone map of arbitrary scores into [0, 1]; AP only needs order."""
    lo, hi = min(scores), max(scores)
    if lo >= 0.0 and hi <= 1.0:
        return list(scores)
    if hi == lo:
        return [0.5] * len(scores)
    return [(s - lo) / (hi - lo) for s in scores]


def cmd_eval(args):
    config = _load_config(args.config)
    class_name = args.class_name if args.class_name is not None \
        else str(config.get("class", "Car"))
    threshold = float(_pick(args, config, "iou", 0.7))
    out_dir = Path(_pick(args, config, "out", "out"))
    difficulty_cfg = config.get("difficulty", DEFAULT_DIFFICULTY)
    try:
        gt_frames = _labels_by_frame(args.labels_gt)
        pred_frames = _labels_by_frame(args.labels_pred)
    except (LabelParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    levels = list(difficulty_cfg) + ["all"]
    for level in levels:
        records = []
        n_gt = n_det = 0
        for frame in sorted(set(gt_frames) | set(pred_frames)):
            gts = [l for l in gt_frames.get(frame, [])
                   if l.type.lower() == class_name.lower()]
            if level != "all":
                gts = [l for l in gts
                       if difficulty_filter(l, level, difficulty_cfg)]
            preds = [l for l in pred_frames.get(frame, [])
                     if l.type.lower() == class_name.lower()]
            confs = _to_conf([l.score if l.score is not None else 1.0
                              for l in preds]) if preds else []
            dets = [Detection(box=to_box3d(l), class_id=0, confidence=c)
                    for l, c in zip(preds, confs)]
            n_gt += len(gts)
            n_det += len(dets)
            records.append(EvalRecord(gts=[to_box3d(l) for l in gts],
                                      detections=dets))
        entry = {"class": class_name, "difficulty": level,
                 "ap_3d": None, "ap_bev": None, "n_gt": n_gt, "n_det": n_det}
        if n_gt:
            entry["ap_3d"] = ap_r40(records, iou_3d, threshold)
            entry["ap_bev"] = ap_r40(records, bev_iou, threshold)
        entries.append(entry)
        ap3 = "undefined" if entry["ap_3d"] is None else f"{entry['ap_3d']:.4f}"
        apb = "undefined" if entry["ap_bev"] is None else f"{entry['ap_bev']:.4f}"
        print(f"{class_name} {level:9s} ap_3d={ap3} ap_bev={apb} "
              f"n_gt={n_gt} n_det={n_det}")
    with (out_dir / "eval.json").open("w") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="bottomup",
                     description="column attention + bottom-up scan toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--sizes", help="comma-separated HxWxC sizes")
    p.add_argument("--tol", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="scaling benchmark and slope fit")
    p.add_argument("--sizes")
    p.add_argument("--quadratic-sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--compare-backends", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train and evaluate pipeline variants")
    p.add_argument("--variants")
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="dataset seed")
    p.add_argument("--train-frames", type=int)
    p.add_argument("--val-frames", type=int)
    p.add_argument("--ambig-frames", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="AP evaluation of KITTI label files")
    p.add_argument("--labels-gt", required=True)
    p.add_argument("--labels-pred", required=True)
    p.add_argument("--class", dest="class_name")
    p.add_argument("--iou", type=float)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
