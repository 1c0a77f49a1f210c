"""Command-line entry point: ``crispbench eval|sweep|consensus|fuse|net-demo``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import benchmark as bm
from .crispnet import PathwayConfig, init_pathway_params, refinement_pathway
from .edgemap import (
    AnnotationSet,
    ImageFormatError,
    average_maps,
    load_binary,
    load_gray,
    resize_bilinear,
    save_gray,
)
from .manifest import ManifestError, load_manifest
from .pipeline import Label, consensus_labels
from .tensorio import write_bundle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2
EXIT_ENTRY_FAILED = 3

REPORT_SCHEMA = "crispbench.report/1"
SWEEP_SCHEMA = "crispbench.sweep/1"
LABEL_PIXELS = {Label.NEGATIVE: 0, Label.IGNORE: 128, Label.POSITIVE: 255}
IMAGE_SUFFIXES = (".png", ".pgm")


def _default_jobs() -> int:
    env = os.environ.get("CRISPBENCH_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# eval / sweep

def _evaluate_entry(job):
    """Worker: load one manifest entry and evaluate it under each config."""
    entry, cfgs = job
    try:
        pred = load_gray(entry.pred)
        gt = AnnotationSet(tuple(load_binary(p) for p in entry.gt))
        if pred.shape != gt.shape:
            raise bm.ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        return entry.id, [bm.evaluate_image(pred, gt, c) for c in cfgs], None
    except (ValueError, ImageFormatError) as exc:
        return entry.id, None, f"{type(exc).__name__}: {exc}"


def _run_entries(manifest, cfgs, jobs):
    work = [(e, cfgs) for e in manifest.entries]
    if jobs <= 1 or len(work) <= 1:
        return [_evaluate_entry(w) for w in work]
    with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
        return list(pool.map(_evaluate_entry, work))


def _config_from_args(args) -> bm.BenchmarkConfig:
    return bm.BenchmarkConfig(d_fraction=args.max_dist, n_thresholds=args.thresholds,
                              thin_predictions=not args.no_thin)


def _load_checked(path):
    try:
        manifest = load_manifest(path)
    except FileNotFoundError:
        print(f"error: manifest not found: {path}", file=sys.stderr)
        return None, EXIT_MISSING
    except ManifestError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return None, EXIT_USAGE
    missing = manifest.missing_paths()
    if missing:
        for p in missing:
            print(f"missing: {p}", file=sys.stderr)
        print(f"error: {len(missing)} referenced file(s) not found", file=sys.stderr)
        return None, EXIT_MISSING
    return manifest, EXIT_OK


def _image_table(ident, counts, thresholds):
    f1s = [c.exact_f1() for c in counts]
    best = f1s.index(max(f1s))
    return {
        "id": ident,
        "best_threshold": float(thresholds[best]),
        "best_f1": float(f1s[best]),
        "counts": [[float(t), c.sum_p, c.cnt_p, c.sum_r, c.cnt_r] for t, c in zip(thresholds, counts)],
    }


def build_report(cfg, results, elapsed) -> dict:
    ok = [(i, c[0]) for i, c, err in results if err is None]
    failed = [{"id": i, "error": err} for i, _, err in results if err is not None]
    thresholds = cfg.thresholds
    doc = {
        "schema": REPORT_SCHEMA,
        "config": cfg.to_dict(),
        "images": [_image_table(i, c, thresholds) for i, c in ok],
        "failed": failed,
        "metrics": bm.aggregate([c for _, c in ok], thresholds).to_dict() if ok else None,
        "timing": {"seconds": elapsed},
    }
    return doc


def cmd_eval(args) -> int:
    manifest, code = _load_checked(args.manifest)
    if manifest is None:
        return code
    cfg = _config_from_args(args)
    start = time.perf_counter()
    results = _run_entries(manifest, [cfg], args.jobs)
    doc = build_report(cfg, results, time.perf_counter() - start)
    _write_text(args.out, _dumps(doc))
    csv_path = args.csv or (Path(args.out).with_suffix(".csv") if args.out and args.out != "-" else None)
    if csv_path and doc["metrics"] is not None:
        curve = [bm.PRPoint(**p) for p in doc["metrics"]["curve"]]
        _write_text(csv_path, bm.curve_csv(curve))
    if doc["metrics"] is not None:
        m = doc["metrics"]
        print(f"ODS={m['ods']:.4f} OIS={m['ois']:.4f} AP={m['ap']:.4f} "
              f"({len(doc['images'])} images, d={cfg.d_fraction})", file=sys.stderr)
    for f in doc["failed"]:
        print(f"failed: {f['id']}: {f['error']}", file=sys.stderr)
    return EXIT_ENTRY_FAILED if doc["failed"] else EXIT_OK


def _sweep_from_results(cfg, factors, results):
    ok = [c for _, c, err in results if err is None]
    reports = []
    counts = []
    for j, f in enumerate(factors):
        per_image = [c[j] for c in ok]
        counts.append(per_image)
        reports.append(bm.aggregate(per_image, cfg.thresholds))
    return bm.CrispnessSweep(cfg.d_fraction, tuple(factors), tuple(reports), tuple(counts))


SWEEP_CSV_HEADER = ("factor", "d_fraction", "ods", "ois", "ap")


def sweep_csv(sweep: bm.CrispnessSweep) -> str:
    lines = [",".join(SWEEP_CSV_HEADER)]
    for f, r in zip(sweep.factors, sweep.reports):
        lines.append(",".join(repr(v) for v in (f, sweep.d_fraction * f, r.ods, r.ois, r.ap)))
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    factors = args.factors
    if not factors:
        print("error: empty factor list", file=sys.stderr)
        return EXIT_USAGE
    if any(not 0 < f <= 1 for f in factors):
        print(f"error: factors must lie in (0, 1], got {factors}", file=sys.stderr)
        return EXIT_USAGE
    cfg = _config_from_args(args)
    cfgs = [cfg.scaled(f) for f in factors]
    manifests = [args.manifest] + ([args.compare] if args.compare else [])
    start = time.perf_counter()
    sweeps, failed = [], []
    for mpath in manifests:
        manifest, code = _load_checked(mpath)
        if manifest is None:
            return code
        results = _run_entries(manifest, cfgs, args.jobs)
        failed += [{"id": i, "manifest": str(mpath), "error": err} for i, _, err in results if err is not None]
        if all(err is not None for _, _, err in results):
            print(f"error: no entry of {mpath} could be evaluated", file=sys.stderr)
            for f in failed:
                print(f"failed: {f['id']}: {f['error']}", file=sys.stderr)
            return EXIT_ENTRY_FAILED
        sweeps.append(_sweep_from_results(cfg, factors, results))
    labels = args.labels or ["a", "b"][: len(sweeps)]
    doc = {
        "schema": SWEEP_SCHEMA,
        "config": cfg.to_dict(),
        "sweeps": {label: s.to_dict() for label, s in zip(labels, sweeps)},
        "failed": failed,
        "timing": {"seconds": time.perf_counter() - start},
    }
    if len(sweeps) == 2:
        doc["gaps"] = {"minuend": labels[0], "subtrahend": labels[1], "by_factor": bm.sweep_gaps(*sweeps)}
    _write_text(args.out, _dumps(doc))
    csv_path = args.csv or (Path(args.out).with_suffix(".csv") if args.out and args.out != "-" else None)
    if csv_path:
        _write_text(csv_path, sweep_csv(sweeps[0]))
    for f, r in zip(sweeps[0].factors, sweeps[0].reports):
        print(f"factor={f:g} ODS={r.ods:.4f} OIS={r.ois:.4f} AP={r.ap:.4f}", file=sys.stderr)
    return EXIT_ENTRY_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------
# consensus / fuse

def _images_in(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()}


def encode_labels(label_map) -> np.ndarray:
    out = np.zeros(label_map.shape, dtype=np.uint8)
    for label, pixel in LABEL_PIXELS.items():
        out[label_map.labels == label] = pixel
    return out


def decode_labels(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    lab = np.full(pixels.shape, 255, dtype=np.uint8)
    for label, pixel in LABEL_PIXELS.items():
        lab[pixels == pixel] = label
    if (lab == 255).any():
        raise ValueError("label image contains values other than 0/128/255")
    return lab


def cmd_consensus(args) -> int:
    gt_dir = Path(args.gt_dir)
    if not gt_dir.is_dir():
        print(f"error: not a directory: {gt_dir}", file=sys.stderr)
        return EXIT_MISSING
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    summary = {}
    for sub in sorted(p for p in gt_dir.iterdir() if p.is_dir()):
        files = list(_images_in(sub).values())
        if not files:
            print(f"failed: {sub.name}: no annotation images", file=sys.stderr)
            failed += 1
            continue
        try:
            labels = consensus_labels(AnnotationSet(tuple(load_binary(f) for f in files)), args.min_positive)
        except (ValueError, ImageFormatError) as exc:
            print(f"failed: {sub.name}: {exc}", file=sys.stderr)
            failed += 1
            continue
        Image.fromarray(encode_labels(labels), mode="L").save(out_dir / f"{sub.name}.png")
        summary[sub.name] = {"annotators": len(files),
                             "positive": labels.count(Label.POSITIVE),
                             "ignore": labels.count(Label.IGNORE),
                             "negative": labels.count(Label.NEGATIVE)}
    sys.stdout.write(_dumps(summary))
    return EXIT_ENTRY_FAILED if failed else EXIT_OK


def fuse_maps(per_scale, scales):
    """Average per-scale maps after resizing each to the original size.

    The original size is that of the scale-1 map when present, otherwise the
    first map's size divided by its scale.
    """
    if 1.0 in scales:
        h, w = per_scale[scales.index(1.0)].shape
    else:
        h0, w0 = per_scale[0].shape
        h, w = max(1, round(h0 / scales[0])), max(1, round(w0 / scales[0]))
    return average_maps([resize_bilinear(m, w, h) for m in per_scale])


def cmd_fuse(args) -> int:
    dirs = [Path(d) for d in args.dirs]
    scales = args.scales
    if len(dirs) != len(scales):
        print(f"error: {len(dirs)} directories but {len(scales)} scales", file=sys.stderr)
        return EXIT_USAGE
    if any(s <= 0 for s in scales):
        print("error: scales must be positive", file=sys.stderr)
        return EXIT_USAGE
    listings = []
    for d in dirs:
        if not d.is_dir():
            print(f"missing: {d}", file=sys.stderr)
            return EXIT_MISSING
        listings.append(_images_in(d))
    ids = sorted(set().union(*listings))
    missing = [f"{d}/{i}" for i in ids for d, lst in zip(dirs, listings) if i not in lst]
    if missing:
        for m in missing:
            print(f"missing scale output: {m}", file=sys.stderr)
        return EXIT_MISSING
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in ids:
        fused = fuse_maps([load_gray(lst[i]) for lst in listings], scales)
        save_gray(fused, out_dir / f"{i}.png", bits=args.bits)
    print(f"fused {len(ids)} maps into {out_dir}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# net-demo

def cmd_net_demo(args) -> int:
    cfg = PathwayConfig.halving(args.levels, top=args.top)
    rng = np.random.default_rng(args.seed)
    params = init_pathway_params(cfg, rng)
    feats = []
    size = args.size
    for k_h in cfg.laterals():
        feats.append(rng.standard_normal((args.batch, k_h, size, size)))
        size *= cfg.upscale
    trace = []
    out = refinement_pathway(feats, cfg, params, trace)
    print("schedule: " + " -> ".join(str(c) for c in cfg.module_channels))
    for j, in_shape, out_shape in trace:
        print(f"module {j + 1}: top-down {tuple(in_shape)} + lateral {tuple(feats[j].shape)} -> {tuple(out_shape)}")
    print(f"output: {tuple(out.shape)}")
    if args.dump:
        tensors = {f"side_{j}": f for j, f in enumerate(feats)}
        tensors["output"] = out
        if args.with_weights:
            tensors["seed_w"] = params.seed_w
            for j, mp in enumerate(params.modules):
                for name, arr in mp.arrays().items():
                    if arr.ndim == 4:
                        tensors[f"module{j + 1}_{name}"] = arr
        meta = {"seed": args.seed, "levels": args.levels, "module_channels": list(cfg.module_channels),
                "lateral_channels": list(cfg.laterals()), "upscale": cfg.upscale,
                "trace": [{"module": j + 1, "in": list(a), "out": list(b)} for j, a, b in trace]}
        path = write_bundle(args.dump, tensors, meta)
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_bench_flags(p):
    p.add_argument("manifest", help="line-oriented JSON manifest")
    p.add_argument("--max-dist", type=float, default=bm.BSDS_D0,
                   help="matching tolerance as a fraction of the image diagonal (default %(default)s)")
    p.add_argument("--thresholds", type=int, default=99, help="number of thresholds (default %(default)s)")
    p.add_argument("--no-thin", action="store_true", help="do not thin binarized predictions")
    p.add_argument("--out", default="-", help="JSON report path ('-' for stdout)")
    p.add_argument("--csv", default=None, help="CSV path (default: next to --out)")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: $CRISPBENCH_JOBS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crispbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="benchmark predictions listed in a manifest")
    _add_bench_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate at several fractions of the tolerance")
    _add_bench_flags(p)
    p.add_argument("--factors", type=_float_list, default=[1.0, 0.5, 0.25])
    p.add_argument("--compare", default=None, help="second manifest; reports per-factor metric gaps")
    p.add_argument("--labels", type=lambda s: s.split(","), default=None, help="names for the two result sets")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("consensus", help="tri-state labels from multi-annotator ground truth")
    p.add_argument("gt_dir", help="directory with one sub-directory of annotation images per id")
    p.add_argument("--min-positive", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("fuse", help="average per-scale edge maps at the original resolution")
    p.add_argument("dirs", nargs="+", help="one prediction directory per scale")
    p.add_argument("--scales", type=_float_list, default=[0.5, 1.0, 2.0])
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("net-demo", help="run the refinement pathway on seeded random features")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--top", type=int, default=256, help="channel width of the top-down seed")
    p.add_argument("--size", type=int, default=8, help="spatial size of the coarsest feature")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump", default=None, help="directory for tensor files")
    p.add_argument("--with-weights", action="store_true")
    p.set_defaults(func=cmd_net_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 0) is None:
        args.jobs = _default_jobs()
    if getattr(args, "min_positive", 1) < 1:
        parser.error("--min-positive must be >= 1")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
