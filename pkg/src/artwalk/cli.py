"""Command-line pipeline: gen, compose, evaluate, attack, batch.

Exit codes: 0 success, 1 usage or input validation, 2 runtime or adapter
failure. Every subcommand is deterministic given its flags and seed, and
reports embed the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from queue import SimpleQueue

from . import __version__
from .attack import AttackConfig, optimize_perturbation, save_perturbation
from .compose import SceneManifest, compose_scene, load_manifest, materialize, save_manifest
from .detect import DetectorClient, SyntheticDetector, tuned_detector_config
from .errors import AdapterError, ArtwalkError, InputError
from .metrics import MetricsReport, evaluate_dataset, write_detections_file
from .raster import load_image, load_mask, save_image
from .scenegen import SceneGenConfig, generate_dataset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors instead of argparse's 2
        raise UsageError(message)


def _detector_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--detector", choices=["synthetic", "cmd"], default="synthetic",
        help="which detector to run (default: synthetic)",
    )
    p.add_argument("--detector-cmd", help="adapter command line (required with --detector cmd)")
    p.add_argument("--timeout", type=float, default=30.0, help="adapter timeout in seconds")
    p.add_argument("--workers", type=int, default=1, help="parallel detection workers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="artwalk", description=__doc__)
    parser.add_argument("--version", action="version", version=f"artwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--size", default="320x240", help="image size WxH")
    p.add_argument("--crosswalks", type=int, default=2)
    p.add_argument("--peds", default="1:3", help="pedestrians per scene, LO:HI")
    p.add_argument("--skew", type=float, default=0.18, help="perspective skew in [0, 0.5]")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compose", help="inject an art pattern into a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--art", help="art image; omitted = clean pass-through")
    p.add_argument("--art-rotate", type=int, default=0, help="rotate art correspondence by k*90 deg")
    p.add_argument("--blend", type=float, default=1.0, help="art opacity over the road (default 1)")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("evaluate", help="run a detector over a dataset and report metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True, help="metrics report JSON path")
    p.add_argument("--detections-out", help="detections interchange JSON path")
    p.add_argument("--art", help="optionally inject this art before evaluating")
    p.add_argument("--art-rotate", type=int, default=0)
    _detector_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="optimize a bounded perturbation of an art pattern")
    p.add_argument("--dataset", required=True, help="training dataset directory")
    p.add_argument("--eval-dataset", help="held-out dataset for before/after reports")
    p.add_argument("--art", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-n", type=int, default=8, help="use the first N scenes for training")
    p.add_argument("--config", help="AttackConfig JSON file (flags below override)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--step-size", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--queries", type=int, help="probe pairs per gradient estimate")
    p.add_argument("--sigma", type=float, help="smoothing sigma")
    p.add_argument("--seed", type=int)
    p.add_argument("--support", help="optional support mask PNG in art coordinates")
    _detector_args(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("batch", help="compare multiple art patterns on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory for the comparison table")
    p.add_argument("--art", nargs="+", required=True, help="one or more art images")
    p.add_argument("--art-rotate", type=int, default=0)
    _detector_args(p)
    p.set_defaults(func=cmd_batch)
    return parser


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise UsageError(f"bad --size {text!r}, expected WxH") from exc


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise UsageError(f"bad range {text!r}, expected LO:HI") from exc


def _load_manifests(dataset: str | Path) -> list[SceneManifest]:
    root = Path(dataset)
    paths = sorted(root.glob("manifest_*.json"))
    if not paths:
        raise UsageError(f"no manifest_*.json files in {root}")
    return [load_manifest(p) for p in paths]


def _make_detectors(args, count: int):
    """One detector callable per worker; synthetic is shared (it is pure)."""
    if args.detector == "cmd":
        if not args.detector_cmd:
            raise UsageError("--detector cmd requires --detector-cmd")
        return [DetectorClient(args.detector_cmd, timeout=args.timeout) for _ in range(count)]
    if args.detector_cmd:
        raise UsageError("--detector-cmd only applies with --detector cmd")
    det = SyntheticDetector(tuned_detector_config())
    return [det] * count


def _close_detectors(detectors) -> None:
    for det in detectors:
        if isinstance(det, DetectorClient):
            det.close()


def _run_detections(scenes, art, detectors, workers: int, orientation: int = 0):
    """Detect on every composed scene; results merged in scene order.

    Each adapter handle is serial, so workers check a detector out of a queue
    for the duration of one image. Adapter failures do not stop the sweep:
    each failing image is recorded in the returned error list so the caller
    can report all of them at once.
    """
    pool_q: SimpleQueue = SimpleQueue()
    for det in detectors:
        pool_q.put(det)

    def one(scene):
        image = compose_scene(
            scene.background, scene.regions, art, scene.foregrounds, orientation=orientation
        )
        detector = pool_q.get()
        try:
            return detector(image), None
        except AdapterError as exc:
            return [], exc
        finally:
            pool_q.put(detector)

    if workers <= 1:
        results = [one(scene) for scene in scenes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, scenes))
    per_image = [dets for dets, _ in results]
    errors = [(i, exc) for i, (_, exc) in enumerate(results) if exc is not None]
    return per_image, errors


def _evaluate(manifests, art, args, orientation: int = 0):
    scenes = [materialize(m) for m in manifests]
    detectors = _make_detectors(args, max(1, args.workers))
    try:
        per_image, errors = _run_detections(scenes, art, detectors, args.workers, orientation)
    finally:
        _close_detectors(detectors)
    if errors:
        for i, exc in errors:
            print(f"image {i} ({manifests[i].background}): {exc}", file=sys.stderr)
        raise AdapterError(f"{len(errors)} of {len(scenes)} images failed detection")
    report = evaluate_dataset(per_image, [s.ground_truth for s in scenes])
    records = [
        {"image": m.background, "detections": dets, "ground_truth": s.ground_truth}
        for m, s, dets in zip(manifests, scenes, per_image)
    ]
    return report, records


def _report_doc(report: MetricsReport, config: dict) -> dict:
    return {"config": config, "metrics": report.to_json(), "interpolation": "all_points"}


def _table_row(name: str, r: MetricsReport) -> str:
    return (
        f"{name:<24s} {r.max_f1:8.3f} {r.precision_at_max_f1:10.3f} "
        f"{r.recall_at_max_f1:8.3f} {r.ap50:8.3f} {r.fdr:8.3f}"
    )


_TABLE_HEADER = f"{'pattern':<24s} {'max-F1':>8s} {'precision':>10s} {'recall':>8s} {'AP@0.5':>8s} {'FDR':>8s}"


def cmd_gen(args) -> int:
    cfg = SceneGenConfig(
        image_size=_parse_size(args.size),
        n_crosswalks=args.crosswalks,
        pedestrians_per_scene=_parse_range(args.peds),
        perspective_skew=args.skew,
        seed=args.seed,
    )
    manifests = generate_dataset(cfg, args.n, args.out)
    print(f"wrote {len(manifests)} scenes to {args.out}")
    return 0


def cmd_compose(args) -> int:
    manifests = _load_manifests(args.dataset)
    art = load_image(args.art) if args.art else None
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    failures = 0
    for i, manifest in enumerate(manifests):
        scene = materialize(manifest)
        errors: list = []
        if art is None:
            image = compose_scene(scene.background, [], None, scene.foregrounds)
        else:
            from .compose import inject_art

            base = inject_art(
                scene.background, scene.regions, art,
                orientation=args.art_rotate, blend=args.blend, errors=errors,
            )
            image = compose_scene(base, [], None, scene.foregrounds)
        failures += len(errors)
        rel = f"images/scene_{i:03d}.png"
        save_image(image, out / rel)
        save_manifest(
            SceneManifest(
                background=rel,
                regions=manifest.regions,
                ground_truth=manifest.ground_truth,
                foregrounds=[],
                base_dir=out,
            ),
            out / f"manifest_{i:03d}.json",
        )
    print(f"composed {len(manifests)} scenes to {args.out}" + (
        f" ({failures} region failures)" if failures else ""
    ))
    return 0


def cmd_evaluate(args) -> int:
    manifests = _load_manifests(args.dataset)
    art = load_image(args.art) if args.art else None
    report, records = _evaluate(manifests, art, args, orientation=args.art_rotate)
    config = {
        "dataset": str(args.dataset),
        "art": args.art,
        "detector": args.detector,
        "detector_cmd": args.detector_cmd,
        "workers": args.workers,
        "art_rotate": args.art_rotate,
    }
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(_report_doc(report, config), indent=1) + "\n")
    if args.detections_out:
        write_detections_file(args.detections_out, records)
    print(_TABLE_HEADER)
    print(_table_row(Path(args.art).stem if args.art else "clean", report))
    return 0


def _attack_config(args) -> AttackConfig:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    overrides = {
        "epsilon": args.epsilon,
        "step_size": args.step_size,
        "iterations": args.iterations,
        "queries_per_gradient": args.queries,
        "smoothing_sigma": args.sigma,
        "seed": args.seed,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return AttackConfig.from_json(doc)


def cmd_attack(args) -> int:
    cfg = _attack_config(args)
    manifests = _load_manifests(args.dataset)
    train = [materialize(m) for m in manifests[: args.train_n]]
    art = load_image(args.art).rgb()
    support = load_mask(args.support) if args.support else None
    detectors = _make_detectors(args, 1)
    try:
        perturbation, trace = optimize_perturbation(art, train, detectors[0], cfg, support=support)
    finally:
        _close_detectors(detectors)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_perturbation(perturbation, out)
    trace.write_jsonl(out / "trace.jsonl")

    from .compose import apply_perturbation

    perturbed_art = apply_perturbation(art, perturbation)
    save_image(perturbed_art, out / "perturbed_art.png")

    eval_manifests = _load_manifests(args.eval_dataset) if args.eval_dataset else manifests
    report_before, _ = _evaluate(eval_manifests, art, args)
    report_after, _ = _evaluate(eval_manifests, perturbed_art, args)
    config = {
        "dataset": str(args.dataset),
        "eval_dataset": str(args.eval_dataset or args.dataset),
        "art": args.art,
        "train_n": args.train_n,
        "attack": cfg.to_json(),
        "detector": args.detector,
        "detector_cmd": args.detector_cmd,
    }
    (out / "report_before.json").write_text(
        json.dumps(_report_doc(report_before, config), indent=1) + "\n"
    )
    (out / "report_after.json").write_text(
        json.dumps(_report_doc(report_after, config), indent=1) + "\n"
    )
    print(_TABLE_HEADER)
    print(_table_row("before", report_before))
    print(_table_row("after", report_after))
    print(
        f"loss {trace.metrics_delta['loss_initial']:.4f} -> "
        f"{trace.metrics_delta['loss_best']:.4f}"
    )
    return 0


def cmd_batch(args) -> int:
    manifests = _load_manifests(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    lines = [_TABLE_HEADER]
    for art_path in args.art:
        art = load_image(art_path).rgb()
        report, _ = _evaluate(manifests, art, args, orientation=args.art_rotate)
        rows.append({"pattern": art_path, "metrics": report.to_json()})
        lines.append(_table_row(Path(art_path).stem, report))
    config = {
        "dataset": str(args.dataset),
        "patterns": list(args.art),
        "detector": args.detector,
        "detector_cmd": args.detector_cmd,
        "workers": args.workers,
        "art_rotate": args.art_rotate,
    }
    (out / "comparison.json").write_text(
        json.dumps({"config": config, "rows": rows}, indent=1) + "\n"
    )
    text = "\n".join(lines) + "\n"
    (out / "comparison.txt").write_text(text)
    print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return 2
    except ArtwalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
