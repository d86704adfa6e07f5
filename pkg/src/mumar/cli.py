"""Command-line front end: generate, register, evaluate, export, benchmark.

Exit codes: 0 success, 2 registration or detection failure, 3 bad input or
configuration. ``MUMAR_OUTPUT_DIR`` overrides the output directory named
in a config file (an explicit ``--out`` still wins).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence


from . import io
from .errors import ConstraintsUnsatisfiable, MumarError, NotConverged
from .evaluation import (BenchmarkRow, benchmark_report, directed_distances, fine_align,
                         format_table, gauge_fixed_errors, stats_from_distances)
from .geometry import PointCloud, apply_transform
from .icp import IcpOptions
from .pipeline import evaluate_object, run_icp, run_mumar
from .planes import MarkerConstraints
from .registration import RegistrationOptions, RegistrationReport, transform_object
from .synth import SceneSpec, default_benchmark_scene, generate_views

log = logging.getLogger("mumar")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_BAD_INPUT = 3

OUTPUT_ENV = "MUMAR_OUTPUT_DIR"
SHAPES = ("cube", "pyramid", "double_pyramid")


@dataclass
class RunConfig:
    scene: Optional[dict] = None
    input_dir: Optional[str] = None
    constraints: dict = field(default_factory=lambda: MarkerConstraints.cube().to_dict())
    registration: dict = field(default_factory=lambda: asdict(RegistrationOptions()))
    backend: str = "mumar"
    rng_seed: Optional[int] = 0
    output_dir: str = "out"

    def validate(self) -> None:
        if (self.scene is None) == (self.input_dir is None):
            raise ValueError("exactly one of scene and input_dir must be set")
        if self.scene is not None and self.rng_seed is None:
            raise ValueError("synthetic runs need an rng_seed")
        if self.backend not in ("mumar", "icp"):
            raise ValueError(f"unknown backend {self.backend!r}")
        self.marker_constraints()
        self.registration_options()
        if self.scene is not None:
            SceneSpec.from_dict(self.scene)

    def marker_constraints(self) -> MarkerConstraints:
        return MarkerConstraints.from_dict(self.constraints)

    def registration_options(self) -> RegistrationOptions:
        known = {k: v for k, v in self.registration.items()
                 if k in RegistrationOptions.__dataclass_fields__}
        unknown = set(self.registration) - set(known)
        if unknown:
            raise ValueError(f"unknown registration options: {sorted(unknown)}")
        return RegistrationOptions(**known)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def _output_dir(flag: Optional[str], configured: Optional[str] = None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(configured or "out")


def _scene_from_args(args) -> SceneSpec:
    if getattr(args, "scene", None):
        return SceneSpec.from_dict(io.read_json(args.scene))
    return default_benchmark_scene(args.object, noise_sigma=args.sigma,
                                   n_views=args.n_views, step=args.step)


def _load_views(cfg: RunConfig):
    if cfg.input_dir is not None:
        return io.load_manifest(cfg.input_dir)
    return generate_views(SceneSpec.from_dict(cfg.scene), cfg.rng_seed)


def _write_transforms(report: RegistrationReport, out: Path) -> None:
    tdir = out / "transforms"
    tdir.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(report.transforms):
        io.write_transform(t, tdir / f"view_{i:03d}.txt")


def _write_error_trace(report: RegistrationReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "iteration", "rotation_error", "translation_error",
                    "converged"])
        for win in report.windows:
            for it, (r, t) in enumerate(win.errors):
                w.writerow([win.window[0], it, repr(r), repr(t), int(win.converged)])


def _write_stats_csv(rows: Sequence[dict], path: Path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def _read_transform_dir(path: Path, n: int):
    files = sorted(Path(path).glob("view_*.txt"))
    if len(files) != n:
        raise ValueError(f"{path}: {len(files)} transform files for {n} views")
    return [io.read_transform(f) for f in files]


def register_views(views, cfg: RunConfig):
    if cfg.backend == "icp":
        return run_icp(views, IcpOptions())
    return run_mumar(views, cfg.marker_constraints(), cfg.registration_options(),
                     cfg.rng_seed or 0)


def cmd_generate(args) -> int:
    spec = _scene_from_args(args)
    out = _output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    views = generate_views(spec, args.seed)
    io.write_dataset(views, out, binary=not args.ascii)
    io.write_json(spec.to_dict(), out / "scene.json")
    constraints = MarkerConstraints.cube(spec.marker_edge).to_dict()
    registration = asdict(RegistrationOptions(marker_edge=spec.marker_edge))
    cfg = RunConfig(scene=spec.to_dict(), rng_seed=args.seed, output_dir=str(out),
                    constraints=constraints, registration=registration)
    io.write_json(cfg.to_dict(), out / "run_config.json")
    io.write_json(constraints, out / "constraints.json")
    print(f"wrote {len(views)} views to {out}")
    return EXIT_OK


def _register_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_dict(io.read_json(args.config))
    else:
        cfg = RunConfig(scene=None, input_dir=None)
        edge = args.marker_edge
        if args.input:
            cfg.input_dir = str(args.input)
        else:
            spec = _scene_from_args(args)
            cfg.scene = spec.to_dict()
            edge = edge or spec.marker_edge
        edge = edge or 1.0
        cfg.constraints = MarkerConstraints.cube(edge).to_dict()
        if args.constraints:
            cfg.constraints = io.read_json(args.constraints)
        elif cfg.input_dir and (Path(cfg.input_dir) / "constraints.json").is_file():
            cfg.constraints = io.read_json(Path(cfg.input_dir) / "constraints.json")
        reg = dict(cfg.registration)
        for key in ("n_window", "rot_tol", "trans_tol", "max_iters"):
            value = getattr(args, key)
            if value is not None:
                reg[key] = value
        if args.no_pairwise_init:
            reg["pairwise_init"] = False
        if args.no_icp_fallback:
            reg["icp_fallback"] = False
        reg["marker_edge"] = float(edge)
        cfg.registration = reg
        cfg.rng_seed = args.seed
    if args.backend:
        cfg.backend = args.backend
    cfg.output_dir = str(_output_dir(args.out, cfg.output_dir if args.config else None))
    cfg.validate()
    return cfg


def cmd_register(args) -> int:
    cfg = _register_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(cfg.to_dict(), out / "run_config.json")
    views = _load_views(cfg)
    try:
        report, merged = register_views(views, cfg)
    except ConstraintsUnsatisfiable as exc:
        log.error("plane detection failed: %s", exc)
        return EXIT_NOT_CONVERGED
    doc = report.to_dict()
    if all(v.ground_truth is not None for v in views):
        rot, trans = gauge_fixed_errors(report.transforms, [v.ground_truth for v in views])
        doc["ground_truth_error"] = {"rotation_deg": rot.tolist(),
                                     "translation": trans.tolist(),
                                     "max_rotation_deg": float(rot.max()),
                                     "max_translation": float(trans.max())}
    _write_transforms(report, out)
    io.write_ply(merged, out / "merged_object.ply")
    io.write_json(doc, out / "report.json")
    _write_error_trace(report, out / "error_trace.csv")
    from .plotting import plot_error_trace
    plot_error_trace(report, out / "error_trace.png")
    if not report.converged:
        log.error("registration did not converge in every window; see %s",
                  out / "report.json")
        return EXIT_NOT_CONVERGED
    print(f"registered {len(views)} views with {cfg.backend}; results in {out}")
    return EXIT_OK


def _reference(args):
    if args.reference_scene:
        return SceneSpec.from_dict(io.read_json(args.reference_scene)).object_mesh()
    if args.reference:
        return io.read_ply(args.reference)
    raise ValueError("give --reference (PLY) or --reference-scene (scene.json)")


def cmd_evaluate(args) -> int:
    result = io.read_ply(args.result)
    reference = _reference(args)
    out = _output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.align:
        try:
            result, t = fine_align(result, reference)
        except NotConverged as exc:
            log.error("fine alignment failed: %s", exc)
            return EXIT_NOT_CONVERGED
        io.write_transform(t, out / "alignment.txt")
    d = directed_distances(result, reference)
    stats = stats_from_distances(d)
    _write_stats_csv([asdict(stats)], out / "stats.csv")
    from .plotting import distance_colours, plot_distance_histogram
    rgb = distance_colours(d)
    io.write_ply(result, out / "distances.ply",
                 scalars={"distance": d, "red": rgb[:, 0], "green": rgb[:, 1],
                          "blue": rgb[:, 2]})
    plot_distance_histogram(d, out / "distance_histogram.png")
    print(f"min {stats.min:.6g} max {stats.max:.6g} mean {stats.mean:.6g} "
          f"rms {stats.rms:.6g} n {stats.n_samples}")
    return EXIT_OK


def cmd_export(args) -> int:
    views = io.load_manifest(args.input)
    transforms = _read_transform_dir(Path(args.transforms), len(views))
    out = _output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ply(transform_object([v.object_cloud for v in views], transforms),
                 out / "merged_object.ply", binary=not args.ascii)
    scene = PointCloud.concatenate([apply_transform(t, c) for v, t in zip(views, transforms)
                                    for c in v.clouds])
    io.write_ply(scene, out / "merged_scene.ply", binary=not args.ascii)
    print(f"exported {len(views)} views to {out}")
    return EXIT_OK


def run_benchmark(objects: Sequence[str], sigmas: Sequence[float], n_views: int = 60,
                  seed: int = 0, out: Optional[Path] = None) -> List[dict]:
    """µ-MAR vs ICP over objects x noise levels; sigmas are in marker-edge units."""
    rows = []
    for shape in objects:
        for sigma in sigmas:
            spec = default_benchmark_scene(shape, noise_sigma=sigma, n_views=n_views)
            views = generate_views(spec, seed)
            mesh = spec.object_mesh()
            for method in ("mumar", "icp"):
                if method == "mumar":
                    report, merged = run_mumar(views, MarkerConstraints.cube(spec.marker_edge),
                                               RegistrationOptions(marker_edge=spec.marker_edge),
                                               seed)
                else:
                    report, merged = run_icp(views)
                ev = evaluate_object(merged, mesh)
                rows.append(BenchmarkRow(method, shape, sigma, ev.stats))
                log.info("%s %s sigma=%g mean=%.4g", method, shape, sigma, ev.stats.mean)
                if out is not None:
                    from .plotting import plot_distance_histogram
                    d = directed_distances(ev.aligned, mesh)
                    plot_distance_histogram(d, out / f"hist_{method}_{shape}_{sigma:g}.png",
                                            label=f"{method} {shape} sigma={sigma:g}")
    return benchmark_report(rows)


def cmd_benchmark(args) -> int:
    out = _output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_benchmark(args.objects, args.sigmas, args.n_views, args.seed, out)
    _write_stats_csv(report, out / "benchmark.csv")
    table = format_table(report)
    (out / "benchmark.txt").write_text(table + "\n")
    from .plotting import plot_benchmark
    plot_benchmark(report, out / "benchmark.png")
    print(table)
    return EXIT_OK


def _add_scene_args(p) -> None:
    p.add_argument("--scene", help="scene.json to use instead of the default benchmark")
    p.add_argument("--object", choices=SHAPES, default="double_pyramid")
    p.add_argument("--sigma", type=float, default=0.0,
                   help="noise sigma in marker-edge units")
    p.add_argument("--n-views", type=int, default=60)
    p.add_argument("--step", type=float, default=6.0, help="turntable step in degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mumar",
                                     description="Plane-marker multi-view registration.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic turntable dataset")
    _add_scene_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("register", help="register a dataset into one frame")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="dataset directory or manifest.json")
    src.add_argument("--config", help="run_config.json from an earlier run")
    _add_scene_args(p)
    p.add_argument("--constraints", help="marker constraints JSON")
    p.add_argument("--marker-edge", type=float,
                   help="marker edge length; scales default tolerances")
    p.add_argument("--backend", choices=("mumar", "icp"))
    p.add_argument("--n-window", type=int)
    p.add_argument("--rot-tol", type=float)
    p.add_argument("--trans-tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--no-pairwise-init", action="store_true")
    p.add_argument("--no-icp-fallback", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="distance statistics against a reference")
    p.add_argument("result", help="result PLY")
    p.add_argument("--reference", help="reference PLY cloud")
    p.add_argument("--reference-scene", help="scene.json whose object mesh is the reference")
    p.add_argument("--align", action="store_true", help="fine-align with ICP first")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="apply transforms and write merged clouds")
    p.add_argument("--input", required=True, help="dataset directory or manifest.json")
    p.add_argument("--transforms", required=True, help="directory of view_*.txt files")
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("benchmark", help="compare against the ICP baseline")
    p.add_argument("--objects", nargs="+", choices=SHAPES, default=list(SHAPES))
    p.add_argument("--sigmas", nargs="+", type=float, default=[0.0, 0.002, 0.003])
    p.add_argument("--n-views", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConstraintsUnsatisfiable as exc:
        log.error("%s", exc)
        return EXIT_NOT_CONVERGED
    except NotConverged as exc:
        log.error("%s", exc)
        return EXIT_NOT_CONVERGED
    except (MumarError, ValueError, OSError, KeyError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
