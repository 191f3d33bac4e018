"""Command-line interface: registration, geodesics, statistics, synthesis, eval."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation, synthgen
from .basis import serialize_basis
from .esrvf import tree_forward, tree_inverse
from .metric import MetricWeights, complete_pair, apply_map, geodesic
from .spatreg import (
    RegistrationOptions,
    register_trees,
    serialize_registration,
)
from .stats import Trajectory4DModel, karcher_mean_trees, parse_model, serialize_model
from .trajectory import geodesic4d, spatiotemporal_pipeline
from .treemodel import (
    SEQ_FORMAT,
    TREE_FORMAT,
    Tree,
    Tree4D,
    TreeFormatError,
    export_mesh,
    normalize_scale,
    normalize_translation,
    parse_sequence,
    parse_tree,
    resample_sequence,
    resample_tree,
    serialize_sequence,
    serialize_tree,
)

WARP_FORMAT = "arbor4d-warp/1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    """Resolved run configuration; every field has a matching CLI flag."""

    lambda_m: float = 1.0
    lambda_s: float = 1.0
    lambda_p: float = 0.5
    w_rad: float = 1.0
    samples: int = 100
    grid: int = 100
    traj_samples: int = 30
    energy: float = 0.99
    clamp: float = 3.0
    seed: int = 0
    rounds: int = 3
    passes: int = 1
    scale_normalize: bool = False
    literal_warp_action: bool = False
    exact_permutation: bool = False
    no_yj: bool = False
    workers: int = 1

    def weights(self) -> MetricWeights:
        return MetricWeights(self.lambda_m, self.lambda_s, self.lambda_p, self.w_rad)

    def reg_options(self) -> RegistrationOptions:
        return RegistrationOptions(
            grid=self.grid, rounds=self.rounds, exact_permutation=self.exact_permutation
        )


class InputError(Exception):
    pass


def _default_workers() -> int:
    env = os.environ.get("ARBOR4D_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(workers=_default_workers())
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        for key, value in data.items():
            if key not in known:
                raise InputError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            setattr(cfg, f.name, override)
    return cfg


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_tree(path: str, cfg: RunConfig) -> Tree:
    tree = parse_tree(_read(path))
    tree = resample_tree(tree, cfg.samples)
    tree = normalize_translation(tree)
    if cfg.scale_normalize:
        tree, _ = normalize_scale(tree)
    return tree


def _load_sequence(path: str, cfg: RunConfig) -> Tree4D:
    seq = parse_sequence(_read(path))
    seq = resample_sequence(seq, cfg.samples)
    frames = []
    for frame in seq.frames:
        frame = normalize_translation(frame)
        if cfg.scale_normalize:
            frame, _ = normalize_scale(frame)
        frames.append(frame)
    return Tree4D(seq.times, tuple(frames))


def _detect_format(path: str) -> str:
    try:
        obj = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise TreeFormatError("$", f"invalid JSON: {exc}") from exc
    fmt = obj.get("format") if isinstance(obj, dict) else None
    if fmt not in (TREE_FORMAT, SEQ_FORMAT):
        raise TreeFormatError("$.format", f"unsupported format {fmt!r}")
    return fmt


def _write(path: str, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _write_report(path: str | None, payload: dict, cfg: RunConfig) -> None:
    payload = dict(payload)
    payload["config"] = asdict(cfg)
    text = json.dumps(payload, separators=(",", ":"), allow_nan=False)
    if path:
        _write(path, text.encode("utf-8"))
    else:
        print(text)


# ---------------------------------------------------------------------------
# Commands


def _cmd_gen(args, cfg: RunConfig) -> None:
    spec = synthgen.parse_spec(_read(args.spec))
    seed = cfg.seed if args.seed is not None else spec.seed
    if args.seq:
        seq = synthgen.gen_tree4d(spec, seed, samples=cfg.samples)
        _write(args.out, serialize_sequence(seq))
    else:
        tree = synthgen.gen_tree(spec, seed, samples=cfg.samples)
        _write(args.out, serialize_tree(tree))


def _cmd_export_mesh(args, cfg: RunConfig) -> None:
    tree = parse_tree(_read(args.input))
    _write(args.out, export_mesh(tree, args.segments))


def _cmd_register_spatial(args, cfg: RunConfig) -> None:
    q1 = tree_forward(_load_tree(args.target, cfg))
    q2 = tree_forward(_load_tree(args.source, cfg))
    w, opts = cfg.weights(), cfg.reg_options()
    before, _ = evaluation.registration_distances(q1, q2, w, opts)
    reg, after = register_trees(q1, q2, w, opts)
    if args.out_map:
        _write(args.out_map, serialize_registration(reg))
    if args.out_tree:
        registered = tree_inverse(apply_map(q2, reg))
        _write(args.out_tree, serialize_tree(registered))
    _write_report(args.report, {"distance_before": before, "distance_after": after}, cfg)


def _run_pipeline(args, cfg: RunConfig):
    h1 = _load_sequence(args.target, cfg)
    h2 = _load_sequence(args.source, cfg)
    return spatiotemporal_pipeline(
        h1,
        h2,
        cfg.weights(),
        traj_samples=cfg.traj_samples,
        energy=cfg.energy,
        use_yj=not cfg.no_yj,
        literal_warp=cfg.literal_warp_action,
        opts=cfg.reg_options(),
    )


def _warp_payload(warp) -> bytes:
    doc = {"format": WARP_FORMAT, "values": [float(v) for v in warp.values]}
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _cmd_register_temporal(args, cfg: RunConfig) -> None:
    result = _run_pipeline(args, cfg)
    if args.out_seq:
        _write(args.out_seq, serialize_sequence(result.aligned2))
    if args.out_warp:
        _write(args.out_warp, _warp_payload(result.warp))
    _write_report(
        args.report,
        {
            "distance_before": result.distance_before,
            "distance_after": result.distance_after,
            "clamped_samples": result.clamped_samples,
        },
        cfg,
    )


def _cmd_pipeline(args, cfg: RunConfig) -> None:
    result = _run_pipeline(args, cfg)
    prefix = args.out_prefix
    _write(f"{prefix}_aligned1.json", serialize_sequence(result.aligned1))
    _write(f"{prefix}_aligned2.json", serialize_sequence(result.aligned2))
    _write(f"{prefix}_warp.json", _warp_payload(result.warp))
    if args.out_basis:
        _write(args.out_basis, serialize_basis(result.basis))
    _write_report(
        args.report,
        {
            "distance_before": result.distance_before,
            "distance_after": result.distance_after,
            "clamped_samples": result.clamped_samples,
            "basis_k": result.basis.k,
        },
        cfg,
    )


def _cmd_geodesic(args, cfg: RunConfig) -> None:
    fmt = _detect_format(args.target)
    if _detect_format(args.source) != fmt:
        raise TreeFormatError("$.format", "geodesic inputs must share a format")
    if fmt == TREE_FORMAT:
        q1 = tree_forward(_load_tree(args.target, cfg))
        q2 = tree_forward(_load_tree(args.source, cfg))
        reg, _ = register_trees(q1, q2, cfg.weights(), cfg.reg_options())
        c1, c2 = complete_pair(q1, apply_map(q2, reg), reg.root)
        for idx, q in enumerate(geodesic(c1, c2, args.steps)):
            _write(f"{args.out_prefix}_{idx:03d}.json", serialize_tree(tree_inverse(q)))
    else:
        result = _run_pipeline(args, cfg)
        path = geodesic4d(result.srvf1, result.srvf2_aligned, result.basis, args.steps)
        for idx, seq in enumerate(path):
            _write(f"{args.out_prefix}_{idx:03d}.json", serialize_sequence(seq))


def _cmd_mean(args, cfg: RunConfig) -> None:
    formats = {_detect_format(p) for p in args.inputs}
    if len(formats) != 1:
        raise TreeFormatError("$.format", "mean inputs must share a format")
    if formats == {TREE_FORMAT}:
        qs = [tree_forward(_load_tree(p, cfg)) for p in args.inputs]
        mean, _ = karcher_mean_trees(qs, cfg.weights(), cfg.reg_options())
        _write(args.out, serialize_tree(tree_inverse(mean)))
    else:
        seqs = [_load_sequence(p, cfg) for p in args.inputs]
        model = _fit_model(seqs, cfg)
        _write(args.out, serialize_sequence(model.mean_tree4d()))


def _fit_model(seqs: list[Tree4D], cfg: RunConfig) -> Trajectory4DModel:
    model = Trajectory4DModel(
        weights=cfg.weights(),
        traj_samples=cfg.traj_samples,
        energy=cfg.energy,
        clamp=cfg.clamp,
        use_yj=not cfg.no_yj,
        passes=cfg.passes,
        literal_warp=cfg.literal_warp_action,
        grid=cfg.grid,
        rounds=cfg.rounds,
    )
    return model.fit(seqs)


def _cmd_modes(args, cfg: RunConfig) -> None:
    seqs = [_load_sequence(p, cfg) for p in args.inputs]
    model = _fit_model(seqs, cfg)
    _write(args.out, serialize_model(model))
    if args.emit_mode is not None:
        seq = model.sample_mode(args.emit_mode, args.tau)
        _write(args.out_seq, serialize_sequence(seq))


def _cmd_synth(args, cfg: RunConfig) -> None:
    model = parse_model(_read(args.model))
    if args.coeffs:
        coeffs = np.array([float(v) for v in args.coeffs.split(",")])
        seq = model.synthesize(coeffs=coeffs)
    else:
        seq = model.synthesize(seed=cfg.seed)
    _write(args.out, serialize_sequence(seq))


def _load_pair(pair: list[str], cfg: RunConfig):
    fmt = _detect_format(pair[0])
    if _detect_format(pair[1]) != fmt:
        raise TreeFormatError("$.format", "paired inputs must share a format")
    if fmt == TREE_FORMAT:
        return _load_tree(pair[0], cfg), _load_tree(pair[1], cfg)
    return _load_sequence(pair[0], cfg), _load_sequence(pair[1], cfg)


def _cmd_eval(args, cfg: RunConfig) -> None:
    w, opts = cfg.weights(), cfg.reg_options()
    if args.suite == "geodesic-error":
        if not args.pair:
            raise InputError("geodesic-error needs at least one --pair")
        pairs = [_load_pair(p, cfg) for p in args.pair]
        payload = evaluation.geodesic_error_suite(pairs, w, opts, workers=cfg.workers)
    elif args.suite == "cycle-consistency":
        if not args.pair:
            raise InputError("cycle-consistency needs at least one --pair")
        pairs = []
        for p in args.pair:
            a, b = _load_pair(p, cfg)
            if isinstance(a, Tree4D):
                raise InputError("cycle-consistency expects tree pairs")
            pairs.append((a, b))
        payload = evaluation.cycle_consistency_suite(pairs, w, opts, args.epsilons, workers=cfg.workers)
    else:
        if not args.inputs:
            raise InputError("description-length needs input files")
        trees = []
        for path in args.inputs:
            if _detect_format(path) == TREE_FORMAT:
                trees.append(tree_forward(_load_tree(path, cfg)))
            else:
                trees.extend(tree_forward(f) for f in _load_sequence(path, cfg).frames)
        payload = evaluation.description_length_curve(trees, w, opts, use_yj=not cfg.no_yj)
    payload = {"suite": args.suite, **payload}
    _write_report(args.report, payload, cfg)


# ---------------------------------------------------------------------------
# Parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--lambda-m", dest="lambda_m", type=float)
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--lambda-p", dest="lambda_p", type=float)
    p.add_argument("--w-rad", dest="w_rad", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--traj-samples", dest="traj_samples", type=int)
    p.add_argument("--energy", type=float)
    p.add_argument("--clamp", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--passes", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--scale-normalize", dest="scale_normalize", action="store_const", const=True)
    p.add_argument("--literal-warp-action", dest="literal_warp_action", action="store_const", const=True)
    p.add_argument("--exact-permutation", dest="exact_permutation", action="store_const", const=True)
    p.add_argument("--no-yj", dest="no_yj", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arbor4d", description="Elastic analysis of tree-like 4D shapes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Generate a synthetic tree or sequence.")
    p.add_argument("--spec", required=True, help="arbor4d-spec/1 file")
    p.add_argument("--seq", action="store_true", help="emit a sequence instead of a tree")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("export-mesh", help="Export a tree as a Wavefront OBJ mesh.")
    p.add_argument("input")
    p.add_argument("--segments", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_mesh)

    p = sub.add_parser("register-spatial", help="Register a source tree onto a target tree.")
    p.add_argument("target")
    p.add_argument("source")
    p.add_argument("--out-map")
    p.add_argument("--out-tree")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_register_spatial)

    p = sub.add_parser("register-temporal", help="Temporally align a source sequence onto a target.")
    p.add_argument("target")
    p.add_argument("source")
    p.add_argument("--out-seq")
    p.add_argument("--out-warp")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_register_temporal)

    p = sub.add_parser("pipeline", help="Full spatiotemporal registration of two sequences.")
    p.add_argument("target")
    p.add_argument("source")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--out-basis")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("geodesic", help="Registered geodesic between two trees or sequences.")
    p.add_argument("target")
    p.add_argument("source")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_geodesic)

    p = sub.add_parser("mean", help="Iterative mean of trees or of 4D sequences.")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mean)

    p = sub.add_parser("modes", help="Fit a 4D trajectory model and write it out.")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-mode", type=int, help="also render this mode index (1-based)")
    p.add_argument("--tau", type=float, default=1.5)
    p.add_argument("--out-seq", help="output for the rendered mode sequence")
    p.set_defaults(func=_cmd_modes)

    p = sub.add_parser("synth", help="Synthesize a 4D tree from a fitted model.")
    p.add_argument("--model", required=True)
    p.add_argument("--coeffs", help="comma-separated mode coefficients")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="Run an evaluation suite.")
    p.add_argument("suite", choices=["geodesic-error", "cycle-consistency", "description-length"])
    p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"))
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--epsilons", nargs="+", type=float, default=list(evaluation.CYCLE_EPSILONS))
    p.add_argument("--report")
    p.set_defaults(func=_cmd_eval)

    for sp in sub.choices.values():
        _add_config_flags(sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args.func(args, cfg)
    except (TreeFormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
