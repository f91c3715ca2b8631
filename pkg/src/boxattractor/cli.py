"""Command-line interface: run orchestration, artifact output, verification.

Subcommands:
  run          subdivision run; writes kept boxes (JSONL), stats (JSON),
               and one checkpoint per level
  check        replay verification of run artifacts (containment, gaps,
               or sandwich mode); emits a machine-readable verdict
  prune-graph  standalone pruning of a user-supplied graph
  oracle       reference attractor point cloud as CSV

Progress and timings go to stderr; data artifacts only to files (and the
check verdict to stdout), so machine output stays clean and byte-stable.

Exit codes: 0 success, 1 failed verdict, 2 configuration error,
3 box-budget overflow (partial results flushed), 130 handled interrupt.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attractor import (
    DEFAULT_BOX_BUDGET,
    BoxBudgetError,
    LevelReport,
    PruneResult,
    run_global,
    run_subdivision,
)
from .geometry import Box, CoverLevel, refine_cover
from .integrator import EulerSchedule
from .oracle import export_points_csv, reference_attractor_points, verify_sandwich
from .systems import (
    BUILTIN_NAMES,
    ContinuousSystemSpec,
    EvaluationError,
    make_builtin,
)
from .transition import (
    build_transition_continuous,
    build_transition_discrete,
    check_containment_condition,
    measure_overapprox_gap,
    validity_margin,
)


class ConfigError(ValueError):
    pass


def parse_q(text: str) -> Box:
    """Parse "lo1,lo2,...:hi1,hi2,..." into a box."""
    try:
        lo_txt, hi_txt = text.split(":")
        lo = [float(v) for v in lo_txt.split(",")]
        hi = [float(v) for v in hi_txt.split(",")]
        return Box(lo, hi)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"cannot parse Q from {text!r}: {exc}") from None


@dataclass
class RunConfig:
    system: str
    q: Box
    depth: int = 6
    M: int = 1
    N: int = 1
    h0: float | None = None
    alpha: float = 0.5
    seed: int = 0
    threads: int = 1
    box_budget: int = DEFAULT_BOX_BUDGET
    diagnostics: bool = False
    samples: int = 100
    params: dict = field(default_factory=dict)
    out: str = "boxes.jsonl"
    stats: str = "stats.json"
    checkpoint_dir: str | None = None
    resume: str | None = None

    def semantic_dict(self) -> dict:
        """The fields that determine run output (not paths or budgets)."""
        return {
            "system": self.system,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "q_lo": self.q.lo.tolist(),
            "q_hi": self.q.hi.tolist(),
            "M": self.M,
            "N": self.N,
            "h0": self.h0,
            "alpha": self.alpha,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def build_system(self):
        try:
            return make_builtin(self.system, self.q, **self.params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self) -> EulerSchedule | None:
        if self.h0 is None:
            return None
        try:
            return EulerSchedule(h0=self.h0, alpha=self.alpha, substeps=self.N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self, for_run: bool = True) -> None:
        if self.depth < 0:
            raise ConfigError("depth must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.M < 1 or self.N < 1 or self.threads < 1 or self.box_budget < 1:
            raise ConfigError("M, N, threads, and box budget must be positive")
        system = self.build_system()
        if for_run and isinstance(system, ContinuousSystemSpec):
            if self.h0 is None:
                raise ConfigError(f"system {self.system!r} is continuous: --h0 is required")
            sched = self.schedule()
            margin = validity_margin(system, self.q)
            if system.bound_P * sched.h0 > margin:
                raise ConfigError(
                    f"margin check failed: P*h0 = {system.bound_P * sched.h0:.6g} "
                    f"exceeds the validity margin {margin:.6g}"
                )


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its entries")
    p.add_argument("--system", choices=BUILTIN_NAMES)
    p.add_argument("--q", help='study box as "lo1,lo2,...:hi1,hi2,..."')
    p.add_argument("--depth", type=int, help="maximum subdivision depth")
    p.add_argument("--samples-per-axis", type=int, dest="M", help="sample centers per axis (M)")
    p.add_argument("--euler-substeps", type=int, dest="N", help="Euler substeps per macro step (N)")
    p.add_argument("--h0", type=float, help="initial macro step for flows")
    p.add_argument("--h-decay", type=float, dest="alpha", help="step decay exponent alpha in (0,1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--box-budget", type=int, dest="box_budget")
    p.add_argument("--diagnostics", action="store_true", default=None)
    p.add_argument("--samples", type=int, help="diagnostic samples per box")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="system parameter, e.g. henon.a=1.4 (repeatable)")
    p.add_argument("--out", help="kept-box JSONL path")
    p.add_argument("--stats", help="stats JSON path")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir", help="directory for per-level checkpoints")


def _load_config(args: argparse.Namespace, for_run: bool = True) -> RunConfig:
    data: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fp:
                data = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    merged = dict(data)
    for key in ("system", "q", "depth", "M", "N", "h0", "alpha", "seed", "threads",
                "box_budget", "diagnostics", "samples", "out", "stats", "checkpoint_dir"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    params = dict(data.get("params", {}))
    for item in getattr(args, "param", []) or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        key = key.split(".")[-1]
        try:
            params[key] = float(val)
        except ValueError:
            params[key] = val
    merged["params"] = params
    if "system" not in merged:
        raise ConfigError("--system is required")
    if "q" not in merged:
        raise ConfigError("--q is required")
    q = merged["q"]
    box = parse_q(q) if isinstance(q, str) else Box(q["lo"], q["hi"])
    merged["q"] = box
    merged.setdefault("checkpoint_dir", None)
    if getattr(args, "resume", None):
        merged["resume"] = args.resume
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate(for_run=for_run)
    return cfg


def _checkpoint_path(cfg: RunConfig, depth: int) -> Path:
    base = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else Path(cfg.out).parent
    return base / f"checkpoint_d{depth}.json"


def _log(msg: str) -> None:
    print(msg, file=_sys.stderr, flush=True)


# -- run -------------------------------------------------------------------------


def cmd_run(cfg: RunConfig) -> int:
    system = cfg.build_system()
    schedule = cfg.schedule() if isinstance(system, ContinuousSystemSpec) else None
    cfg_hash = cfg.config_hash()
    out_path = Path(cfg.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_base = _checkpoint_path(cfg, 0).parent
    ckpt_base.mkdir(parents=True, exist_ok=True)

    resume = None
    if cfg.resume:
        try:
            with open(cfg.resume, "r", encoding="utf-8") as fp:
                ck = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read checkpoint: {exc}") from None
        if ck.get("config_hash") != cfg_hash:
            raise ConfigError("checkpoint config hash does not match the current configuration")
        resume = (int(ck["depth"]), np.asarray(ck["kept"], dtype=np.int64))

    reports: list[LevelReport] = []
    status = 0
    boxes_fp = open(out_path, "w", encoding="utf-8", newline="\n")

    def on_level(level: CoverLevel, result: PruneResult, report: LevelReport) -> None:
        los, his = level.box_los, level.box_his
        kept_flats = np.array([k.flat(level.dim) for k in result.kept], dtype=np.int64)
        locs = level.locate(kept_flats)
        for flat, loc in zip(kept_flats, locs):
            rec = {
                "depth": level.depth,
                "index": int(flat),
                "lo": los[loc].tolist(),
                "hi": his[loc].tolist(),
            }
            boxes_fp.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
        boxes_fp.flush()
        ck = {
            "depth": level.depth,
            "kept": [int(f) for f in kept_flats],
            "config_hash": cfg_hash,
        }
        with open(_checkpoint_path(cfg, level.depth), "w", encoding="utf-8", newline="\n") as fp:
            json.dump(ck, fp, sort_keys=True, separators=(",", ":"))
            fp.write("\n")
        reports.append(report)
        _log(
            f"[run] depth={report.depth} rho={report.rho:.6g} h={report.h:.6g} r={report.r:.6g} "
            f"boxes_in={report.boxes_in} kept={report.boxes_kept} edges={report.edges} "
            f"map_ms={report.map_ms:.1f} prune_ms={report.prune_ms:.1f}"
        )
        if report.boxes_kept == 0:
            _log(f"[run] attractor region empty at depth {report.depth}")

    try:
        run_subdivision(
            system,
            cfg.q,
            max_depth=cfg.depth,
            M=cfg.M,
            euler=schedule,
            diagnostics=cfg.diagnostics,
            samples=cfg.samples,
            seed=cfg.seed,
            threads=cfg.threads,
            box_budget=cfg.box_budget,
            resume=resume,
            on_level=on_level,
        )
    except KeyboardInterrupt:
        _log("[run] interrupted; partial results flushed")
        status = 130
    except BoxBudgetError as exc:
        _log(f"[run] box budget exceeded: {exc}; partial results flushed")
        status = 3
    except EvaluationError as exc:
        _log(f"[run] aborted: {exc}")
        status = 1
    finally:
        boxes_fp.close()
        with open(cfg.stats, "w", encoding="utf-8", newline="\n") as fp:
            json.dump([r.to_json_dict() for r in reports], fp, indent=2, sort_keys=True)
            fp.write("\n")
    return status


# -- check -----------------------------------------------------------------------


def _load_checkpoints(cfg: RunConfig) -> dict[int, np.ndarray]:
    base = _checkpoint_path(cfg, 0).parent
    cfg_hash = cfg.config_hash()
    out: dict[int, np.ndarray] = {}
    for path in sorted(base.glob("checkpoint_d*.json")):
        with open(path, "r", encoding="utf-8") as fp:
            ck = json.load(fp)
        if ck.get("config_hash") != cfg_hash:
            raise ConfigError(f"config hash mismatch in {path.name}")
        out[int(ck["depth"])] = np.asarray(ck["kept"], dtype=np.int64)
    if not out:
        raise ConfigError(f"no checkpoints found under {base}")
    return out

def _replay_levels(cfg: RunConfig, checkpoints: dict[int, np.ndarray]):
    """Rebuild (level, transition map, kept) per checkpointed depth."""
    system = cfg.build_system()
    schedule = cfg.schedule() if isinstance(system, ContinuousSystemSpec) else None
    for depth in sorted(checkpoints):
        if depth == 0:
            level = CoverLevel.full(cfg.q, 0)
        elif depth - 1 in checkpoints:
            prev = CoverLevel(cfg.q, depth - 1, checkpoints[depth - 1])
            level = refine_cover(prev, prev.flats)
        else:
            continue
        if isinstance(system, ContinuousSystemSpec):
            tmap = build_transition_continuous(
                level, system, M=cfg.M, params=schedule.params_at(depth), threads=cfg.threads
            )
        else:
            tmap = build_transition_discrete(level, system, M=cfg.M, threads=cfg.threads)
        yield depth, level, tmap, checkpoints[depth], system


def cmd_check(cfg: RunConfig, mode: str, max_global_depth: int = 6,
              resolution: float = 0.02, horizon: float | None = None,
              verdict_path: str | None = None) -> int:
    from .attractor import _prune_level

    checkpoints = _load_checkpoints(cfg)
    verdict: dict = {"mode": mode, "config_hash": cfg.config_hash(), "levels": []}
    ok = True

    if mode == "containment":
        for depth, level, tmap, kept, system in _replay_levels(cfg, checkpoints):
            result, kept_flats = _prune_level(level, tmap)
            consistent = np.array_equal(kept_flats, np.sort(kept))
            rep = check_containment_condition(tmap, system, samples=cfg.samples, seed=cfg.seed)
            entry = {
                "depth": depth,
                "violations": len(rep.containment_violations),
                "witnesses": [list(map(float, p)) for _, p in rep.containment_violations[:5]],
                "kept_matches_checkpoint": bool(consistent),
            }
            verdict["levels"].append(entry)
            ok &= consistent and not rep.containment_violations
    elif mode == "gaps":
        seq: list[tuple[int, float]] = []
        for depth, level, tmap, kept, system in _replay_levels(cfg, checkpoints):
            rep = measure_overapprox_gap(tmap, system, samples=cfg.samples)
            gap = rep.overapprox_gap if tmap.meta.kind == "discrete" else rep.neighbor_gap + rep.defect_gap
            verdict["levels"].append({"depth": depth, **rep.to_json_dict()})
            seq.append((depth, gap))
        # coarse levels are degenerate (a single cell maps into itself), so
        # monotonicity is judged from depth 2 on, with a 5% allowance for the
        # sampled suprema
        tail = [g for d, g in seq if d >= 2]
        non_increasing = all(b <= a * 1.05 + 1e-12 for a, b in zip(tail, tail[1:]))
        verdict["non_increasing_from_depth_2"] = non_increasing
        ok &= non_increasing
    elif mode == "sandwich":
        system = cfg.build_system()
        schedule = cfg.schedule() if isinstance(system, ContinuousSystemSpec) else None
        boxes = _read_boxes(cfg.out)
        reference = reference_attractor_points(system, cfg.q, resolution=resolution, horizon=horizon)
        for depth in sorted(boxes):
            if depth > max_global_depth:
                continue
            euler = schedule.params_at(depth) if schedule else None
            g_result, _ = run_global(
                system, cfg.q, depth, M=cfg.M, euler=euler,
                threads=cfg.threads, box_budget=cfg.box_budget,
            )
            level = CoverLevel(cfg.q, depth, boxes[depth])
            sub_keys = level.active
            v = verify_sandwich(cfg.q, depth, sub_keys, g_result.kept, reference)
            verdict["levels"].append({"depth": depth, **v.to_json_dict()})
            ok &= v.passed
    else:
        raise ConfigError(f"unknown check mode {mode!r}")

    verdict["pass"] = bool(ok)
    text = json.dumps(verdict, indent=2, sort_keys=True) + "\n"
    if verdict_path:
        with open(verdict_path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
    else:
        _sys.stdout.write(text)
    return 0 if ok else 1


def _read_boxes(path: str) -> dict[int, np.ndarray]:
    out: dict[int, list[int]] = {}
    try:
        with open(path, "r", encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                out.setdefault(int(rec["depth"]), []).append(int(rec["index"]))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read boxes file: {exc}") from None
    return {d: np.asarray(v, dtype=np.int64) for d, v in out.items()}


# -- prune-graph -------------------------------------------------------------------


def cmd_prune_graph(input_path: str | None, output_path: str | None) -> int:
    from .attractor import prune

    try:
        if input_path and input_path != "-":
            with open(input_path, "r", encoding="utf-8") as fp:
                data = json.load(fp)
        else:
            data = json.load(_sys.stdin)
        edges_raw = data["edges"]
        edges = {}
        for key, targets in edges_raw.items():
            node = int(key)
            edges[node] = [int(t) for t in targets]
    except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        _log(f"[prune-graph] malformed input: {exc}")
        return 2
    result = prune(edges.keys(), edges)
    text = json.dumps({"kept": [int(k) for k in result.kept]}, sort_keys=True) + "\n"
    if output_path and output_path != "-":
        with open(output_path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(text)
    else:
        _sys.stdout.write(text)
    return 0


# -- oracle ------------------------------------------------------------------------


def cmd_oracle(cfg: RunConfig, resolution: float, horizon: float | None, out: str) -> int:
    system = cfg.build_system()
    ref = reference_attractor_points(system, cfg.q, resolution=resolution, horizon=horizon)
    export_points_csv(ref, out)
    _log(f"[oracle] kept {len(ref.points)} points at resolution {resolution}")
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxattractor",
                                     description="Outer approximations of global relative attractors")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the subdivision scheme")
    _add_config_flags(p_run)
    p_run.add_argument("--resume", help="checkpoint file to restart from")

    p_check = sub.add_parser("check", help="verify run artifacts")
    _add_config_flags(p_check)
    p_check.add_argument("--mode", choices=("containment", "gaps", "sandwich"), required=True)
    p_check.add_argument("--max-global-depth", type=int, default=6)
    p_check.add_argument("--resolution", type=float, default=0.02)
    p_check.add_argument("--horizon", type=float, default=None)
    p_check.add_argument("--verdict", help="write the verdict JSON here instead of stdout")

    p_graph = sub.add_parser("prune-graph", help="prune a user-supplied graph")
    p_graph.add_argument("--input", help="graph JSON file ('-' for stdin)")
    p_graph.add_argument("--output", help="kept-set JSON file ('-' for stdout)")

    p_oracle = sub.add_parser("oracle", help="reference attractor point cloud")
    _add_config_flags(p_oracle)
    p_oracle.add_argument("--resolution", type=float, default=0.02)
    p_oracle.add_argument("--horizon", type=float, default=None)
    p_oracle.add_argument("--oracle-out", default="oracle.csv", help="CSV output path")

    return parser


def _join_q_flag(argv: list[str]) -> list[str]:
    # box corners start with '-', which argparse would read as an option
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--q" and i + 1 < len(argv):
            out.append(f"--q={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = _sys.argv[1:]
    args = parser.parse_args(_join_q_flag(list(argv)))
    try:
        if args.command == "run":
            return cmd_run(_load_config(args))
        if args.command == "check":
            return cmd_check(
                _load_config(args),
                mode=args.mode,
                max_global_depth=args.max_global_depth,
                resolution=args.resolution,
                horizon=args.horizon,
                verdict_path=args.verdict,
            )
        if args.command == "prune-graph":
            return cmd_prune_graph(args.input, args.output)
        if args.command == "oracle":
            return cmd_oracle(_load_config(args, for_run=False), args.resolution, args.horizon, args.oracle_out)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return 2
    except BoxBudgetError as exc:
        _log(f"error: {exc}")
        return 3
    except EvaluationError as exc:
        _log(f"error: {exc}")
        return 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
