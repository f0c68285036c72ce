"""Benchmark runner for the six cutting algorithms."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .contour import Contour, rasterize, rest_xy, segment_contour
from .env import Scenario, SheetSpec, evaluate
from .mesh import Direction, PhysicsConfig
from .search import (PinchPlan, PolicyCache, SearchConfig, WorkPool, build_plan,
                     candidate_points, derive_seed, order_search, scaled_threshold)
from .trpo import TrainConfig, executed

log = logging.getLogger(__name__)


class AlgorithmId(str, Enum):
    NTB = "NTB"
    SFP = "SFP"
    STP = "STP"
    SDRLT = "SDRLT"
    MDRLT1 = "MDRLT1"
    MDRLT2 = "MDRLT2"


ALGORITHMS = tuple(a.value for a in AlgorithmId)


def parse_algorithms(text: str) -> list[AlgorithmId]:
    out = []
    for name in text.split(","):
        name = name.strip().upper().replace("-", "")
        if not name:
            continue
        try:
            out.append(AlgorithmId(name))
        except ValueError:
            raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")
    return out


def bench_physics() -> PhysicsConfig:
    """Physics of the benchmark sheet: stretched gauze clamped in a frame."""
    return PhysicsConfig(prestrain=0.4, constraint_iterations=10)


@dataclass(frozen=True)
class RunConfig:
    mesh_size: tuple[int, int] = (25, 25)
    physics: PhysicsConfig = field(default_factory=bench_physics)
    clamp_edges: bool = True
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    trials: int = 10
    seed: int = 0
    # per-step blade position noise (mm); the only source of trial-to-trial spread
    # once trained policies run greedily
    blade_jitter: float = 0.1
    stp_pull_cap: float | None = None
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def seeded(self) -> tuple[SearchConfig, TrainConfig]:
        """Search and training settings with seeds tied to the master seed."""
        return (replace(self.search, seed=derive_seed(self.seed, "search", self.search.seed)),
                replace(self.train, seed=derive_seed(self.seed, "train", self.train.seed)))

    @property
    def sheet(self) -> SheetSpec:
        w, h = self.mesh_size
        return SheetSpec(w, h, self.physics, True, self.clamp_edges)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mesh_size"] = list(self.mesh_size)
        d["train"]["hidden"] = list(self.train.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = dict(doc)
        if "mesh_size" in kw:
            kw["mesh_size"] = tuple(int(v) for v in kw["mesh_size"])
        if "physics" in kw:
            kw["physics"] = PhysicsConfig(**{**asdict(bench_physics()), **kw["physics"]})
        if "search" in kw:
            kw["search"] = SearchConfig(**kw["search"])
        if "train" in kw:
            t = dict(kw["train"])
            if "hidden" in t:
                t["hidden"] = tuple(t["hidden"])
            kw["train"] = TrainConfig(**t)
        return cls(**kw)


@dataclass
class ResultRow:
    contour_id: str
    algorithm: str
    trials: list[int]
    relative_improvement: float | None = None

    @property
    def mean(self) -> float:
        return trial_mean(self.trials)

    @property
    def std(self) -> float:
        return trial_std(self.trials)


def trial_mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def trial_std(values: Sequence[float]) -> float:
    """Population standard deviation."""
    m = trial_mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))


def relative_improvement(row: ResultRow, ntb_row: ResultRow) -> float | None:
    """Percent reduction of the mean score relative to the non-tensioned baseline."""
    if row.contour_id != ntb_row.contour_id:
        raise ValueError("rows describe different contours")
    base = ntb_row.mean
    if base == 0:
        return None
    return 100.0 * (base - row.mean) / base


# --- scripted baselines --------------------------------------------------

class PullPolicy:
    """Pull 1 mm per step along one axis.

    With a ``cap`` the pull stops at that offset and the gripper holds it by
    alternating directions.
    """

    def __init__(self, direction: Direction, cap: float | None = None):
        self.direction = Direction(direction)
        self.cap = cap
        self._axis = self.direction.vector[:2]
        self._back = {Direction.PLUS_X: Direction.MINUS_X, Direction.MINUS_X: Direction.PLUS_X,
                      Direction.PLUS_Y: Direction.MINUS_Y, Direction.MINUS_Y: Direction.PLUS_Y}

    def act(self, obs, rng=None) -> int:
        if self.cap is None:
            return int(self.direction)
        along = float(np.asarray(obs)[-2:] @ self._axis)
        return int(self.direction if along < self.cap else self._back[self.direction])


def away_direction(frm: np.ndarray, to: np.ndarray) -> Direction:
    v = np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)
    if abs(v[0]) >= abs(v[1]):
        return Direction.PLUS_X if v[0] >= 0 else Direction.MINUS_X
    return Direction.PLUS_Y if v[1] >= 0 else Direction.MINUS_Y


def arc_midpoint(contour: Contour) -> np.ndarray:
    pts = contour.polyline()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    half = seg.sum() / 2
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    k = int(np.searchsorted(cum, half, side="right")) - 1
    k = min(k, len(seg) - 1)
    t = (half - cum[k]) / seg[k]
    return pts[k] + t * (pts[k + 1] - pts[k])


def nearest_candidate(candidates: Sequence[int], sheet: SheetSpec, point) -> int:
    xy = rest_xy(sheet)[list(candidates)]
    d2 = ((xy - np.asarray(point)) ** 2).sum(axis=1)
    return int(list(candidates)[int(np.argmin(d2))])


# --- running ------------------------------------------------------------

def trial_seeds(cfg: RunConfig, contour_id: str, algorithm: str) -> list[int]:
    return [derive_seed(cfg.seed, contour_id, algorithm, k) for k in range(cfg.trials)]


@dataclass
class AlgorithmRun:
    row: ResultRow
    plan: PinchPlan | None = None
    details: dict = field(default_factory=dict)


def run_algorithm(contour: Contour, max_segments: int, algorithm, cfg: RunConfig,
                  pool: WorkPool | None = None, cache: PolicyCache | None = None
                  ) -> AlgorithmRun:
    algorithm = AlgorithmId(algorithm)
    sheet = cfg.sheet
    search, train_cfg = cfg.seeded()
    seeds = trial_seeds(cfg, contour.id, algorithm.value)
    segments, _ = segment_contour(contour, max_segments)
    ids = [s.id for s in segments]
    ideal = rasterize(contour, sheet, sheet.radius).ideal_cut
    frame = set(np.flatnonzero(sheet.build().pinned).tolist())

    if algorithm in (AlgorithmId.SDRLT, AlgorithmId.MDRLT1, AlgorithmId.MDRLT2):
        plan = build_plan(contour, max_segments, sheet, algorithm.value, train_cfg,
                          search, pool, cache, cfg.blade_jitter)
        scenario = plan.scenario(sheet, blade_jitter=cfg.blade_jitter)
        run = executed(plan.policies, search.greedy_eval)
        scores = [evaluate(scenario.with_seed(s), run, [s])[0] for s in seeds]
        details = {"order": list(plan.order), "tension": plan.tension,
                   "joint_pins": list(plan.joint_pins), "plan_score": plan.score}
        return AlgorithmRun(ResultRow(contour.id, algorithm.value, scores), plan, details)

    pins: tuple[int, ...] = ()
    tension: dict[int, int] = {}
    controller = None
    details: dict = {}
    if algorithm is not AlgorithmId.NTB:
        d = scaled_threshold(cfg.search.d, sheet)
        cands = candidate_points(sheet, contour, d, exclude=ideal | frame)
        if algorithm is AlgorithmId.SFP:
            pins = (nearest_candidate(cands, sheet, contour.centroid()),)
            details["pin"] = pins[0]
        else:
            p = nearest_candidate(cands, sheet, arc_midpoint(contour))
            direction = away_direction(contour.centroid(), rest_xy(sheet)[p])
            tension = {s: p for s in ids}
            controller = PullPolicy(direction, cfg.stp_pull_cap)
            details.update(pinch=p, direction=direction.name)

    def scenario(order, seed=0):
        return Scenario(sheet, segments, order, tension, pins, seed, cfg.blade_jitter)

    order, _ = order_search(ids, lambda o: float(np.mean(evaluate(scenario(o), controller, [seeds[0]]))))
    details["order"] = list(order)
    scores = [evaluate(scenario(order, s), controller, [s])[0] for s in seeds]
    return AlgorithmRun(ResultRow(contour.id, algorithm.value, scores), None, details)


def fill_improvements(rows: Sequence[ResultRow]) -> None:
    ntb = {r.contour_id: r for r in rows if r.algorithm == AlgorithmId.NTB.value}
    for r in rows:
        base = ntb.get(r.contour_id)
        r.relative_improvement = None if base is None else relative_improvement(r, base)


def run_testbed(testbed: Sequence[tuple[Contour, int]], algorithms: Sequence, cfg: RunConfig,
                cache: PolicyCache | None = None) -> list[AlgorithmRun]:
    runs = []
    with WorkPool(cfg.workers) as pool:
        for contour, m in testbed:
            for alg in algorithms:
                log.info("running %s on %s", AlgorithmId(alg).value, contour.id)
                runs.append(run_algorithm(contour, m, alg, cfg, pool, cache))
    fill_improvements([r.row for r in runs])
    return runs


# --- reporting ----------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return "NA"
    return repr(float(x))


def raw_csv(rows: Sequence[ResultRow]) -> str:
    n = max(len(r.trials) for r in rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["contour", "algorithm"] + [f"trial_{k + 1}" for k in range(n)] + ["mean"])
    for r in rows:
        w.writerow([r.contour_id, r.algorithm] + list(r.trials) + [_fmt(r.mean)])
    return buf.getvalue()


def summary_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["contour", "algorithm", "mean", "std", "relative_improvement_pct"])
    for r in rows:
        w.writerow([r.contour_id, r.algorithm, _fmt(r.mean), _fmt(r.std),
                    _fmt(r.relative_improvement)])
    return buf.getvalue()


def algorithm_averages(rows: Sequence[ResultRow]) -> dict[str, dict]:
    """Testbed-wide averages of mean, std and relative improvement per algorithm."""
    out = {}
    for alg in ALGORITHMS:
        sel = [r for r in rows if r.algorithm == alg]
        if not sel:
            continue
        imps = [r.relative_improvement for r in sel if r.relative_improvement is not None]
        out[alg] = {
            "mean": trial_mean([r.mean for r in sel]),
            "std": trial_mean([r.std for r in sel]),
            "relative_improvement_pct": trial_mean(imps) if imps else None,
            "contours": len(sel),
        }
    return out


def report(rows: Sequence[ResultRow], output_dir, extra: dict | None = None) -> dict[str, Path]:
    if not rows:
        raise ValueError("nothing to report")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"raw": out / "raw.csv", "summary": out / "summary.csv",
             "results": out / "results.json"}
    paths["raw"].write_text(raw_csv(rows))
    paths["summary"].write_text(summary_csv(rows))
    doc = {
        "rows": [{"contour": r.contour_id, "algorithm": r.algorithm, "trials": list(r.trials),
                  "mean": r.mean, "std": r.std,
                  "relative_improvement_pct": r.relative_improvement} for r in rows],
        "averages": algorithm_averages(rows),
    }
    if extra:
        doc.update(extra)
    paths["results"].write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return paths


def env_workers(default: int = 1) -> int:
    return int(os.environ.get("PINCHCUT_WORKERS", default))
