"""Pinch-point planning.

Setup (segmentation, cutting order, joint pins), per-segment local search
over candidate pinch points with one trained policy each, then a joint
evaluation of the per-segment winners on the whole contour.
"""
from __future__ import annotations

import itertools
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .contour import Contour, JointArea, rasterize, rest_xy, segment_contour
from .env import CuttingEnv, Scenario, SheetSpec, evaluate
from .trpo import (Policy, TrainConfig, TrainingError, executed, load_policy, save_policy,
                   train)

log = logging.getLogger(__name__)

MAX_ORDER_SEGMENTS = 6


@dataclass(frozen=True)
class SearchConfig:
    d: float = 100.0
    M_two: int = 20
    M_many: int = 10
    eval_trials: int = 10
    seed: int = 0
    # score and run trained policies by their most likely action
    greedy_eval: bool = True

    def samples_for(self, n_segments: int) -> int:
        return self.M_two if n_segments <= 2 else self.M_many


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from a mix of ints and strings."""
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode()))
        else:
            words.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def grid_adjacent(a: int, b: int, width: int) -> bool:
    ra, ca = divmod(a, width)
    rb, cb = divmod(b, width)
    return abs(ra - rb) + abs(ca - cb) == 1


# --- candidate generation ------------------------------------------------

def candidate_points(sheet, segment, d: float, cut_radius: float | None = None,
                     exclude: Iterable[int] = ()) -> list[int]:
    """Points off the segment's cut whose rest position is closer than ``d`` to it."""
    if d <= 0:
        raise ValueError("distance threshold must be positive")
    radius = sheet.radius if cut_radius is None and hasattr(sheet, "radius") else cut_radius
    path = rasterize(segment, sheet, radius)
    xy = rest_xy(sheet)
    d2 = ((xy[:, None, :] - path.positions[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    inside = np.flatnonzero(d2 < d * d)
    banned = set(path.ideal_cut) | set(int(i) for i in exclude)
    return [int(i) for i in inside if int(i) not in banned]


def sample_and_prune(A: Sequence[int], M: int, rng: np.random.Generator, width: int) -> list[int]:
    """Draw ``min(M, |A|)`` candidates, then drop any 4-neighbour of an earlier keeper."""
    if M < 1:
        raise ValueError("M must be >= 1")
    pool = sorted(set(int(a) for a in A))
    if not pool:
        raise ValueError("no viable pinch point: candidate set is empty")
    B = sorted(int(b) for b in rng.choice(pool, size=min(M, len(pool)), replace=False))
    kept: list[int] = []
    for b in B:
        if not any(grid_adjacent(b, k, width) for k in kept):
            kept.append(b)
    return kept


def joint_pins(joints: Sequence[JointArea], ideal_cut: Iterable[int], sheet) -> list[int]:
    """One fixed pin per joint: the nearest rest point that is not on the cut."""
    xy = rest_xy(sheet)
    cut = np.zeros(len(xy), dtype=bool)
    cut[list(ideal_cut)] = True
    pins = []
    for j in joints:
        d2 = ((xy - np.asarray(j.center)) ** 2).sum(axis=1)
        d2[cut] = np.inf
        best = int(np.argmin(d2))  # argmin returns the lowest index among ties
        if not d2[best] <= (3.0 * j.radius) ** 2:
            raise ValueError(f"no uncut point within {3 * j.radius} of joint at {j.center}")
        pins.append(best)
    return pins


# --- training and evaluation jobs ---------------------------------------

class ContextEnv:
    """A cutting env whose episodes start once earlier segments are cut.

    The segments in ``context`` are cut first under their fixed controllers
    (a policy, or None for an idle gripper), so the learner only sees, and
    only acts on, the remaining segments.
    """

    def __init__(self, env: CuttingEnv, context: Sequence[tuple[int, object]] = ()):
        self.env = env
        self.context = dict(context)
        self.obs_dim = env.obs_dim
        self.n_actions = env.n_actions

    @property
    def active_segment(self) -> int:
        return self.env.active_segment

    def reset(self) -> np.ndarray:
        obs = self.env.reset()
        rng = np.random.default_rng([self.env.scenario.seed, 7])
        done = False
        while not done and self.env.active_segment in self.context:
            ctrl = self.context[self.env.active_segment]
            obs, _, done = self.env.step(None if ctrl is None else int(ctrl.act(obs, rng)))
        if done:
            raise ValueError("context covers every segment of the scenario")
        return obs

    def step(self, action):
        return self.env.step(action)

    def result(self):
        return self.env.result()


def _env_factory(scenario: Scenario, context, seed: int):
    env = CuttingEnv(scenario.with_seed(seed))
    return ContextEnv(env, context) if context else env


@dataclass(frozen=True)
class CandidateJob:
    key: tuple
    scenario: Scenario
    train: TrainConfig
    eval_seeds: tuple[int, ...]
    # segments cut before the learner takes over, with their fixed controllers
    context: tuple[tuple[int, Policy | None], ...] = ()
    segments: tuple[int, ...] = ()
    greedy: bool = False

    def controllers(self, policy: Policy) -> dict:
        out = dict(self.context)
        out.update({s: policy for s in self.segments})
        return executed(out, self.greedy)


@dataclass
class CandidateResult:
    key: tuple
    policy: Policy | None
    scores: list[int]
    mean_returns: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores)) if self.scores else float("inf")


def run_candidate(job: CandidateJob) -> CandidateResult:
    try:
        context = tuple((s, executed(p, job.greedy)) for s, p in job.context)
        result = train(partial(_env_factory, job.scenario, context), job.train)
    except TrainingError as exc:
        return CandidateResult(job.key, None, [], error=str(exc))
    scores = evaluate(job.scenario, job.controllers(result.policy), job.eval_seeds)
    return CandidateResult(job.key, result.policy, scores, result.mean_returns)


class WorkPool:
    """Ordered map over a process pool, or in-process when ``workers <= 1``."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._executor = None

    def map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        if self._executor is None:
            self._executor = ProcessPoolExecutor(self.workers)
        return list(self._executor.map(fn, items))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class PolicyCache:
    """Trained candidates keyed by (contour, variant, segment, candidate, seed, settings)."""

    def __init__(self, directory: str | Path | None = None):
        self.memory: dict[tuple, CandidateResult] = {}
        self.directory = Path(directory) if directory is not None else None

    def _file(self, key) -> Path:
        return self.directory / ("_".join(str(k) for k in key) + ".json")

    def get(self, key) -> CandidateResult | None:
        if key in self.memory:
            return self.memory[key]
        if self.directory is not None and self._file(key).exists():
            meta = json.loads(self._file(key).read_text())
            policy = load_policy(self.directory / meta["policy"]) if meta["policy"] else None
            res = CandidateResult(key, policy, meta["scores"], meta["mean_returns"], meta["error"])
            self.memory[key] = res
            return res
        return None

    def put(self, res: CandidateResult):
        self.memory[res.key] = res
        if self.directory is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        stem = "_".join(str(k) for k in res.key)
        name = None
        if res.policy is not None:
            name = stem + ".policy"
            save_policy(res.policy, self.directory / name)
        meta = {"policy": name, "scores": res.scores, "mean_returns": res.mean_returns,
                "error": res.error}
        self._file(res.key).write_text(json.dumps(meta))


def run_jobs(jobs: Sequence[CandidateJob], pool: WorkPool | None,
             cache: PolicyCache | None) -> list[CandidateResult]:
    results: dict[tuple, CandidateResult] = {}
    todo = []
    for job in jobs:
        hit = cache.get(job.key) if cache is not None else None
        if hit is not None:
            results[job.key] = hit
        else:
            todo.append(job)
    fresh = (pool or WorkPool(1)).map(run_candidate, todo)
    for res in fresh:
        results[res.key] = res
        if cache is not None:
            cache.put(res)
    return [results[job.key] for job in jobs]


@dataclass
class LocalSearchResult:
    index: int
    policy: Policy
    score: float
    scores: dict[int, float]


def pick_best(candidates: Sequence[int], results: Sequence[CandidateResult]) -> LocalSearchResult:
    """Lowest mean score wins; ties go to the lower point index."""
    scored = [(res.mean, c, res) for c, res in zip(candidates, results) if res.policy is not None]
    if not scored:
        errors = "; ".join(r.error or "?" for r in results)
        raise TrainingError(f"every candidate failed to train: {errors}")
    mean, c, res = min(scored, key=lambda t: (t[0], t[1]))
    return LocalSearchResult(c, res.policy, mean,
                             {c2: r.mean for c2, r in zip(candidates, results)})


def local_search(candidates: Sequence[int], make_job: Callable[[int], CandidateJob],
                 pool: WorkPool | None = None, cache: PolicyCache | None = None
                 ) -> LocalSearchResult:
    """Train and score one policy per candidate pinch point; keep the best."""
    if not candidates:
        raise ValueError("local search needs at least one candidate")
    candidates = sorted(candidates)
    results = run_jobs([make_job(c) for c in candidates], pool, cache)
    return pick_best(candidates, results)


def order_search(segment_ids: Sequence[int], evaluate_order: Callable[[tuple[int, ...]], float]
                 ) -> tuple[tuple[int, ...], dict[tuple[int, ...], float]]:
    """Exhaustive search over cutting orders; ties go to the lexicographically smallest."""
    ids = tuple(sorted(segment_ids))
    if len(ids) > MAX_ORDER_SEGMENTS:
        raise ValueError(f"order search supports at most {MAX_ORDER_SEGMENTS} segments, "
                         f"got {len(ids)}")
    scores = {perm: float(evaluate_order(perm)) for perm in itertools.permutations(ids)}
    best = min(scores, key=lambda p: (scores[p], p))
    return best, scores


# --- the full pipeline ---------------------------------------------------

VARIANTS = ("SDRLT", "MDRLT1", "MDRLT2")


@dataclass
class PinchPlan:
    contour: Contour
    max_segments: int
    variant: str
    order: tuple[int, ...]
    tension: dict[int, int]
    joint_pins: tuple[int, ...]
    policies: dict[int, Policy]
    segment_scores: dict[int, float] = field(default_factory=dict)
    score: float = float("nan")

    def scenario(self, sheet: SheetSpec, seed: int = 0, blade_jitter: float = 0.0) -> Scenario:
        segments, _ = segment_contour(self.contour, self.max_segments)
        return Scenario(sheet, segments, self.order, self.tension, self.joint_pins,
                        seed, blade_jitter)

    def to_json(self, directory: str | Path) -> Path:
        """Write ``plan.json`` plus one policy file per segment into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        refs = {}
        for seg, pol in sorted(self.policies.items()):
            name = f"{self.contour.id}_{self.variant}_seg{seg}.policy"
            save_policy(pol, directory / name)
            refs[str(seg)] = name
        doc = {
            "contour": {"id": self.contour.id, "closed": self.contour.closed,
                        "vertices": [list(v) for v in self.contour.vertices],
                        "max_segments": self.max_segments},
            "variant": self.variant,
            "order": list(self.order),
            "tension": {str(k): v for k, v in sorted(self.tension.items())},
            "joint_pins": list(self.joint_pins),
            "policies": refs,
            "segment_scores": {str(k): v for k, v in sorted(self.segment_scores.items())},
            "score": self.score,
        }
        path = directory / "plan.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_json(cls, path: str | Path) -> PinchPlan:
        path = Path(path)
        doc = json.loads(path.read_text())
        c = doc["contour"]
        contour = Contour(tuple(map(tuple, c["vertices"])), bool(c["closed"]), str(c["id"]))
        policies = {int(k): load_policy(path.parent / v) for k, v in doc["policies"].items()}
        return cls(contour, int(c["max_segments"]), doc["variant"], tuple(doc["order"]),
                   {int(k): int(v) for k, v in doc["tension"].items()},
                   tuple(doc["joint_pins"]), policies,
                   {int(k): float(v) for k, v in doc.get("segment_scores", {}).items()},
                   float(doc.get("score", "nan")))


# the candidate threshold is capped at this fraction of the sheet width
CANDIDATE_REACH = 0.25


def scaled_threshold(d: float, sheet: SheetSpec) -> float:
    return min(d, CANDIDATE_REACH * (sheet.width - 1) * sheet.physics.rest_dx)


def setup_phase(contour: Contour, max_segments: int, sheet: SheetSpec, with_pins: bool,
                eval_seeds: Sequence[int]):
    segments, joints = segment_contour(contour, max_segments)
    ideal = rasterize(contour, sheet, sheet.radius).ideal_cut
    pins = tuple(joint_pins(joints, ideal, sheet)) if with_pins else ()

    def score(order):
        sc = Scenario(sheet, segments, order, {}, pins)
        return float(np.mean(evaluate(sc, None, eval_seeds)))

    order, _ = order_search([s.id for s in segments], score)
    return segments, joints, ideal, pins, order


def build_plan(contour: Contour, max_segments: int, sheet: SheetSpec, variant: str,
               train_config: TrainConfig = TrainConfig(), search: SearchConfig = SearchConfig(),
               pool: WorkPool | None = None, cache: PolicyCache | None = None,
               blade_jitter: float = 0.0) -> PinchPlan:
    """Run setup, local search, evaluation and final selection for one contour."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown planning variant {variant!r}; expected one of {VARIANTS}")
    eval_seeds = tuple(derive_seed(search.seed, contour.id, variant, "eval", k)
                       for k in range(search.eval_trials))
    segments, _, ideal, pins, order = setup_phase(
        contour, max_segments, sheet, variant == "MDRLT2", eval_seeds)
    d = scaled_threshold(search.d, sheet)
    # keeps disk-cached policies from leaking across sheet or training settings
    fingerprint = zlib.crc32(repr((sheet, replace(train_config, seed=0), search.greedy_eval,
                                   blade_jitter)).encode())
    base_mesh = sheet.build()
    banned = set(ideal) | set(pins) | set(np.flatnonzero(base_mesh.pinned).tolist())

    def make_job(seg_key, seg_order, pinch_segments, context=(), fixed=None):
        # fixed: pinch points already chosen for the context segments
        fixed = fixed or {}
        prior = tuple(fixed.get(s) for s, _ in context)

        def job(c):
            tension = {**fixed, **{s: c for s in pinch_segments}}
            sc = Scenario(sheet, segments, seg_order, tension, pins, 0, blade_jitter)
            tcfg = replace(train_config, seed=derive_seed(train_config.seed, contour.id,
                                                          seg_key, c))
            key = (contour.id, variant, seg_key, c, tcfg.seed, fingerprint) + prior
            return CandidateJob(key, sc, tcfg, eval_seeds, tuple(context), tuple(pinch_segments),
                                search.greedy_eval)
        return job

    def candidates_for(shape, seg_key):
        A = candidate_points(sheet, shape, d, exclude=banned)
        rng = np.random.default_rng(derive_seed(search.seed, contour.id, variant, seg_key))
        return sample_and_prune(A, search.samples_for(len(segments)), rng, sheet.width)

    tension, policies, seg_scores = {}, {}, {}
    if variant == "SDRLT":
        cands = candidates_for(contour, "all")
        ids = tuple(s.id for s in segments)
        best = local_search(cands, make_job("all", order, ids), pool, cache)
        tension = {s: best.index for s in ids}
        policies = {s: best.policy for s in ids}
        seg_scores = {s: best.score for s in ids}
    else:
        by_id = {s.id: s for s in segments}
        for k, seg_id in enumerate(order):
            cands = candidates_for(by_id[seg_id], seg_id)
            context = [(s, policies[s]) for s in order[:k]]
            job = make_job(seg_id, order[:k + 1], (seg_id,), context, dict(tension))
            best = local_search(cands, job, pool, cache)
            tension[seg_id] = best.index
            policies[seg_id] = best.policy
            seg_scores[seg_id] = best.score

    plan = PinchPlan(contour, max_segments, variant, order, tension, pins, policies, seg_scores)
    # evaluation phase: the per-segment winners cut the whole contour together
    plan.score = float(np.mean(evaluate(plan.scenario(sheet, blade_jitter=blade_jitter),
                                        executed(policies, search.greedy_eval), eval_seeds)))
    log.info("%s %s: order %s, pinch %s, pins %s, score %.2f", contour.id, variant,
             order, tension, pins, plan.score)
    return plan
