"""The tensioning MDP.

A scripted blade walks the scissor path of each segment in cutting order
while a gripper holds the current segment's pinch point and moves it 1 mm
per step.  Reward is zero until the blade runs out of path, then the
negated symmetric difference between the intended and actual cut.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .contour import CUT_RADIUS, ScissorPath, Segment, rasterize, symmetric_difference
from .mesh import Direction, Mesh, PhysicsConfig

Action = Direction
N_ACTIONS = len(Direction)


@dataclass(frozen=True)
class SheetSpec:
    width: int = 25
    height: int = 25
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    pinned_boundary: bool = True
    clamp_edges: bool = False
    cut_radius: float | None = None

    @property
    def config(self) -> PhysicsConfig:
        return self.physics

    @property
    def n_points(self) -> int:
        return self.width * self.height

    @property
    def radius(self) -> float:
        return CUT_RADIUS * self.physics.rest_dx if self.cut_radius is None else self.cut_radius

    def build(self) -> Mesh:
        return Mesh(self.width, self.height, self.physics, self.pinned_boundary, self.clamp_edges)


@dataclass(frozen=True)
class Scenario:
    """One cutting job: which segments, in what order, held how."""

    sheet: SheetSpec
    segments: tuple[Segment, ...]
    order: tuple[int, ...]
    # segment id -> pinch index (None: no gripper while cutting that segment)
    tension: tuple[tuple[int, int | None], ...] = ()
    pins: tuple[int, ...] = ()
    seed: int = 0
    blade_jitter: float = 0.0

    def __post_init__(self):
        if isinstance(self.tension, Mapping):
            object.__setattr__(self, "tension", tuple(sorted(self.tension.items())))
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        object.__setattr__(self, "pins", tuple(int(i) for i in self.pins))

    def pinch_for(self, segment_id: int) -> int | None:
        return dict(self.tension).get(segment_id)

    def with_seed(self, seed: int) -> Scenario:
        return Scenario(self.sheet, self.segments, self.order, self.tension, self.pins,
                        int(seed), self.blade_jitter)


@dataclass(frozen=True)
class EpisodeResult:
    actual_cut: frozenset[int]
    sym_diff: int
    steps: int


def tracked_indices(width: int, height: int, k: int) -> np.ndarray:
    cols = np.round(np.linspace(0, width - 1, k)).astype(int)
    rows = np.round(np.linspace(0, height - 1, k)).astype(int)
    return (rows[:, None] * width + cols[None, :]).ravel()


class CuttingEnv:
    n_actions = N_ACTIONS

    def __init__(self, scenario: Scenario, track: int = 5):
        self.scenario = scenario
        self.sheet = scenario.sheet
        by_id = {s.id: s for s in scenario.segments}
        missing = [i for i in scenario.order if i not in by_id]
        if missing:
            raise ValueError(f"cutting order names unknown segments {missing}")
        self.paths: dict[int, ScissorPath] = {
            i: rasterize(by_id[i], self.sheet, self.sheet.radius) for i in scenario.order}
        self.blade = np.vstack([self.paths[i].positions for i in scenario.order])
        self.blade_segment = np.concatenate(
            [np.full(len(self.paths[i]), i) for i in scenario.order])
        self.ideal_cut = frozenset().union(*(self.paths[i].ideal_cut for i in scenario.order))
        n = self.sheet.n_points
        for i in scenario.pins:
            if not 0 <= i < n:
                raise ValueError(f"pin index {i} outside the mesh")
            if i in self.ideal_cut:
                raise ValueError(f"pin {i} lies on the ideal cut")
        for seg, p in scenario.tension:
            if p is None:
                continue
            if not 0 <= p < n:
                raise ValueError(f"pinch index {p} outside the mesh")
            if p in self.ideal_cut:
                raise ValueError(f"pinch point {p} of segment {seg} lies on the ideal cut")
        # every pinch point of the plan stays intact, even after the gripper moves on
        self.protected = np.zeros(n, dtype=np.bool_)
        self.protected[[p for _, p in scenario.tension if p is not None]] = True
        self.tracked = tracked_indices(self.sheet.width, self.sheet.height, track)
        self.obs_dim = 2 * len(self.tracked) + 3
        self.mesh: Mesh | None = None
        self.t = 0
        self.done = True

    def __len__(self) -> int:
        return len(self.blade)

    @property
    def active_segment(self) -> int:
        return int(self.blade_segment[min(self.t, len(self.blade) - 1)])

    def reset(self) -> np.ndarray:
        sc = self.scenario
        self.rng = np.random.default_rng(sc.seed)
        mesh = self.sheet.build()
        for i in sc.pins:
            mesh.pin(i)
        self.mesh = mesh
        self._segment = None
        self._switch_segment(self.active_segment if len(self.blade) else None)
        self.t = 0
        self.done = False
        return self.observe()

    def _switch_segment(self, seg):
        self._segment = seg
        pinch = None if seg is None else self.scenario.pinch_for(seg)
        if pinch is not None and self.mesh.severed[pinch]:
            pinch = None
        self.mesh.set_tension(pinch)

    def observe(self) -> np.ndarray:
        m = self.mesh
        disp = (m.pos[self.tracked, :2] - m.rest[self.tracked, :2]).ravel()
        progress = self.t / len(self.blade)
        return np.concatenate([disp, [progress], m.tension_offset[:2]])

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        m = self.mesh
        seg = int(self.blade_segment[self.t])
        if seg != self._segment:
            self._switch_segment(seg)
        if action is not None and m.tension_index is not None:
            m.apply_tension(action)

        blade = self.blade[self.t]
        if self.scenario.blade_jitter > 0:
            blade = blade + self.rng.normal(0.0, self.scenario.blade_jitter, size=2)
        d2 = ((m.pos[:, :2] - blade) ** 2).sum(axis=1)
        hit = (d2 <= self.sheet.radius ** 2) & ~m.severed & ~m.pinned & ~self.protected
        m.severed |= hit
        m.step()

        self.t += 1
        self.done = self.t == len(self.blade)
        reward = -float(self.sym_diff()) if self.done else 0.0
        return self.observe(), reward, self.done

    def sym_diff(self) -> int:
        return symmetric_difference(self.ideal_cut, self.mesh.cut_set)

    def result(self) -> EpisodeResult:
        return EpisodeResult(frozenset(self.mesh.cut_set), self.sym_diff(), self.t)


def reset(env: CuttingEnv) -> np.ndarray:
    return env.reset()


def env_step(env: CuttingEnv, action) -> tuple[np.ndarray, float, bool]:
    return env.step(action)


def _controller_for(policy, env: CuttingEnv):
    if policy is None or hasattr(policy, "act"):
        return policy
    if isinstance(policy, Mapping):
        return policy.get(env.active_segment)
    raise TypeError(f"unsupported policy object {type(policy).__name__}")


def rollout(env: CuttingEnv, policy, rng: np.random.Generator
            ) -> tuple[list[tuple[np.ndarray, int | None, float]], EpisodeResult]:
    """Run one episode.

    ``policy`` is None (gripper never moves), an object with
    ``act(obs, rng) -> int``, or a mapping from segment id to such objects.
    """
    controllers = policy.values() if isinstance(policy, Mapping) else [policy]
    for c in controllers:
        dim = getattr(c, "obs_dim", None)
        if dim is not None and dim != env.obs_dim:
            raise ValueError(f"policy expects {dim} inputs, environment emits {env.obs_dim}")
    obs = env.reset()
    trajectory = []
    done = False
    while not done:
        ctrl = _controller_for(policy, env)
        action = None if ctrl is None else int(ctrl.act(obs, rng))
        next_obs, reward, done = env.step(action)
        trajectory.append((obs, action, reward))
        obs = next_obs
    return trajectory, env.result()


def evaluate(scenario: Scenario, policy, seeds: Sequence[int]) -> list[int]:
    """Symmetric difference of one rollout per seed."""
    env = CuttingEnv(scenario)
    scores = []
    for s in seeds:
        env.scenario = scenario.with_seed(s)
        _, res = rollout(env, policy, np.random.default_rng(s))
        scores.append(res.sym_diff)
    return scores
