"""Mass-spring sheet: a rectangular grid of point masses in 3D.

The sheet starts flat in the x-y plane.  Each step runs a damped Verlet
update followed by a few Jacobi passes over the intact 4-neighbour links:
in-plane the links are distance constraints, out of plane they act as a
linear membrane, so sag never drags points sideways.  Pinned points and
the active pinch point are hard constraints.  Severed points lose every
link and only feel gravity.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit


@dataclass(frozen=True)
class PhysicsConfig:
    alpha: float = 0.99
    delta: float = 0.008
    tau: float = 1.0
    gravity_z: float = -2500.0
    rest_dx: float = 1.0
    rest_dy: float = 1.0
    constraint_iterations: int = 3
    # |gravity_z| * step_scale == 0.05 * rest_dx
    step_scale: float = 2e-5
    # link rest length is (1 - prestrain) * spacing; > 0 means the sheet is stretched
    prestrain: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.constraint_iterations < 1:
            raise ValueError("constraint_iterations must be >= 1")
        if self.rest_dx <= 0 or self.rest_dy <= 0:
            raise ValueError("rest spacing must be positive")
        if not 0.0 <= self.prestrain < 1.0:
            raise ValueError(f"prestrain must lie in [0, 1), got {self.prestrain}")

    @property
    def velocity_retention(self) -> float:
        return self.alpha * self.delta


class Direction(IntEnum):
    """The four in-plane gripper moves."""

    PLUS_X = 0
    MINUS_X = 1
    PLUS_Y = 2
    MINUS_Y = 3

    @property
    def vector(self) -> np.ndarray:
        return _DIRECTION_VECTORS[int(self)].copy()


_DIRECTION_VECTORS = np.array(
    [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]
)

# gripper travel per action, mm
GRIPPER_STEP_MM = 1.0


@dataclass(frozen=True)
class PointState:
    pos: np.ndarray
    prev_pos: np.ndarray
    pinned: bool
    severed: bool


def grid_edges(width: int, height: int) -> np.ndarray:
    """4-neighbour links of a row-major grid, horizontal links first."""
    idx = np.arange(width * height).reshape(height, width)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.ascontiguousarray(np.concatenate([horiz, vert]), dtype=np.int64)


def rest_positions(width: int, height: int, rest_dx: float, rest_dy: float) -> np.ndarray:
    ys, xs = np.divmod(np.arange(width * height), width)
    return np.stack([xs * rest_dx, ys * rest_dy, np.zeros(width * height)], axis=1).astype(float)


class Mesh:
    """Grid of point masses; operations mutate in place and return ``self``."""

    def __init__(self, width: int, height: int, config: PhysicsConfig | None = None,
                 pinned_boundary: bool = True, clamp_edges: bool = False):
        if width < 2 or height < 2:
            raise ValueError(f"mesh needs width, height >= 2, got {width}x{height}")
        self.width = int(width)
        self.height = int(height)
        self.config = config if config is not None else PhysicsConfig()
        self.rest = rest_positions(self.width, self.height, self.config.rest_dx, self.config.rest_dy)
        self.pos = self.rest.copy()
        self.prev_pos = self.rest.copy()
        self.pinned = np.zeros(self.n_points, dtype=np.bool_)
        self.severed = np.zeros(self.n_points, dtype=np.bool_)
        # where each pinned point is held
        self.anchor = self.rest.copy()
        self.edges = grid_edges(self.width, self.height)
        d = self.rest[self.edges[:, 1]] - self.rest[self.edges[:, 0]]
        self.rest_length = (1.0 - self.config.prestrain) * np.sqrt((d * d).sum(axis=1))
        self.tension_index: int | None = None
        self.tension_offset = np.zeros(3)
        if pinned_boundary:
            for i in self.corner_indices():
                self.pinned[i] = True
        if clamp_edges:
            self.pinned[self.border_indices()] = True

    @property
    def n_points(self) -> int:
        return self.width * self.height

    @property
    def cut_set(self) -> set[int]:
        return set(np.flatnonzero(self.severed).tolist())

    @property
    def points(self) -> list[PointState]:
        return [PointState(self.pos[i].copy(), self.prev_pos[i].copy(),
                           bool(self.pinned[i]), bool(self.severed[i]))
                for i in range(self.n_points)]

    def corner_indices(self) -> tuple[int, int, int, int]:
        w, n = self.width, self.n_points
        return (0, w - 1, n - w, n - 1)

    def border_indices(self) -> np.ndarray:
        rows, cols = np.divmod(np.arange(self.n_points), self.width)
        edge = (rows == 0) | (cols == 0) | (rows == self.height - 1) | (cols == self.width - 1)
        return np.flatnonzero(edge)

    def index(self, col: int, row: int) -> int:
        return row * self.width + col

    def neighbors(self, i: int) -> list[int]:
        row, col = divmod(i, self.width)
        out = []
        if row > 0:
            out.append(i - self.width)
        if col > 0:
            out.append(i - 1)
        if col < self.width - 1:
            out.append(i + 1)
        if row < self.height - 1:
            out.append(i + self.width)
        return out

    def _check_index(self, index) -> int:
        i = int(index)
        if not 0 <= i < self.n_points:
            raise IndexError(f"point index {index} outside 0..{self.n_points - 1}")
        return i

    def pin(self, index) -> Mesh:
        i = self._check_index(index)
        if self.severed[i]:
            raise ValueError(f"cannot pin severed point {i}")
        self.pinned[i] = True
        self.anchor[i] = self.pos[i]
        self.prev_pos[i] = self.pos[i]
        return self

    def set_tension(self, index) -> Mesh:
        # moving the gripper to a new pinch point does not disturb the sheet
        if index is None:
            self.tension_index = None
        else:
            i = self._check_index(index)
            if self.severed[i]:
                raise ValueError(f"cannot grip severed point {i}")
            self.tension_index = i
        self.tension_offset = np.zeros(3)
        return self

    def apply_tension(self, direction) -> Mesh:
        if self.tension_index is None:
            raise RuntimeError("no active tension point")
        self.tension_offset = self.tension_offset + GRIPPER_STEP_MM * Direction(direction).vector
        return self

    def tension_target(self) -> np.ndarray | None:
        if self.tension_index is None:
            return None
        return self.rest[self.tension_index] + self.tension_offset

    def sever(self, index) -> Mesh:
        i = self._check_index(index)
        if self.tension_index is not None and i == self.tension_index:
            raise ValueError(f"point {i} is held by the gripper")
        if self.pinned[i]:
            raise ValueError(f"point {i} is pinned")
        self.severed[i] = True
        return self

    def step(self, config: PhysicsConfig | None = None) -> Mesh:
        cfg = config if config is not None else self.config
        fixed = self.pinned.copy()
        targets = self.anchor.copy()
        if self.tension_index is not None:
            fixed[self.tension_index] = True
            targets[self.tension_index] = self.rest[self.tension_index] + self.tension_offset
        _step_kernel(self.pos, self.prev_pos, fixed, targets, self.severed, self.edges,
                     self.rest_length, cfg.velocity_retention, cfg.gravity_z * cfg.step_scale,
                     cfg.tau, cfg.constraint_iterations)
        return self

    def copy(self) -> Mesh:
        other = Mesh.__new__(Mesh)
        other.__dict__.update(self.__dict__)
        for name in ("rest", "pos", "prev_pos", "pinned", "severed", "anchor", "tension_offset"):
            setattr(other, name, getattr(self, name).copy())
        return other


@njit(cache=True)
def _step_kernel(pos, prev, fixed, targets, severed, edges, rest_length,
                 retain, gravity_step, tau, iterations):
    n = pos.shape[0]
    for i in range(n):
        if fixed[i]:
            continue
        for k in range(3):
            p = pos[i, k]
            v = p - prev[i, k]
            prev[i, k] = p
            pos[i, k] = p + retain * v
        pos[i, 2] += gravity_step
    for i in range(n):
        if fixed[i]:
            for k in range(3):
                pos[i, k] = targets[i, k]
                prev[i, k] = targets[i, k]
    relax_links(pos, fixed, targets, severed, edges, rest_length, tau, iterations)


@njit(cache=True)
def relax_links(pos, fixed, targets, severed, edges, rest_length, tau, iterations):
    """Jacobi passes over the intact links.

    In-plane, each link pulls its endpoints toward rest length; out of plane
    it acts as a linear membrane term.  A free point moves by ``tau / 2``
    times the mean correction of its links, so a point tied to one pinned
    neighbour covers half its length error per pass.
    """
    n = pos.shape[0]
    corr = np.zeros((n, 3))
    degree = np.zeros(n)
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        if not (severed[a] or severed[b]):
            degree[a] += 1.0
            degree[b] += 1.0
    for _ in range(iterations):
        corr[:] = 0.0
        for e in range(edges.shape[0]):
            a = edges[e, 0]
            b = edges[e, 1]
            if severed[a] or severed[b]:
                continue
            dx = pos[b, 0] - pos[a, 0]
            dy = pos[b, 1] - pos[a, 1]
            length = np.sqrt(dx * dx + dy * dy)
            if length > 0.0:
                s = (length - rest_length[e]) / length
                corr[a, 0] += s * dx
                corr[a, 1] += s * dy
                corr[b, 0] -= s * dx
                corr[b, 1] -= s * dy
            dz = pos[b, 2] - pos[a, 2]
            corr[a, 2] += dz
            corr[b, 2] -= dz
        for i in range(n):
            if fixed[i]:
                for k in range(3):
                    pos[i, k] = targets[i, k]
            elif degree[i] > 0.0:
                g = 0.5 * tau / degree[i]
                for k in range(3):
                    pos[i, k] += g * corr[i, k]


# functional forms of the Mesh methods

def new_mesh(width: int, height: int, config: PhysicsConfig | None = None,
             pinned_boundary: bool = True, clamp_edges: bool = False) -> Mesh:
    return Mesh(width, height, config, pinned_boundary, clamp_edges)


def pin(mesh: Mesh, index) -> Mesh:
    return mesh.pin(index)


def set_tension(mesh: Mesh, index) -> Mesh:
    return mesh.set_tension(index)


def apply_tension(mesh: Mesh, direction) -> Mesh:
    return mesh.apply_tension(direction)


def step(mesh: Mesh, config: PhysicsConfig | None = None) -> Mesh:
    return mesh.step(config)


def sever(mesh: Mesh, index) -> Mesh:
    return mesh.sever(index)
