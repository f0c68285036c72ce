"""Cutting contours, their segmentation, scissor paths and the accuracy metric."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# blade sample spacing, as a fraction of rest_dx
BLADE_SPACING = 0.5
CUT_RADIUS = 0.6
JOINT_RADIUS = 2.0


@dataclass(frozen=True)
class Contour:
    vertices: tuple[tuple[float, float], ...]
    closed: bool = False
    id: str = ""

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 2:
            raise ValueError(f"contour {self.id!r} needs at least 2 vertices")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise ValueError(f"contour {self.id!r} repeats vertex {a}")
        if self.closed and verts[0] == verts[-1]:
            raise ValueError(f"closed contour {self.id!r} must not repeat its first vertex")

    def polyline(self) -> np.ndarray:
        pts = np.asarray(self.vertices, dtype=float)
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return pts

    def centroid(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).mean(axis=0)


@dataclass(frozen=True)
class JointArea:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("joint radius must be positive")


@dataclass(frozen=True)
class Segment:
    id: int
    path: tuple[tuple[float, float], ...]
    start_joint: JointArea | None = None
    end_joint: JointArea | None = None

    def polyline(self) -> np.ndarray:
        return np.asarray(self.path, dtype=float)


@dataclass(frozen=True)
class ScissorPath:
    positions: np.ndarray = field(repr=False)
    ideal_cut: frozenset[int] = frozenset()

    def __len__(self) -> int:
        return len(self.positions)


def _as_polyline(shape) -> np.ndarray:
    if isinstance(shape, (Contour, Segment)):
        return shape.polyline()
    pts = np.asarray(shape, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("polyline must be an (n >= 2, 2) array of points")
    return pts


def sample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Points along the polyline no further apart than ``spacing``, vertices included."""
    out = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, math.ceil(np.linalg.norm(b - a) / spacing - 1e-12))
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def _grid_shape(mesh) -> tuple[int, int, float, float]:
    return mesh.width, mesh.height, mesh.config.rest_dx, mesh.config.rest_dy


def rest_xy(mesh) -> np.ndarray:
    w, h, dx, dy = _grid_shape(mesh)
    rows, cols = np.divmod(np.arange(w * h), w)
    return np.stack([cols * dx, rows * dy], axis=1).astype(float)


def points_within(xy: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Boolean mask of ``xy`` rows within ``radius`` of any center."""
    d2 = ((xy[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return (d2 <= radius * radius).any(axis=1)


def rasterize(shape, mesh, cut_radius: float | None = None) -> ScissorPath:
    """Blade positions along ``shape`` and the mesh points they should sever at rest.

    ``mesh`` may be a Mesh or anything with ``width``, ``height`` and a
    ``config`` carrying ``rest_dx``/``rest_dy``.
    """
    w, h, dx, dy = _grid_shape(mesh)
    pts = _as_polyline(shape)
    eps = 1e-9
    if (pts[:, 0].min() < -eps or pts[:, 0].max() > (w - 1) * dx + eps
            or pts[:, 1].min() < -eps or pts[:, 1].max() > (h - 1) * dy + eps):
        raise ValueError("polyline leaves the mesh rest rectangle")
    radius = CUT_RADIUS * dx if cut_radius is None else cut_radius
    blade = sample_polyline(pts, BLADE_SPACING * dx)
    mask = points_within(rest_xy(mesh), blade, radius)
    return ScissorPath(blade, frozenset(np.flatnonzero(mask).tolist()))


def turning_angles(contour: Contour) -> np.ndarray:
    """Absolute turning angle at each vertex; 0 at the ends of an open contour."""
    v = np.asarray(contour.vertices, dtype=float)
    n = len(v)
    angles = np.zeros(n)
    for i in range(n):
        if not contour.closed and (i == 0 or i == n - 1):
            continue
        a = v[i] - v[i - 1]
        b = v[(i + 1) % n] - v[i]
        cross = a[0] * b[1] - a[1] * b[0]
        angles[i] = abs(math.atan2(cross, float(a @ b)))
    return angles


def segment_contour(contour: Contour, max_segments: int,
                    joint_radius: float = JOINT_RADIUS) -> tuple[list[Segment], list[JointArea]]:
    """Split ``contour`` at its sharpest vertices.

    An open contour gets ``max_segments - 1`` splits; a closed one needs
    ``max_segments`` splits to form that many pieces.
    """
    if max_segments < 1:
        raise ValueError("max_segments must be >= 1")
    n = len(contour.vertices)
    if max_segments > n:
        raise ValueError(f"max_segments={max_segments} exceeds vertex count {n}")
    verts = contour.vertices
    if max_segments == 1:
        path = verts + (verts[0],) if contour.closed else verts
        return [Segment(0, tuple(path))], []

    n_splits = max_segments if contour.closed else max_segments - 1
    if not contour.closed and n_splits > n - 2:
        raise ValueError(f"open contour {contour.id!r} has too few interior vertices "
                         f"for {max_segments} segments")
    angles = turning_angles(contour)
    candidates = range(n) if contour.closed else range(1, n - 1)
    # stable sort keeps the lowest index first among equal angles
    ranked = sorted(candidates, key=lambda i: -angles[i])
    splits = sorted(ranked[:n_splits])
    joints = {i: JointArea(verts[i], joint_radius) for i in splits}

    bounds = list(splits)
    if contour.closed:
        bounds.append(splits[0] + n)
    else:
        bounds = [0] + bounds + [n - 1]
    segments = []
    for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        path = tuple(verts[i % n] for i in range(a, b + 1))
        segments.append(Segment(k, path, joints.get(a % n), joints.get(b % n)))
    ordered = [joints[i] for i in splits]
    return segments, ordered


def symmetric_difference(ideal_cut: Iterable[int], actual_cut: Iterable[int]) -> int:
    """Number of mesh points in exactly one of the two cut sets."""
    return len(set(ideal_cut) ^ set(actual_cut))


def load_contours(entries: Sequence[dict]) -> list[tuple[Contour, int]]:
    out = []
    for k, e in enumerate(entries):
        try:
            c = Contour(tuple(map(tuple, e["vertices"])), bool(e.get("closed", False)), str(e["id"]))
            out.append((c, int(e.get("max_segments", 1))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"testbed entry {k}: {exc}") from exc
    return out
