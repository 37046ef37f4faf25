"""Deformable frame model: control sections, pose offsets and the mesh.

Coordinates are in meters with ``y`` the height axis, ``z`` the lateral axis
along which control sections translate and ``x`` the remaining horizontal
axis. Pose offsets ``H`` are normalized by the total height ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .spline import NaturalCubicSpline

# Section heights from the model description and from the experiment setup.
SECTION_PRESETS: dict[str, tuple[tuple[float, ...], float]] = {
    "model": ((0.0, 1.85, 3.35, 4.85, 6.50), 6.50),
    "experiment": ((0.35, 1.85, 3.35, 4.85, 6.55), 6.55),
}
DEFAULT_PRESET = "model"

MEMBER_COLUMN = 0
MEMBER_BEAM = 1
MEMBER_SLAB = 2


@dataclass(frozen=True)
class ControlSectionLayout:
    heights: tuple[float, ...]
    total_height: float = 6.50

    def __post_init__(self):
        heights = tuple(float(v) for v in self.heights)
        object.__setattr__(self, "heights", heights)
        if len(heights) < 2:
            raise ConfigError("at least two control sections are required", "heights")
        if any(b <= a for a, b in zip(heights, heights[1:])):
            raise ConfigError("control section heights must be strictly increasing", "heights")
        if self.total_height <= 0:
            raise ConfigError("total height must be positive", "total_height")
        if heights[0] < 0 or heights[-1] > self.total_height:
            raise ConfigError("control sections must lie within [0, h]", "heights")

    @classmethod
    def preset(cls, name: str = DEFAULT_PRESET) -> "ControlSectionLayout":
        try:
            heights, h = SECTION_PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown section preset {name!r}", "preset") from None
        return cls(heights, h)

    @property
    def n(self) -> int:
        return len(self.heights)

    @property
    def knots(self) -> np.ndarray:
        """Normalized section heights ``heights / h``."""
        return np.asarray(self.heights) / self.total_height

    def spline(self) -> NaturalCubicSpline:
        return _spline_for(self.heights, self.total_height)


_SPLINE_CACHE: dict[tuple, NaturalCubicSpline] = {}


def _spline_for(heights, h) -> NaturalCubicSpline:
    key = (heights, h)
    sp = _SPLINE_CACHE.get(key)
    if sp is None:
        sp = _SPLINE_CACHE[key] = NaturalCubicSpline(np.asarray(heights) / h)
    return sp


@dataclass(frozen=True)
class PoseParams:
    """Normalized control-section offsets, optionally bounded by ``h_max``."""

    values: tuple[float, ...]
    h_max: float | None = None

    def __post_init__(self):
        values = tuple(float(v) for v in np.ravel(self.values))
        object.__setattr__(self, "values", values)
        if self.h_max is not None and any(abs(v) > self.h_max for v in values):
            raise DomainError(f"pose offsets exceed bound {self.h_max}")

    @classmethod
    def zeros(cls, n: int) -> "PoseParams":
        return cls((0.0,) * n)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _as_pose_vector(H, n: int) -> np.ndarray:
    H = np.asarray(H, dtype=float).ravel()
    if H.size != n:
        raise ShapeError(f"pose has {H.size} offsets, layout has {n} sections")
    return H


@dataclass(frozen=True)
class FrameConfig:
    """Geometry of a one-bay multi-story frame.

    ``levels`` are the heights of the top of each floor slab.
    """

    levels: tuple[float, ...] = (1.85, 3.35, 4.85, 6.50)
    bay_x: float = 1.5
    bay_z: float = 2.0
    column_size: float = 0.20
    beam_width: float = 0.15
    beam_depth: float = 0.20
    slab_thickness: float = 0.08
    column_segment: float = 0.20
    span_segment: float = 0.25

    def validate(self) -> None:
        if len(self.levels) < 1:
            raise ConfigError("story count must be at least 1", "levels")
        prev = 0.0
        for lv in self.levels:
            if lv <= prev:
                raise ConfigError("floor levels must be positive and increasing", "levels")
            prev = lv
        for name in ("bay_x", "bay_z", "column_size", "beam_width", "beam_depth",
                     "slab_thickness", "column_segment", "span_segment"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", name)

    @property
    def height(self) -> float:
        return self.levels[-1]


@dataclass(frozen=True)
class FrameMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    layout: ControlSectionLayout
    # per face: (member kind, story index, shade band)
    face_groups: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.face_groups is None:
            object.__setattr__(self, "face_groups", np.zeros((len(f), 3), dtype=np.int64))
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ShapeError("face index out of range")
        h = self.layout.total_height
        if v.size and (v[:, 1].min() < -1e-9 or v[:, 1].max() > h + 1e-9):
            raise DomainError("mesh vertices must satisfy 0 <= y <= h")

    @classmethod
    def empty(cls, layout: ControlSectionLayout) -> "FrameMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), layout)


class _MeshBuilder:
    def __init__(self):
        self.vertices: list[np.ndarray] = []
        self.faces: list[np.ndarray] = []
        self.groups: list[np.ndarray] = []
        self.count = 0

    def prism(self, x0, x1, z0, z1, ys, kind, story, band=0):
        """Axis-aligned box with rings at heights ``ys`` (bottom to top).

        Side faces of consecutive segments alternate shade bands starting at
        ``band``; caps use ``band``.
        """
        ys = np.asarray(ys, dtype=float)
        # ring order is clockwise seen from +y; faces wind outward
        ring = np.array([[x0, z0], [x1, z0], [x1, z1], [x0, z1]])
        verts = np.array([[px, y, pz] for y in ys for px, pz in ring])
        base = self.count
        faces = []
        bands = []
        for j in range(len(ys) - 1):
            lo, hi = base + 4 * j, base + 4 * (j + 1)
            for k in range(4):
                a, b = lo + k, lo + (k + 1) % 4
                c, d = hi + (k + 1) % 4, hi + k
                faces += [[a, c, b], [a, d, c]]
                bands += [(band + j) % 2] * 2
        bot, top = base, base + 4 * (len(ys) - 1)
        faces += [[bot, bot + 1, bot + 2], [bot, bot + 2, bot + 3]]
        faces += [[top, top + 2, top + 1], [top, top + 3, top + 2]]
        bands += [band] * 4
        self.vertices.append(verts)
        self.faces.append(np.array(faces))
        self.groups.append(np.column_stack([np.full(len(faces), kind), np.full(len(faces), story),
                                            bands]))
        self.count += len(verts)

    def build(self, layout) -> FrameMesh:
        if not self.vertices:
            return FrameMesh.empty(layout)
        return FrameMesh(np.vstack(self.vertices), np.vstack(self.faces), layout,
                         np.vstack(self.groups))


def column_rings(bottom: float, top: float, segment: float) -> np.ndarray:
    k = max(1, math.ceil((top - bottom) / segment - 1e-9))
    return np.linspace(bottom, top, k + 1)


def span_pieces(start: float, stop: float, segment: float) -> list[tuple[float, float]]:
    k = max(1, math.ceil((stop - start) / segment - 1e-9))
    edges = np.linspace(start, stop, k + 1)
    return list(zip(edges[:-1], edges[1:]))


def build_frame_mesh(config: FrameConfig | None = None,
                     layout: ControlSectionLayout | None = None) -> FrameMesh:
    """Columns, beams and slabs of a one-bay frame.

    Each member is a box (8 vertices, 12 triangles). Columns are subdivided
    along the height into ``column_segment`` pieces so that bending follows
    the spline closely; beams and slabs spanning ``z`` are split into
    ``span_segment`` pieces.
    """
    config = config or FrameConfig()
    config.validate()
    if layout is None:
        layout = ControlSectionLayout.preset()
        if config.height > layout.total_height:
            layout = ControlSectionLayout((0.0,) + tuple(config.levels), config.height)
    if config.height > layout.total_height + 1e-9:
        raise ConfigError("frame is taller than the layout height", "levels")

    c = config.column_size / 2
    bw = config.beam_width / 2
    mb = _MeshBuilder()
    bottom = 0.0
    for story, level in enumerate(config.levels):
        rings = column_rings(bottom, level, config.column_segment)
        for cx in (0.0, config.bay_x):
            for cz in (0.0, config.bay_z):
                mb.prism(cx - c, cx + c, cz - c, cz + c, rings, MEMBER_COLUMN, story)
        slab_bot = level - config.slab_thickness
        beam = (slab_bot - config.beam_depth, slab_bot)
        # Beams along x run between column faces, beams along z span the full
        # width, and the slab is inset in x; no two visible faces are coplanar.
        for cz in (0.0, config.bay_z):
            mb.prism(c, config.bay_x - c, cz - bw, cz + bw, beam, MEMBER_BEAM, story)
        # members spanning z are split into shade bands so that they carry
        # edges across the direction of motion
        pieces = span_pieces(-c, config.bay_z + c, config.span_segment)
        for cx in (0.0, config.bay_x):
            for k, (z0, z1) in enumerate(pieces):
                mb.prism(cx - bw, cx + bw, z0, z1, beam, MEMBER_BEAM, story, k % 2)
        for k, (z0, z1) in enumerate(pieces):
            mb.prism(-bw / 2, config.bay_x + bw / 2, z0, z1, (slab_bot, level),
                     MEMBER_SLAB, story, (k + 1) % 2)
        bottom = level
    return mb.build(layout)


def cub_spl_itp(y0, layout: ControlSectionLayout, H):
    """Offset of the section at normalized height ``y0`` (scalar or array)."""
    H = _as_pose_vector(H, layout.n)
    y = np.asarray(y0, dtype=float)
    if np.any(y < 0) or np.any(y > 1) or not np.all(np.isfinite(y)):
        raise DomainError("normalized height must lie in [0, 1]")
    out = layout.spline()(y, H)
    return float(out) if out.ndim == 0 else out


def section_weights(y0, layout: ControlSectionLayout) -> np.ndarray:
    """Spline weights of each control section at normalized heights ``y0``."""
    return layout.spline().weights(y0)


def displace_vertex(v, layout: ControlSectionLayout, H, h: float | None = None) -> np.ndarray:
    h = layout.total_height if h is None else h
    x0, y0, z0 = (float(t) for t in v)
    return np.array([x0, y0, z0 + cub_spl_itp(y0 / h, layout, H) * h])


def deform_mesh(mesh: FrameMesh, H) -> FrameMesh:
    layout = mesh.layout
    H = _as_pose_vector(H, layout.n)
    h = layout.total_height
    v = mesh.vertices.copy()
    if len(v):
        v[:, 2] += layout.spline()(np.clip(v[:, 1] / h, 0.0, 1.0), H) * h
    return replace(mesh, vertices=v)


def write_obj(mesh: FrameMesh, path) -> None:
    lines = ["# frame mesh", f"# sections {' '.join(f'{y:g}' for y in mesh.layout.heights)}"
             f" h {mesh.layout.total_height:g}"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_vertices(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
