"""Dense optical flow (coarse-to-fine Horn-Schunck), visualization and masking.

A flow field is a float array of shape ``(height, width, 2)`` holding the
``(u, v)`` displacement in pixels of each pixel of the first image; ``u``
points along columns, ``v`` along rows (downward).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, ShapeError, StorageError
from .render import resize_bilinear, to_gray

FLO_MAGIC = b"PIEH"


@dataclass(frozen=True)
class FlowSolverConfig:
    """Horn-Schunck settings.

    ``alpha`` weighs smoothness against brightness constancy on intensities
    scaled to 0..255. Each pyramid level runs ``warps`` linearizations with
    ``iterations`` red-black SOR sweeps each. The pyramid has at most
    ``levels`` levels and stops before any side drops below ``min_size``.
    """

    alpha: float = 25.0
    iterations: int = 100
    levels: int = 4
    factor: float = 0.5
    warps: int = 2
    sigma: float = 1.0
    omega: float = 1.8
    min_size: int = 32

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive", "alpha")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1", "iterations")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1", "levels")
        if not 0 < self.factor < 1:
            raise ConfigError("pyramid factor must lie in (0, 1)", "factor")
        if self.warps < 1:
            raise ConfigError("warps must be at least 1", "warps")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative", "sigma")
        if not 0 < self.omega < 2:
            raise ConfigError("SOR relaxation must lie in (0, 2)", "omega")


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``img`` at ``(r + v, c + u)`` bilinearly, clamping to the edge."""
    rows, cols = np.indices(img.shape, dtype=float)
    return ndimage.map_coordinates(img, [rows + v, cols + u], order=1, mode="nearest")


def _smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma, mode="nearest") if sigma > 0 else img


def _pyramid(img: np.ndarray, cfg: FlowSolverConfig) -> list[np.ndarray]:
    levels = [img]
    for _ in range(cfg.levels - 1):
        prev = levels[-1]
        h = max(1, round(prev.shape[0] * cfg.factor))
        w = max(1, round(prev.shape[1] * cfg.factor))
        if min(h, w) < cfg.min_size or (h, w) == prev.shape:
            break
        # anti-alias before decimation
        blurred = ndimage.gaussian_filter(prev, 0.5 / cfg.factor, mode="nearest")
        levels.append(resize_bilinear(blurred, w, h))
    return levels[::-1]


@numba.njit(cache=True)
def _sor_sweeps(u, v, Ix, Iy, rhs, denom, iterations, omega):
    """Red-black SOR on the Horn-Schunck equations, in place.

    Neighbor means use replicated edges. Red pixels (even ``r + c``) are
    updated first from the previous black values, then black from new red.
    """
    h, w = u.shape
    for _ in range(iterations):
        for color in range(2):
            for r in range(h):
                rm = r - 1 if r > 0 else 0
                rp = r + 1 if r < h - 1 else h - 1
                start = (color + r) % 2
                for c in range(start, w, 2):
                    cm = c - 1 if c > 0 else 0
                    cp = c + 1 if c < w - 1 else w - 1
                    ub = 0.25 * (u[rm, c] + u[rp, c] + u[r, cm] + u[r, cp])
                    vb = 0.25 * (v[rm, c] + v[rp, c] + v[r, cm] + v[r, cp])
                    t = (Ix[r, c] * ub + Iy[r, c] * vb + rhs[r, c]) / denom[r, c]
                    u[r, c] += omega * (ub - Ix[r, c] * t - u[r, c])
                    v[r, c] += omega * (vb - Iy[r, c] * t - v[r, c])


def _solve_level(I1, I2, u, v, cfg: FlowSolverConfig):
    alpha2 = cfg.alpha**2
    for _ in range(cfg.warps):
        I2w = _warp(I2, u, v)
        Iy, Ix = np.gradient(0.5 * (I1 + I2w))
        It = I2w - I1
        # brightness constancy linearized about the current flow (u0, v0)
        rhs = It - Ix * u - Iy * v
        denom = alpha2 + Ix**2 + Iy**2
        _sor_sweeps(u, v, Ix, Iy, rhs, denom, cfg.iterations, cfg.omega)
    return u, v


def dense_flow(I1, I2, cfg: FlowSolverConfig | None = None) -> np.ndarray:
    """Flow taking each pixel of ``I1`` to its position in ``I2``."""
    cfg = cfg or FlowSolverConfig()
    g1 = to_gray(I1) * 255.0
    g2 = to_gray(I2) * 255.0
    if g1.shape != g2.shape:
        raise ShapeError(f"image sizes differ: {g1.shape} vs {g2.shape}")
    p1 = _pyramid(_smooth(g1, cfg.sigma), cfg)
    p2 = _pyramid(_smooth(g2, cfg.sigma), cfg)
    u = np.zeros(p1[0].shape)
    v = np.zeros(p1[0].shape)
    for level, (a, b) in enumerate(zip(p1, p2)):
        if u.shape != a.shape:
            sy = a.shape[0] / u.shape[0]
            sx = a.shape[1] / u.shape[1]
            u = resize_bilinear(u, a.shape[1], a.shape[0]) * sx
            v = resize_bilinear(v, a.shape[1], a.shape[0]) * sy
        u, v = _solve_level(a, b, u, v, cfg)
    return np.stack([u, v], axis=-1)


def apply_mask(flow: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep flow on structure pixels, zero elsewhere."""
    flow = np.asarray(flow, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if flow.shape[:2] != mask.shape:
        raise ShapeError(f"flow {flow.shape[:2]} and mask {mask.shape} differ")
    return np.where(mask[..., None], flow, 0.0)


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel, 0] = np.broadcast_to(r, h.shape)[sel]
        rgb[sel, 1] = np.broadcast_to(g, h.shape)[sel]
        rgb[sel, 2] = np.broadcast_to(b, h.shape)[sel]
    return rgb


def flow_hue(flow: np.ndarray) -> np.ndarray:
    """Direction as hue in [0, 1)."""
    ang = np.arctan2(flow[..., 1], flow[..., 0])
    return np.mod(ang, 2 * np.pi) / (2 * np.pi)


def flow_to_color(flow: np.ndarray, max_mag: float) -> np.ndarray:
    """Color wheel: hue encodes direction, saturation encodes magnitude."""
    if not max_mag > 0:
        raise ConfigError("max_mag must be positive", "max_mag")
    flow = np.asarray(flow, dtype=float)
    mag = np.hypot(flow[..., 0], flow[..., 1])
    sat = np.clip(mag / max_mag, 0.0, 1.0)
    return _hsv_to_rgb(flow_hue(flow), sat, np.ones_like(sat))


def write_flo(path, flow: np.ndarray) -> None:
    """Middlebury ``.flo``: magic, int32 width, int32 height, float32 (u, v) pairs."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError("flow must have shape (height, width, 2)")
    h, w = flow.shape[:2]
    payload = FLO_MAGIC + struct.pack("<ii", w, h) + flow.astype("<f4").tobytes(order="C")
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_flo(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: missing PIEH magic")
    w, h = struct.unpack("<ii", data[4:12])
    if w < 0 or h < 0 or len(data) != 12 + 8 * w * h:
        raise FormatError(f"{path}: size does not match header {w}x{h}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2).copy()
