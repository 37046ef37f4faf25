"""Flat-color z-buffered rasterizer, silhouette masks and image utilities.

Images are float arrays in [0, 1], shaped ``(height, width)`` for grayscale
or ``(height, width, 3)`` for RGB. Pixel ``(r, c)`` has its center at
image coordinates ``(r, c)``; rows grow downward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError, FormatError, ShapeError, StorageError
from .model import MEMBER_BEAM, MEMBER_COLUMN, MEMBER_SLAB, FrameMesh

BACKGROUND = (0.0, 0.0, 0.0)

# Luminances stay well separated from each other and from the background.
_STORY_COLORS = np.array([
    [0.85, 0.35, 0.30],
    [0.30, 0.75, 0.45],
    [0.35, 0.45, 0.90],
    [0.90, 0.80, 0.30],
    [0.70, 0.40, 0.80],
    [0.40, 0.80, 0.85],
])
_MEMBER_SHADE = {MEMBER_COLUMN: 1.0, MEMBER_BEAM: 0.7, MEMBER_SLAB: 0.5}
_BAND_SHADE = 0.7


@dataclass(frozen=True)
class Camera:
    """Orthographic or pinhole camera.

    ``scale`` is meters per pixel (orthographic), ``focal`` is in pixels
    (pinhole). The default looks along +x so lateral ``z`` motion maps to
    horizontal image motion and height maps to rows.
    """

    kind: str = "orthographic"
    position: tuple[float, float, float] = (-10.0, 3.2475, 1.0)
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    width: int = 384
    height: int = 683
    scale: float = 0.01
    focal: float = 800.0

    def __post_init__(self):
        if self.kind not in ("orthographic", "pinhole"):
            raise ConfigError(f"unknown projection {self.kind!r}", "kind")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image dimensions must be positive", "width")
        if self.kind == "orthographic" and not self.scale > 0:
            raise ConfigError("orthographic scale must be positive", "scale")
        if self.kind == "pinhole" and not self.focal > 0:
            raise ConfigError("focal length must be positive", "focal")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def basis_vectors(self):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        right = np.cross(d, np.asarray(self.up, dtype=float))
        n = np.linalg.norm(right)
        if n == 0:
            raise ConfigError("camera up vector is parallel to the view direction", "up")
        right /= n
        up = np.cross(right, d)
        return right, up, d

    def project(self, points) -> np.ndarray:
        """World points ``(..., 3)`` to ``(..., 3)`` of (row, col, depth)."""
        p = np.asarray(points, dtype=float) - np.asarray(self.position, dtype=float)
        right, up, d = self.basis_vectors()
        X, Y, Z = p @ right, p @ up, p @ d
        cr, cc = (self.height - 1) / 2.0, (self.width - 1) / 2.0
        if self.kind == "orthographic":
            return np.stack([cr - Y / self.scale, cc + X / self.scale, Z], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.stack([cr - self.focal * Y / Z, cc + self.focal * X / Z, Z], axis=-1)


def scaled_camera(camera: Camera, factor: float) -> Camera:
    """Same view at ``factor`` times the pixel resolution."""
    from dataclasses import replace
    return replace(camera, width=max(1, round(camera.width * factor)),
                   height=max(1, round(camera.height * factor)),
                   scale=camera.scale / factor, focal=camera.focal * factor)


def default_palette(mesh: FrameMesh) -> np.ndarray:
    """Per-face RGB colors: one hue per story, shaded by member kind and band."""
    groups = mesh.face_groups
    colors = _STORY_COLORS[groups[:, 1] % len(_STORY_COLORS)].copy()
    shade = np.array([_MEMBER_SHADE.get(int(k), 1.0) for k in groups[:, 0]])
    shade = shade * np.where(groups[:, 2] % 2 == 1, _BAND_SHADE, 1.0)
    return colors * shade[:, None]


@dataclass
class RenderBuffers:
    image: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), inf on background
    face: np.ndarray  # (H, W), -1 on background
    points: np.ndarray  # (H, W, 3) world point seen at each pixel, nan on background
    background: tuple = field(default=BACKGROUND)

    @property
    def coverage(self) -> np.ndarray:
        return self.face >= 0


def _front_facing(mesh: FrameMesh, camera: Camera) -> np.ndarray:
    """Faces whose outward normal points toward the camera.

    Members are closed boxes, so back faces are always hidden and culling
    them changes neither the image nor the coverage.
    """
    v = mesh.vertices
    f = mesh.faces
    normal = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    if camera.kind == "orthographic":
        view = np.broadcast_to(camera.basis_vectors()[2], normal.shape)
    else:
        view = v[f].mean(axis=1) - np.asarray(camera.position, dtype=float)
    return np.einsum("ij,ij->i", normal, view) < 0


def render_buffers(mesh: FrameMesh, camera: Camera, palette=None,
                   background=BACKGROUND) -> RenderBuffers:
    """Z-buffered rasterization keeping depth, face id and world point per pixel."""
    H, W = camera.shape
    image = np.empty((H, W, 3))
    image[:] = background
    depth = np.full((H, W), np.inf)
    face_id = np.full((H, W), -1, dtype=np.int64)
    points = np.full((H, W, 3), np.nan)
    if len(mesh.faces) == 0:
        return RenderBuffers(image, depth, face_id, points, tuple(background))
    if palette is None:
        palette = default_palette(mesh)
    palette = np.asarray(palette, dtype=float)
    if palette.shape != (len(mesh.faces), 3):
        raise ShapeError("palette must hold one RGB color per face")

    proj = camera.project(mesh.vertices)
    perspective = camera.kind == "pinhole"
    front = _front_facing(mesh, camera)
    for fi, (ia, ib, ic) in enumerate(mesh.faces):
        if not front[fi]:
            continue
        tri = proj[[ia, ib, ic]]
        if perspective and np.any(~(tri[:, 2] > 1e-6)):
            continue
        r, c, z = tri[:, 0], tri[:, 1], tri[:, 2]
        area = (c[1] - c[0]) * (r[2] - r[0]) - (c[2] - c[0]) * (r[1] - r[0])
        if abs(area) < 1e-12:
            continue
        r0 = max(int(np.ceil(r.min())), 0)
        r1 = min(int(np.floor(r.max())), H - 1)
        c0 = max(int(np.ceil(c.min())), 0)
        c1 = min(int(np.floor(c.max())), W - 1)
        if r0 > r1 or c0 > c1:
            continue
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1].astype(float)
        # barycentric weights from edge functions
        w0 = ((c[2] - c[1]) * (rr - r[1]) - (r[2] - r[1]) * (cc - c[1])) / area
        w1 = ((c[0] - c[2]) * (rr - r[2]) - (r[0] - r[2]) * (cc - c[2])) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        if perspective:
            iz = w0 / z[0] + w1 / z[1] + w2 / z[2]
            zz = 1.0 / iz
            p0, p1, p2 = w0 / z[0] * zz, w1 / z[1] * zz, w2 / z[2] * zz
        else:
            zz = w0 * z[0] + w1 * z[1] + w2 * z[2]
            p0, p1, p2 = w0, w1, w2
        win_d = depth[r0:r1 + 1, c0:c1 + 1]
        hit = inside & (zz < win_d)
        if not hit.any():
            continue
        win_d[hit] = zz[hit]
        face_id[r0:r1 + 1, c0:c1 + 1][hit] = fi
        image[r0:r1 + 1, c0:c1 + 1][hit] = palette[fi]
        va, vb, vc = mesh.vertices[[ia, ib, ic]]
        world = p0[hit, None] * va + p1[hit, None] * vb + p2[hit, None] * vc
        points[r0:r1 + 1, c0:c1 + 1][hit] = world
    return RenderBuffers(image, depth, face_id, points, tuple(background))


def rasterize(mesh: FrameMesh, camera: Camera, palette=None, background=BACKGROUND) -> np.ndarray:
    return render_buffers(mesh, camera, palette, background).image


def silhouette_mask(mesh: FrameMesh, camera: Camera) -> np.ndarray:
    """Boolean mask, true where any face covers the pixel center."""
    if len(mesh.faces) == 0:
        return np.zeros(camera.shape, dtype=bool)
    return render_buffers(mesh, camera).coverage


def pad_to_multiple(img: np.ndarray, m: int) -> np.ndarray:
    """Append zero rows until the height is a multiple of ``m``."""
    if m < 1:
        raise ConfigError("padding multiple must be at least 1", "pad_multiple")
    img = np.asarray(img)
    extra = (-img.shape[0]) % m
    if extra == 0:
        return img.copy()
    pad = [(0, extra)] + [(0, 0)] * (img.ndim - 1)
    return np.pad(img, pad, mode="constant", constant_values=0)


def resize_bilinear(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment and edge clamping."""
    if new_w <= 0 or new_h <= 0:
        raise ConfigError("target dimensions must be positive", "size")
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if (h, w) == (new_h, new_w):
        return img.copy()
    ys = np.clip((np.arange(new_h) + 0.5) * h / new_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(new_w) + 0.5) * w / new_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luminance (Rec. 601 weights) of an RGB image; grayscale passes through."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def write_pnm(path, img: np.ndarray) -> None:
    """8-bit binary PGM (P5) for 2-D arrays, PPM (P6) for RGB."""
    img = np.asarray(img)
    if img.dtype == bool:
        data = img.astype(np.uint8) * 255
    else:
        data = np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    try:
        PILImage.fromarray(data, mode=mode).save(str(path), format="PPM")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_pnm(path) -> np.ndarray:
    """Read a PGM/PPM file into floats in [0, 1]."""
    try:
        with PILImage.open(str(path)) as im:
            if im.format != "PPM":
                raise FormatError(f"{path} is not a PGM/PPM file")
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            data = np.asarray(im)
    except (OSError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return data.astype(float) / 255.0


def read_mask(path) -> np.ndarray:
    return to_gray(read_pnm(path)) >= 0.5
