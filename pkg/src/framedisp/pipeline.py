"""Frame sequence to per-frame section offsets.

Every analyzed frame is compared with the single initial frame; frames
before the initial frame or after the last analyzed frame are taken as
undeformed and get ``H = 0``.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, IngestionError, ShapeError
from .flow import FlowSolverConfig, apply_mask, dense_flow
from .nn import Regressor, predict
from .pose import FlowBasis, estimate_lsq
from .render import pad_to_multiple, read_pnm
from .scene import Scene

FrameSource = Union[str, Path, np.ndarray]

# Initial and last analyzed frame of the three shaking-table videos.
VIDEO_WINDOWS = {"video1": (0, 5375), "video2": (500, 1600), "video3": (375, 7721)}


@dataclass(frozen=True)
class SequenceSpec:
    frames: Sequence[FrameSource]
    initial: int = 0
    last: int | None = None
    fps: float = 50.0

    def __post_init__(self):
        n = len(self.frames)
        last = n - 1 if self.last is None else self.last
        object.__setattr__(self, "last", last)
        if not 0 <= self.initial < last < n:
            raise ConfigError(f"need 0 <= initial < last < frame count, got "
                              f"{self.initial}, {last}, {n}", "initial")
        if not self.fps > 0:
            raise ConfigError("frames per second must be positive", "fps")


def list_frames(directory) -> list[Path]:
    """Numbered PGM/PPM files of a directory, ordered by the last number in their name.

    Unnumbered images such as ``mask.pgm`` are not frames and are skipped.
    """
    keyed = []
    for p in Path(directory).iterdir():
        nums = re.findall(r"\d+", p.stem)
        if p.suffix.lower() in (".pgm", ".ppm", ".pnm") and nums:
            keyed.append(((int(nums[-1]), p.name), p))
    return [p for _, p in sorted(keyed)]


def load_frame(source: FrameSource, index: int, shape: tuple[int, int] | None = None,
               pad_multiple: int = 1) -> np.ndarray:
    if isinstance(source, np.ndarray):
        img = np.asarray(source, dtype=float)
    else:
        try:
            img = read_pnm(source)
        except Exception as exc:
            raise IngestionError(f"frame {index} ({source}) is unreadable: {exc}", index) from exc
    img = pad_to_multiple(img, pad_multiple)
    if shape is not None and img.shape[:2] != tuple(shape):
        raise IngestionError(f"frame {index} has size {img.shape[:2]}, expected {shape}", index)
    return img


def run_sequence(spec: SequenceSpec, scene: Scene, estimator: str | Regressor = "lsq",
                 flow_cfg: FlowSolverConfig | None = None, mask: np.ndarray | None = None,
                 basis: FlowBasis | None = None, workers: int = 1) -> np.ndarray:
    """Offsets ``(frame count, N)`` for every frame of the sequence.

    ``estimator`` is ``"lsq"`` (flow basis of ``scene``) or a trained
    :class:`Regressor`. ``mask`` defaults to the silhouette of the
    undeformed ``scene``; pass a loaded mask for real footage.
    """
    flow_cfg = flow_cfg or FlowSolverConfig()
    shape = scene.shape
    mask = scene.mask if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        mask = pad_to_multiple(mask, scene.pad_multiple)
    if mask.shape != shape:
        raise ShapeError(f"mask size {mask.shape} does not match scene {shape}")
    if isinstance(estimator, str):
        if estimator != "lsq":
            raise ConfigError(f"unknown estimator {estimator!r}", "estimator")
        basis = basis or scene.basis
        if not np.array_equal(basis.mask, mask):
            basis = FlowBasis(basis.fields * mask[None, ..., None], mask)

        def estimate(K):
            return estimate_lsq(K, basis)
    else:
        def estimate(K):
            return predict(estimator, K)

    ref = load_frame(spec.frames[spec.initial], spec.initial, shape, scene.pad_multiple)

    def one(t):
        if t == spec.initial:
            cur = ref
        else:
            cur = load_frame(spec.frames[t], t, shape, scene.pad_multiple)
        return estimate(apply_mask(dense_flow(ref, cur, flow_cfg), mask))

    out = np.zeros((len(spec.frames), scene.layout.n))
    window = range(spec.initial, spec.last + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, window))
    else:
        results = [one(t) for t in window]
    out[spec.initial:spec.last + 1] = results
    return out


def poses_csv(H: np.ndarray, fps: float) -> str:
    n = H.shape[1]
    lines = ["frame,t_seconds," + ",".join(f"H_{i + 1}" for i in range(n))]
    for t, row in enumerate(H):
        lines.append(f"{t},{t / fps:.6f}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def read_poses_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Times (s) and offsets from a pose CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1], data[:, 2:]
