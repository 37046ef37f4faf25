"""Synthetic corpus of (masked flow, section offsets) pairs.

Each sample draws ``H`` uniformly in ``[-bound, bound]``, renders the
deformed frame, computes flow from the undeformed render and masks it with
the undeformed silhouette. Sample ``i`` uses its own seed derived from the
dataset seed, so samples can be generated in any order or in parallel.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, StorageError
from .flow import FlowSolverConfig, apply_mask, dense_flow, read_flo, write_flo
from .model import FrameConfig
from .render import Camera, scaled_camera, write_pnm
from .scene import Scene


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 20000
    bound: float = 0.025
    test_fraction: float = 0.2
    seed: int = 0
    resolution: float = 1.0  # multiplies the camera pixel resolution
    pad_multiple: int = 64
    frame: FrameConfig = field(default_factory=FrameConfig)
    camera: Camera = field(default_factory=Camera)
    flow: FlowSolverConfig = field(default_factory=FlowSolverConfig)

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("sample count must be at least 1", "count")
        if not self.bound > 0:
            raise ConfigError("H bound must be positive", "bound")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test fraction must lie in [0, 1)", "test_fraction")
        if not self.resolution > 0:
            raise ConfigError("resolution factor must be positive", "resolution")

    def scene(self) -> Scene:
        camera = self.camera if self.resolution == 1 else scaled_camera(self.camera, self.resolution)
        return Scene.from_config(self.frame, camera, self.pad_multiple)


@dataclass
class Sample:
    K: np.ndarray
    H: np.ndarray
    seed: int
    index: int = 0


@dataclass(frozen=True)
class ManifestRow:
    index: int
    flow_path: str
    seed: int
    H: tuple[float, ...]


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def draw_pose(rng: np.random.Generator, n: int, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, n)


def draw_labels(cfg: DatasetConfig, n_sections: int, indices=None) -> np.ndarray:
    """Labels of the given sample indices without rendering anything."""
    indices = range(cfg.count) if indices is None else indices
    return np.array([draw_pose(np.random.default_rng(sample_seed(cfg.seed, i)), n_sections,
                               cfg.bound) for i in indices])


def generate_sample(rng: np.random.Generator, cfg: DatasetConfig, scene: Scene | None = None,
                    H=None) -> Sample:
    """One masked flow and its label. ``H`` overrides the random draw."""
    scene = scene or cfg.scene()
    if H is None:
        H = draw_pose(rng, scene.layout.n, cfg.bound)
    H = np.asarray(H, dtype=float)
    K = apply_mask(dense_flow(scene.reference_image, scene.render(H), cfg.flow), scene.mask)
    return Sample(K, H, seed=-1)


_WORKER_SCENE: dict = {}


def _make_sample(cfg: DatasetConfig, index: int) -> Sample:
    scene = _WORKER_SCENE.get(cfg)
    if scene is None:
        _WORKER_SCENE.clear()
        scene = _WORKER_SCENE[cfg] = cfg.scene()
    seed = sample_seed(cfg.seed, index)
    s = generate_sample(np.random.default_rng(seed), cfg, scene)
    s.seed, s.index = seed, index
    return s


def _samples(cfg: DatasetConfig, workers: int):
    if workers <= 1:
        for i in range(cfg.count):
            yield _make_sample(cfg, i)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_make_sample, [cfg] * cfg.count, range(cfg.count), chunksize=8)


def manifest_csv(rows: list[ManifestRow]) -> str:
    n = len(rows[0].H) if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "flow_path", "seed"] + [f"H_{i + 1}" for i in range(n)])
    for r in rows:
        w.writerow([r.index, r.flow_path, r.seed] + [repr(float(v)) for v in r.H])
    return buf.getvalue()


def read_manifest(path) -> list[ManifestRow]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["index", "flow_path", "seed"]:
                raise StorageError(f"{path}: unexpected manifest header {header[:3]}")
            return [ManifestRow(int(r[0]), r[1], int(r[2]), tuple(float(v) for v in r[3:]))
                    for r in reader if r]
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def generate_dataset(cfg: DatasetConfig, out_dir, workers: int = 1) -> list[ManifestRow]:
    """Write ``flows/NNNNNN.flo``, ``reference.ppm``, ``mask.pgm`` and ``manifest.csv``."""
    out = Path(out_dir)
    try:
        (out / "flows").mkdir(parents=True, exist_ok=True)
        scene = cfg.scene()
        write_pnm(out / "reference.ppm", scene.reference_image)
        write_pnm(out / "mask.pgm", scene.mask)
        rows = []
        for s in _samples(cfg, workers):
            rel = f"flows/{s.index:06d}.flo"
            write_flo(out / rel, s.K)
            rows.append(ManifestRow(s.index, rel, s.seed, tuple(float(v) for v in s.H)))
        (out / "manifest.csv").write_text(manifest_csv(rows))
    except OSError as exc:
        if isinstance(exc, StorageError):
            raise
        raise StorageError(f"cannot write dataset to {out}: {exc}") from exc
    return rows


def split(rows: list[ManifestRow], fraction: float, seed: int = 0):
    """Seeded shuffle, then the last ``round(fraction * n)`` rows form the test set."""
    if not 0 <= fraction < 1:
        raise ConfigError("test fraction must lie in [0, 1)", "test_fraction")
    order = np.random.default_rng(seed).permutation(len(rows))
    n_test = int(round(fraction * len(rows)))
    n_train = len(rows) - n_test
    train = [rows[i] for i in order[:n_train]]
    test = [rows[i] for i in order[n_train:]]
    return train, test


def load_arrays(rows: list[ManifestRow], root) -> tuple[np.ndarray, np.ndarray]:
    """Stack flows and labels of manifest rows as float64 arrays."""
    root = Path(root)
    if not rows:
        return np.zeros((0, 0, 0, 2)), np.zeros((0, 0))
    K = np.stack([read_flo(root / r.flow_path) for r in rows]).astype(float)
    H = np.array([r.H for r in rows], dtype=float)
    return K, H
