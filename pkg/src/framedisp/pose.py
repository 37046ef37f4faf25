"""Pose recovery from a masked flow field by linear least squares.

Image displacement is linear in the section offsets ``H`` (the spline is
linear in its nodal values and the lateral motion projects linearly), so a
flow field is modelled as ``sum_i H_i * B_i`` with one basis field per
control section.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ShapeError, SingularBasisError
from .model import ControlSectionLayout, FrameMesh, section_weights
from .render import Camera, pad_to_multiple, render_buffers


@dataclass(frozen=True)
class FlowBasis:
    fields: np.ndarray  # (N, height, width, 2)
    mask: np.ndarray  # (height, width) bool

    @property
    def n(self) -> int:
        return self.fields.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def synthesize(self, H) -> np.ndarray:
        """Flow field ``sum_i H_i B_i``."""
        H = np.asarray(H, dtype=float).ravel()
        if H.size != self.n:
            raise ShapeError(f"pose has {H.size} offsets, basis has {self.n}")
        return np.tensordot(H, self.fields, axes=1)

    def design_matrix(self) -> np.ndarray:
        """Rows are (u, v) of mask pixels, columns are sections."""
        sel = self.fields[:, self.mask, :]  # (N, P, 2)
        return np.concatenate([sel[..., 0], sel[..., 1]], axis=1).T

    def padded(self, m: int) -> "FlowBasis":
        fields = np.stack([pad_to_multiple(f, m) for f in self.fields])
        return FlowBasis(fields, pad_to_multiple(self.mask, m))


def build_flow_basis(mesh: FrameMesh, camera: Camera, layout: ControlSectionLayout | None = None,
                     eps: float = 1e-3) -> FlowBasis:
    """Projected image motion per unit offset of each section.

    For each covered pixel the visible surface point of the undeformed mesh
    is displaced by ``eps`` of one section and both positions are projected;
    the difference divided by ``eps`` is the basis flow at that pixel.
    """
    layout = layout or mesh.layout
    buf = render_buffers(mesh, camera)
    mask = buf.coverage
    pts = buf.points[mask]  # (P, 3)
    h = layout.total_height
    weights = section_weights(np.clip(pts[:, 1] / h, 0.0, 1.0), layout)  # (P, N)
    base = camera.project(pts)
    fields = np.zeros((layout.n,) + mask.shape + (2,))
    for i in range(layout.n):
        moved = pts.copy()
        moved[:, 2] += eps * weights[:, i] * h
        d = (camera.project(moved) - base) / eps
        fields[i][mask, 0] = d[:, 1]
        fields[i][mask, 1] = d[:, 0]
    return FlowBasis(fields, mask)


def estimate_lsq(K: np.ndarray, basis: FlowBasis, rtol: float = 1e-10) -> np.ndarray:
    """Offsets minimizing the squared flow residual over mask pixels.

    Solved by column-pivoted QR. A basis whose numerical rank is below the
    section count raises :class:`SingularBasisError` listing the sections
    that could not be resolved.
    """
    K = np.asarray(K, dtype=float)
    if K.shape[:2] != basis.shape or K.shape[-1] != 2:
        raise ShapeError(f"flow shape {K.shape} does not match basis {basis.shape}")
    A = basis.design_matrix()
    k = np.concatenate([K[basis.mask, 0], K[basis.mask, 1]])
    if A.shape[0] < basis.n:
        raise SingularBasisError("fewer mask pixels than sections", list(range(1, basis.n + 1)))
    Q, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * max(diag[0], np.finfo(float).tiny)))
    if rank < basis.n:
        bad = sorted(int(j) + 1 for j in perm[rank:])
        raise SingularBasisError(f"flow basis is rank deficient; sections {bad} are not "
                                 "resolvable from this view", bad)
    z = scipy.linalg.solve_triangular(R, Q.T @ k)
    H = np.empty(basis.n)
    H[perm] = z
    return H
