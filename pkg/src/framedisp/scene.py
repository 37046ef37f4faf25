"""A frame mesh seen through a fixed camera, with padded outputs.

Every image, mask and flow field handed to the estimators has its height
padded with zero rows to a multiple of ``pad_multiple``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import FrameConfig, FrameMesh, build_frame_mesh, deform_mesh
from .render import Camera, RenderBuffers, pad_to_multiple, rasterize, render_buffers


@dataclass(eq=False)
class Scene:
    mesh: FrameMesh = field(default_factory=build_frame_mesh)
    camera: Camera = field(default_factory=Camera)
    pad_multiple: int = 64

    @classmethod
    def from_config(cls, frame: FrameConfig, camera: Camera, pad_multiple: int = 64,
                    layout=None) -> "Scene":
        return cls(build_frame_mesh(frame, layout), camera, pad_multiple)

    @property
    def layout(self):
        return self.mesh.layout

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self.camera.shape
        return (h + (-h) % self.pad_multiple, w)

    @cached_property
    def reference(self) -> RenderBuffers:
        return render_buffers(self.mesh, self.camera)

    @cached_property
    def reference_image(self) -> np.ndarray:
        return self.pad(self.reference.image)

    @cached_property
    def mask(self) -> np.ndarray:
        return self.pad(self.reference.coverage)

    def pad(self, img: np.ndarray) -> np.ndarray:
        return pad_to_multiple(img, self.pad_multiple)

    def render(self, H=None) -> np.ndarray:
        if H is None or not np.any(np.asarray(H, dtype=float)):
            return self.reference_image.copy()
        return self.pad(rasterize(deform_mesh(self.mesh, H), self.camera))

    @cached_property
    def basis(self):
        from .pose import build_flow_basis
        return build_flow_basis(self.mesh, self.camera).padded(self.pad_multiple)
