"""Vision-based dense displacement estimation for multi-story frames.

Renders a deformable frame model, computes dense optical flow against a
reference frame, masks it to the structure and recovers the normalized
control-section offsets ``H`` from which displacement histories and spectra
are derived.
"""

__version__ = "0.1.0"
