"""labscan: benchtop lab-automation runtime with simulated instruments.

A dual-layer action-server protocol, behavior-tree scan orchestration,
simulated gantry / LIBS spectrometer / depth camera devices, pinhole-camera
coordinate math, and an automated spectral data-reduction pipeline that
turns dense scans into per-element maps.
"""

__version__ = "0.1.0"
