"""Desk-scale multi-view video diffusion policy.

Colored point clouds are rendered into 3D-aware multi-view RGB images and
end-effector heatmaps, a view-attentive video diffusion transformer predicts
future multi-view videos, and predictions are decoded into executable action
chunks, optionally behind a human approval gate.
"""

__version__ = "0.1.0"
