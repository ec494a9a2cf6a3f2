"""Single-image inverse rendering and physically based editing.

Recovers an environment map and refined material maps from one image plus
neural-predictor G-buffers by progressive differentiable Monte Carlo
rendering, then resolves masked edits (material changes, recoloring,
relighting, object insertion, transparency) into re-rendered images.
"""

__version__ = "0.1.0"
