"""limescope: superpixel perturbation explanations and black-box classifier
evaluation for image models.

The package is organized around small, pure modules:

- image: immutable float rasters, PNG/PPM decoding, bilinear resize
- segmentation: SLIC superpixels, the interpretable units
- surrogate: perturbation sampling and the sparse weighted linear fit
- bridge: black-box classifier access (in-process, subprocess, HTTP)
- metrics: confusion-matrix metrics, ROC-AUC, report assembly
- dataset: GTSRB-style ingestion and the stratified split
- pipeline: overlays, stability re-runs, batch explanation
- cli: the `limescope` command
"""

__version__ = "0.1.0"
