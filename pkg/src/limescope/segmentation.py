"""Superpixel segmentation: the interpretable units perturbed by the explainer.

SLIC clustering in (L, a, b, x, y) space with grid-initialized centers,
followed by a connectivity-enforcement pass. Everything is deterministic:
fixed center iteration order, ties broken toward the lower index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import PIL.Image

from .errors import InvalidParam, IoError
from .image import Image

__all__ = [
    "Segmentation",
    "rgb_to_lab",
    "slic_segment",
    "segment_adjacency",
    "save_segmentation",
    "load_segmentation",
]


@dataclass(frozen=True)
class Segmentation:
    """Per-pixel superpixel label map partitioning an image into k regions.

    Invariants: labels in [0, num_segments), every label occurs, and each
    label's pixel set is 4-connected.
    """

    labels: np.ndarray  # (H, W) int32
    num_segments: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        if lab.ndim != 2:
            raise InvalidParam(f"labels must be 2-D, got shape {lab.shape}")
        counts = np.bincount(lab.ravel(), minlength=self.num_segments)
        if lab.min() < 0 or lab.max() >= self.num_segments or np.any(counts == 0):
            raise InvalidParam(
                f"labels must cover exactly [0, {self.num_segments}) with every label present"
            )
        object.__setattr__(self, "labels", lab)
        lab.flags.writeable = False

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


# sRGB -> XYZ under the D65 illuminant (IEC 61966-2-1 primaries).
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(pixels: np.ndarray) -> np.ndarray:
    """Convert (..., 3) sRGB in [0,1] to CIE Lab (D65 reference white)."""
    rgb = np.asarray(pixels, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _D65_WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _grid_centers(height: int, width: int, target: int) -> np.ndarray:
    # ny * nx ~= target with row/column counts proportional to the aspect
    # ratio. Centers sit at the continuous grid-cell centroids (half-pixel
    # coordinates), which are the stable fixed points of the update step.
    ny = max(1, min(height, round(np.sqrt(target * height / width))))
    nx = max(1, min(width, round(target / ny)))
    ys = (np.arange(ny) + 0.5) * height / ny - 0.5
    xs = (np.arange(nx) + 0.5) * width / nx - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _connected_components(labels: np.ndarray):
    """Raster-order 4-connected components.

    Returns (comp: (H,W) int32, sizes, source_label, adjacency) where
    adjacency maps each component to the set of touching components.
    """
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    sizes: list[int] = []
    source: list[int] = []
    adjacency: list[set[int]] = []
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            cid = len(sizes)
            lab = labels[sy, sx]
            stack = [(sy, sx)]
            comp[sy, sx] = cid
            count = 0
            neigh: set[int] = set()
            while stack:
                y, x = stack.pop()
                count += 1
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w:
                        c = comp[ny, nx]
                        if c == -1 and labels[ny, nx] == lab:
                            comp[ny, nx] = cid
                            stack.append((ny, nx))
                        elif c >= 0 and c != cid:
                            neigh.add(c)
                            adjacency[c].add(cid)
            sizes.append(count)
            source.append(int(lab))
            adjacency.append(neigh)
    return comp, sizes, source, adjacency


def _enforce_connectivity(labels: np.ndarray, min_size: float) -> tuple[np.ndarray, int]:
    """Resolve fragmented cluster assignments into a valid segmentation.

    Each cluster's largest connected component is its body and always
    survives. Remaining fragments are orphans: those below min_size merge
    into their largest adjacent region, larger ones become segments of their
    own. All ties break toward the lower component id (raster discovery
    order), keeping the pass deterministic.
    """
    comp, sizes, source, adjacency = _connected_components(labels)
    n = len(sizes)
    body: dict[int, int] = {}  # cluster label -> its largest component
    for cid in range(n):
        lab = source[cid]
        if lab not in body or sizes[cid] > sizes[body[lab]]:
            body[lab] = cid
    protected = set(body.values())

    parent = list(range(n))
    size = list(sizes)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for cid in range(n):
        root = find(cid)
        if root in protected or size[root] >= min_size:
            continue
        best = -1
        for nb in sorted(adjacency[cid]):
            nb_root = find(nb)
            if nb_root == root:
                continue
            if best == -1 or size[nb_root] > size[best]:
                best = nb_root
        if best == -1:
            continue  # nothing adjacent outside this region
        parent[root] = best
        size[best] += size[root]

    # Renumber roots by first raster occurrence.
    remap: dict[int, int] = {}
    out = np.empty_like(comp)
    flat_comp = comp.ravel()
    flat_out = out.ravel()
    for i in range(flat_comp.size):
        root = find(int(flat_comp[i]))
        if root not in remap:
            remap[root] = len(remap)
        flat_out[i] = remap[root]
    return out, len(remap)


def slic_segment(
    img: Image,
    target_segments: int = 50,
    compactness: float = 10.0,
    max_iter: int = 10,
    seed: int = 0,
) -> Segmentation:
    """Partition an image into roughly target_segments superpixels.

    Pixels are clustered in (L, a, b, x, y) space: grid-initialized centers
    at spacing S = sqrt(H*W / target_segments), distance
    d^2 = d_color^2 + (compactness / S)^2 * d_xy^2, a fixed number of
    assignment/update sweeps, then a connectivity pass that merges fragments
    below 25% of S^2 pixels into their largest adjacent cluster.

    The seed does not influence the result (the algorithm has no random
    step); it is accepted and recorded so sidecar metadata stays uniform.
    """
    h, w = img.height, img.width
    if target_segments < 1 or target_segments > h * w:
        raise InvalidParam(
            f"target_segments must be in [1, {h * w}], got {target_segments}"
        )
    if compactness <= 0:
        raise InvalidParam(f"compactness must be > 0, got {compactness}")
    if max_iter < 1:
        raise InvalidParam(f"max_iter must be >= 1, got {max_iter}")

    spacing = np.sqrt(h * w / target_segments)
    ratio2 = (compactness / spacing) ** 2
    lab = rgb_to_lab(img.pixels)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)

    init = _grid_centers(h, w, target_segments)
    # Color of each initial center comes from its nearest pixel.
    iy = np.clip((init[:, 0] + 0.5).astype(np.intp), 0, h - 1)
    ix = np.clip((init[:, 1] + 0.5).astype(np.intp), 0, w - 1)
    centers = np.empty((init.shape[0], 5))
    centers[:, :3] = lab[iy, ix]
    centers[:, 3] = init[:, 0]
    centers[:, 4] = init[:, 1]
    k = centers.shape[0]
    win = int(np.ceil(2.0 * spacing))

    labels = np.zeros((h, w), dtype=np.int32)
    for _ in range(max_iter):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(k):
            cy, cx = centers[ci, 3], centers[ci, 4]
            y0, y1 = max(0, int(cy) - win), min(h, int(cy) + win + 1)
            x0, x1 = max(0, int(cx) - win), min(w, int(cx) + win + 1)
            patch = lab[y0:y1, x0:x1]
            dc2 = ((patch - centers[ci, :3]) ** 2).sum(axis=2)
            dy2 = (ys[y0:y1, None] - cy) ** 2
            dx2 = (xs[None, x0:x1] - cx) ** 2
            d2 = dc2 + ratio2 * (dy2 + dx2)
            better = d2 < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1] = np.where(better, d2, best[y0:y1, x0:x1])
            labels[y0:y1, x0:x1] = np.where(better, ci, labels[y0:y1, x0:x1])
        if np.any(labels < 0):
            # Pixels outside every search window: assign by global distance.
            miss = np.argwhere(labels < 0)
            for y, x in miss:
                dc2 = ((centers[:, :3] - lab[y, x]) ** 2).sum(axis=1)
                d2 = dc2 + ratio2 * ((centers[:, 3] - y) ** 2 + (centers[:, 4] - x) ** 2)
                labels[y, x] = int(np.argmin(d2))
        # Center update: mean feature vector per cluster; empty clusters keep
        # their previous position.
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        feats = np.concatenate(
            [
                lab.reshape(-1, 3),
                np.repeat(ys, w)[:, None],
                np.tile(xs, h)[:, None],
            ],
            axis=1,
        )
        sums = np.zeros((k, 5))
        for d in range(5):
            sums[:, d] = np.bincount(flat, weights=feats[:, d], minlength=k)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    min_size = 0.25 * spacing * spacing
    final, num = _enforce_connectivity(labels, min_size)
    return Segmentation(final, num)


def segment_adjacency(seg: Segmentation) -> set[tuple[int, int]]:
    """Pairs (a, b), a < b, of labels with 4-adjacent pixels."""
    lab = seg.labels
    pairs: set[tuple[int, int]] = set()
    horiz = lab[:, :-1] != lab[:, 1:]
    for a, b in zip(lab[:, :-1][horiz].ravel(), lab[:, 1:][horiz].ravel()):
        pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    vert = lab[:-1, :] != lab[1:, :]
    for a, b in zip(lab[:-1, :][vert].ravel(), lab[1:, :][vert].ravel()):
        pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    return pairs


def save_segmentation(seg: Segmentation, png_path, json_path, parameters: dict, seed: int) -> None:
    """Write the label map as a grayscale PNG plus a JSON sidecar.

    8-bit grayscale when all labels fit, 16-bit otherwise.
    """
    labels = seg.labels
    if seg.num_segments <= 256:
        im = PIL.Image.fromarray(labels.astype(np.uint8), mode="L")
    else:
        im = PIL.Image.fromarray(labels.astype(np.int32), mode="I")
    im.save(Path(png_path), format="PNG")
    sidecar = {
        "num_segments": seg.num_segments,
        "parameters": parameters,
        "seed": seed,
    }
    Path(json_path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_segmentation(png_path, json_path) -> tuple[Segmentation, dict]:
    """Read a label PNG plus sidecar written by save_segmentation."""
    try:
        with PIL.Image.open(Path(png_path)) as im:
            labels = np.asarray(im).astype(np.int32)
        sidecar = json.loads(Path(json_path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read segmentation: {exc}") from exc
    return Segmentation(labels, int(sidecar["num_segments"])), sidecar
