"""Rasterize a block's tensor field and clipped fractures into the 4-channel
surrogate input image.

Image layout: image[row, col, ch] with row = y index (row 0 at the bottom of
the block), col = x index. Channels: k_xx, k_xy, k_yy, cross-section. Matrix
pixels carry the nearest field tensor and cross-section 1; fracture pixels
carry isotropic fracture conductivity (k_xy = 0) and the fracture aperture in
the cross-section channel. Pixel-edge ties round toward the larger index;
overlapping fractures resolve by larger aperture (then lower id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frac_geom import FractureNetwork
from .geometry import Rect, clip_segment, supercover_cells
from .random_field import TensorField


@dataclass
class RasterSample:
    image: np.ndarray                  # (R, R, 4)
    target: np.ndarray | None = None   # (3,) equivalent tensor components
    metadata: dict = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.image.shape[0]

    def matrix_mask(self) -> np.ndarray:
        return self.image[:, :, 3] == 1.0


def rasterize_block(field_: TensorField, network: FractureNetwork | None,
                    block: Rect, resolution: int,
                    metadata: dict | None = None) -> RasterSample:
    """Nearest-cell matrix fill, then one-pixel-wide fracture lines."""
    if resolution < 8:
        raise ValueError("raster resolution must be at least 8")
    r = resolution
    pitch = block.width / r
    if abs(block.height - block.width) > 1e-9 * block.width:
        raise ValueError("raster blocks must be square")

    centers = block.x0 + pitch * (np.arange(r) + 0.5)
    centers_y = block.y0 + pitch * (np.arange(r) + 0.5)
    cx, cy = np.meshgrid(centers, centers_y, indexing="xy")
    tensors = field_.tensor_at(cx, cy)  # (r, r, 2, 2), row-major in y

    image = np.empty((r, r, 4))
    image[:, :, 0] = tensors[:, :, 0, 0]
    image[:, :, 1] = tensors[:, :, 0, 1]
    image[:, :, 2] = tensors[:, :, 1, 1]
    image[:, :, 3] = 1.0

    fracs = sorted(network.fractures, key=lambda f: (f.aperture, -f.id)) \
        if network is not None else []
    for fr in fracs:  # ascending aperture: the widest drawn last wins
        clipped = clip_segment(*fr.endpoints, block)
        if clipped is None:
            continue
        a = (clipped[0] - np.array([block.x0, block.y0])) / pitch
        b = (clipped[1] - np.array([block.x0, block.y0])) / pitch
        cells = supercover_cells(a, b, r, r)
        rows = cells[:, 1]
        cols = cells[:, 0]
        image[rows, cols, 0] = fr.conductivity
        image[rows, cols, 1] = 0.0
        image[rows, cols, 2] = fr.conductivity
        image[rows, cols, 3] = fr.aperture

    return RasterSample(image=image, metadata=dict(metadata or {}))


def save_raster(sample: RasterSample, path):
    """Four float32-LE planes, 3 target floats, one JSON metadata line."""
    path = Path(path)
    with open(path, "wb") as f:
        np.ascontiguousarray(
            sample.image.transpose(2, 0, 1)).astype("<f4").tofile(f)
        target = sample.target if sample.target is not None \
            else np.full(3, np.nan)
        np.asarray(target, dtype="<f4").tofile(f)
        meta = dict(sample.metadata, resolution=sample.resolution)
        f.write(json.dumps(meta).encode() + b"\n")


def load_raster(path) -> RasterSample:
    path = Path(path)
    raw = Path(path).read_bytes()
    # metadata is the trailing JSON line; binary data may contain '{' bytes,
    # so probe candidate starts from the end until one parses and the
    # remaining byte count matches the record size it declares
    meta = None
    start = len(raw)
    while True:
        start = raw.rindex(b"{", 0, start)
        try:
            candidate = json.loads(raw[start:-1])
        except (ValueError, UnicodeDecodeError):
            continue
        if isinstance(candidate, dict) and "resolution" in candidate \
                and start == 4 * (4 * candidate["resolution"] ** 2 + 3):
            meta = candidate
            break
    r = meta["resolution"]
    data = np.frombuffer(raw[:start], dtype="<f4")
    image = data[:4 * r * r].reshape(4, r, r).transpose(1, 2, 0).astype(float)
    target = data[4 * r * r:4 * r * r + 3].astype(float)
    if np.all(np.isnan(target)):
        target = None
    return RasterSample(image=image, target=target, metadata=meta)
