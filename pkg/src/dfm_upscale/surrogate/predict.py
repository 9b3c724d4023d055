"""Inference path: raster sample -> equivalent tensor in physical units."""

from __future__ import annotations

import numpy as np

from ..dataset_pipeline import inverse_target, preprocess
from ..homogenizer import EquivalentTensor
from ..rasterizer import RasterSample
from .model import SurrogateModel, stats_fingerprint


def predict_tensor(model: SurrogateModel, sample: RasterSample, stats: dict,
                   preprocessed: bool = False,
                   xbar: float | None = None) -> EquivalentTensor:
    """Forward pass plus exact inversion of the dataset preprocessing.

    For preprocessed inputs the sample's matrix mean (xbar) must be supplied;
    raw inputs are preprocessed here with the given statistics.
    """
    if model.stats_hash and model.stats_hash != stats_fingerprint(stats):
        raise ValueError("preprocessing statistics do not match the model")
    if preprocessed:
        if xbar is None:
            raise ValueError("xbar is required for preprocessed inputs")
        image = sample.image
    else:
        image, _, xbar = preprocess(sample.image, None, stats)
    pred_std = model.forward(image[None], train=False)[0]
    pred = inverse_target(pred_std.astype(float), stats, xbar)
    return EquivalentTensor(kxx=float(pred[0]), kxy=float(pred[1]),
                            kyy=float(pred[2]),
                            block_id=sample.metadata.get("block_id", -1))


def predict_batch(model: SurrogateModel, samples, stats: dict,
                  batch_size: int = 64) -> np.ndarray:
    """Raw-space predictions for many raster samples with batched forward
    passes; one inverse preprocessing per sample."""
    if model.stats_hash and model.stats_hash != stats_fingerprint(stats):
        raise ValueError("preprocessing statistics do not match the model")
    images = []
    xbars = []
    for sample in samples:
        image, _, xbar = preprocess(sample.image, None, stats)
        images.append(image)
        xbars.append(xbar)
    images = np.asarray(images, np.float32)
    preds = []
    for start in range(0, len(images), batch_size):
        preds.append(model.forward(images[start:start + batch_size],
                                   train=False))
    preds = np.concatenate(preds).astype(float)
    return np.stack([inverse_target(p, stats, xb)
                     for p, xb in zip(preds, xbars)])


def surrogate_backend(model: SurrogateModel, stats: dict,
                      raster_resolution: int | None = None):
    """Per-block backend for upscaling: rasterize then predict."""
    from ..rasterizer import rasterize_block

    res = raster_resolution or model.architecture.resolution

    def run(field, clipped, block, block_id):
        sample = rasterize_block(field, clipped, block, res,
                                 metadata={"block_id": block_id})
        eq = predict_tensor(model, sample, stats)
        eq.block_id = block_id
        return eq

    return run
