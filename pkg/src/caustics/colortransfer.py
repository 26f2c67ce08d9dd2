"""Statistical color transfer between overlapping images.

The transfer matches per-channel mean and standard deviation in the
decorrelated opponent color space: donor pixels are recentred by the donor
stats, rescaled by the ratio of standard deviations, and shifted onto the
recipient stats. Statistics can be restricted to non-caustics pixels so
caustics brightness does not bias the match.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .image import BinaryMask, LabImage

STD_EPS = 1e-6


@dataclass(frozen=True)
class ChannelStats:
    mean_l: float
    mean_a: float
    mean_b: float
    std_l: float
    std_a: float
    std_b: float

    def __post_init__(self):
        values = (self.mean_l, self.mean_a, self.mean_b, self.std_l, self.std_a, self.std_b)
        if not all(np.isfinite(v) for v in values):
            raise ParameterError("channel stats must be finite")
        if min(self.std_l, self.std_a, self.std_b) < 0:
            raise ParameterError("standard deviations must be non-negative")

    def means(self) -> np.ndarray:
        return np.array([self.mean_l, self.mean_a, self.mean_b])

    def stds(self) -> np.ndarray:
        return np.array([self.std_l, self.std_a, self.std_b])


def channel_stats(img: LabImage, mask: BinaryMask | None = None) -> ChannelStats:
    """Population mean and std per channel, optionally over non-caustics pixels only."""
    if mask is not None:
        if (mask.height, mask.width) != (img.height, img.width):
            raise DimensionError("mask dimensions must match the image")
        select = mask.non_caustics
    else:
        select = np.ones((img.height, img.width), dtype=bool)
    n = int(select.sum())
    if n < 2:
        raise ParameterError(f"need at least 2 contributing pixels, got {n}")
    means = []
    stds = []
    for plane in (img.l, img.alpha, img.beta):
        values = plane[select].astype(np.float64)
        means.append(float(values.mean()))
        stds.append(float(values.std()))
    return ChannelStats(means[0], means[1], means[2], stds[0], stds[1], stds[2])


def pooled_stats(stats: list[ChannelStats], weights: list[int]) -> ChannelStats:
    """Pixel-weighted pooling of per-image statistics (block-wide transfer).

    Exact for population statistics: the pooled second moment is recovered
    from each image's mean and std.
    """
    if len(stats) != len(weights) or not stats:
        raise ParameterError("need one positive weight per stats entry")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ParameterError("weights must be positive pixel counts")
    w = w / w.sum()
    means = np.array([s.means() for s in stats])
    seconds = np.array([s.stds() for s in stats]) ** 2 + means**2
    mean = w @ means
    var = np.maximum(w @ seconds - mean**2, 0.0)
    std = np.sqrt(var)
    return ChannelStats(mean[0], mean[1], mean[2], std[0], std[1], std[2])


def transfer_color(
    source: LabImage, target_stats: ChannelStats, source_stats: ChannelStats
) -> LabImage:
    """Affine per-channel remap of ``source`` onto the target statistics.

    Channels whose source std is degenerate (<= 1e-6) keep scale 1 with a
    warning; channels whose source and target stats already coincide pass
    through untouched, so the identity transfer is exact.
    """
    src_means = source_stats.means()
    src_stds = source_stats.stds()
    tgt_means = target_stats.means()
    tgt_stds = target_stats.stds()
    planes = []
    for i, plane in enumerate((source.l, source.alpha, source.beta)):
        if src_means[i] == tgt_means[i] and src_stds[i] == tgt_stds[i]:
            planes.append(plane)
            continue
        if src_stds[i] <= STD_EPS:
            warnings.warn(
                f"transfer_color: degenerate source std on channel {i}, scale forced to 1"
            )
            scale = 1.0
        else:
            scale = tgt_stds[i] / src_stds[i]
        out = (plane.astype(np.float64) - src_means[i]) * scale + tgt_means[i]
        planes.append(out.astype(np.float32))
    return LabImage(planes[0], planes[1], planes[2])
