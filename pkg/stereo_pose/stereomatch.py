"""
Classical disparity estimation on rectified pairs and the ground-truth disparity pathway.

Functions:
----------
- to_grayscale: ITU-R 601 luma of an RGB image.
- block_match: SAD cost volume, winner-take-all, parabolic sub-pixel refinement,
  left-right consistency check and a cost-margin confidence.
- disparity_from_depth: disparity of a rendered depth map with seeded Gaussian noise.
"""

import logging

from dataclasses import dataclass

import numpy as np

from scipy.ndimage import uniform_filter

from stereo_pose.errors import ConfigurationError
from stereo_pose.geometry import StereoRig

logger = logging.getLogger(__name__)

LUMA_WEIGHTS   = np.array([0.299, 0.587, 0.114])
LR_THRESHOLD   = 1.0
MIN_CONFIDENCE = 0.05
STRIP_ROWS     = 64

_EPS = 1e-9


@dataclass(eq=False)
class DisparityMap:

    """
    Per-pixel disparity (px) of the left view with validity flags and confidence.
    Invalid pixels always carry the value 0.
    """

    values      : np.ndarray
    valid       : np.ndarray
    confidence  : np.ndarray
    right_values: np.ndarray = None
    max_disp    : float = None

    def __post_init__(self) -> None:

        self.values     = np.asarray(self.values, dtype=np.float64)
        self.valid      = np.asarray(self.valid, dtype=bool)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)

        if self.values.ndim != 2:
            raise ValueError("disparity values must be an (H, W) array")
        if self.valid.shape != self.values.shape or self.confidence.shape != self.values.shape:
            raise ValueError("values, valid and confidence must share one shape")

        self.values[~self.valid] = 0.0
        if np.any(self.values < 0):
            raise ValueError("disparity values must be non-negative")
        if self.max_disp is not None and np.any(self.values > self.max_disp):
            raise ValueError(f"disparity above max_disp={self.max_disp}")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def sample(self, pixels:np.ndarray) -> tuple:

        """
        Nearest-pixel lookup at (N, 2) ``(u, v)`` positions; returns ``(values, valid)``.
        Positions outside the image are invalid.
        """

        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        H, W = self.values.shape

        cols = np.rint(pixels[:, 0]).astype(np.int64)
        rows = np.rint(pixels[:, 1]).astype(np.int64)
        inside = (cols >= 0) & (cols < W) & (rows >= 0) & (rows < H)

        values = np.zeros(pixels.shape[0])
        valid  = np.zeros(pixels.shape[0], dtype=bool)
        values[inside] = self.values[rows[inside], cols[inside]]
        valid[inside]  = self.valid[rows[inside], cols[inside]]
        values[~valid] = 0.0

        return values, valid

    def to_depth(self, rig:StereoRig) -> np.ndarray:

        """Depth map (mm) via ``Z = f * B / d``; 0 where the disparity is invalid or zero."""

        depth = np.zeros_like(self.values)
        usable = self.valid & (self.values > 0)
        depth[usable] = rig.left.fx * rig.baseline / self.values[usable]

        return depth


def to_grayscale(image:np.ndarray) -> np.ndarray:

    image = np.asarray(image)

    if image.ndim == 2:
        return image.astype(np.float64)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"expected an (H, W) or (H, W, 3) image, got shape {image.shape}")

    return image[:, :, :3].astype(np.float64) @ LUMA_WEIGHTS


def _cost_volume(left:np.ndarray, right:np.ndarray, max_disp:int, window:int) -> np.ndarray:

    """SAD volume (D+1, H, W); entries whose match falls outside the right image are inf."""

    H, W = left.shape
    cost = np.full((max_disp + 1, H, W), np.inf, dtype=np.float32)

    for d in range(max_disp + 1):
        diff = np.abs(left[:, d:] - right[:, :W - d])
        cost[d, :, d:] = uniform_filter(diff, size=window, mode='nearest') * (window * window)

    return cost


def _subpixel(cost:np.ndarray, best:np.ndarray) -> np.ndarray:

    """Parabola through the costs at best-1, best, best+1; offsets clamped to +-0.5."""

    D = cost.shape[0] - 1
    offset = np.zeros(best.shape)

    interior = (best > 0) & (best < D)
    if not interior.any():
        return offset

    idx = np.nonzero(interior)
    b = best[idx]
    c0 = cost[b - 1, idx[0], idx[1]].astype(np.float64)
    c1 = cost[b, idx[0], idx[1]].astype(np.float64)
    c2 = cost[b + 1, idx[0], idx[1]].astype(np.float64)

    denom = c0 - 2.0 * c1 + c2
    usable = np.isfinite(denom) & (denom > _EPS)

    delta = np.zeros(b.shape)
    delta[usable] = 0.5 * (c0[usable] - c2[usable]) / denom[usable]
    offset[idx] = np.clip(delta, -0.5, 0.5)

    return offset


def _confidence(cost:np.ndarray, best:np.ndarray) -> np.ndarray:

    """Normalised margin between the best cost and the best cost outside best +- 1."""

    D1, H, W = cost.shape
    rows, cols = np.indices((H, W))

    best_cost = cost[best, rows, cols].astype(np.float64)

    masked = cost.copy()
    for shift in (-1, 0, 1):
        k = np.clip(best + shift, 0, D1 - 1)
        masked[k, rows, cols] = np.inf
    second = masked.min(axis=0).astype(np.float64)

    conf = np.zeros((H, W))
    finite = np.isfinite(second) & np.isfinite(best_cost)
    conf[finite] = (second[finite] - best_cost[finite]) / np.maximum(second[finite], _EPS)

    return np.clip(conf, 0.0, 1.0)


def _match_strip(left:np.ndarray, right:np.ndarray, max_disp:int, window:int) -> tuple:

    W = left.shape[1]
    cost_l = _cost_volume(left, right, max_disp, window)

    # right-view costs: C_R[d][:, x] = C_L[d][:, x + d]
    cost_r = np.full_like(cost_l, np.inf)
    for d in range(max_disp + 1):
        cost_r[d, :, :W - d] = cost_l[d, :, d:]

    best_l = np.argmin(cost_l, axis=0)
    best_r = np.argmin(cost_r, axis=0)

    values_l = best_l + _subpixel(cost_l, best_l)
    values_r = best_r + _subpixel(cost_r, best_r)

    return values_l, values_r, _confidence(cost_l, best_l)


def block_match(left:np.ndarray, right:np.ndarray, max_disp:int=128, window:int=9, lr_threshold:float=LR_THRESHOLD, min_confidence:float=MIN_CONFIDENCE) -> DisparityMap:

    """
    Dense disparity of a rectified pair by SAD block matching.

    Parameters:
    -----------
    left, right: np.ndarray
        Grayscale (H, W) or RGB (H, W, 3) images of equal size.
    max_disp: int
        Largest disparity searched (px); capped at width - 1.
    window: int
        Odd side length of the square SAD window.
    lr_threshold: float
        Pixels whose left and right disparities differ by more than this are invalid.
    min_confidence: float
        Pixels with a smaller cost margin are invalid.

    Returns:
    --------
    DisparityMap
        Left-view disparity; ``right_values`` holds the right-view disparity used by the check.
    """

    left  = to_grayscale(left)
    right = to_grayscale(right)

    if left.shape != right.shape:
        raise ValueError(f"image sizes differ: {left.shape} vs {right.shape}")
    if not isinstance(window, (int, np.integer)) or not isinstance(max_disp, (int, np.integer)):
        raise TypeError("window and max_disp should be of type int.")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    if max_disp < 0:
        raise ValueError("max_disp must be non-negative")

    H, W = left.shape
    if window >= W:
        raise ValueError(f"window ({window}) must be smaller than the image width ({W})")

    max_disp = int(min(max_disp, W - 1))
    halo = window // 2

    values_l = np.zeros((H, W))
    values_r = np.zeros((H, W))
    confidence = np.zeros((H, W))

    # row strips with a halo keep the cost volume small; results equal a full-frame pass
    for r0 in range(0, H, STRIP_ROWS):
        r1 = min(H, r0 + STRIP_ROWS)
        a, b = max(0, r0 - halo), min(H, r1 + halo)
        vl, vr, conf = _match_strip(left[a:b], right[a:b], max_disp, window)
        values_l[r0:r1]   = vl[r0 - a:r1 - a]
        values_r[r0:r1]   = vr[r0 - a:r1 - a]
        confidence[r0:r1] = conf[r0 - a:r1 - a]

    # left-right consistency
    cols = np.arange(W)[None, :] - np.rint(values_l).astype(np.int64)
    inside = cols >= 0
    lr_diff = np.full((H, W), np.inf)
    rows = np.broadcast_to(np.arange(H)[:, None], (H, W))
    lr_diff[inside] = np.abs(values_l[inside] - values_r[rows[inside], cols[inside]])

    valid = inside & (lr_diff <= lr_threshold) & (confidence >= min_confidence)

    logger.debug("block_match: %.1f%% valid pixels", 100.0 * valid.mean())

    return DisparityMap(values=values_l, valid=valid, confidence=np.where(valid, confidence, 0.0), right_values=values_r, max_disp=float(max_disp))


def disparity_from_depth(depth:np.ndarray, rig:StereoRig, noise_sigma:float=0.0, seed:int=0, mask:np.ndarray=None) -> DisparityMap:

    """
    Ground-truth disparity ``d = f * B / Z`` on the foreground plus seeded Gaussian noise.

    Background pixels (depth 0 or outside ``mask``) are invalid; noisy values that
    fall to zero or below are invalid too.
    """

    if not isinstance(rig, StereoRig):
        raise TypeError("rig should be a StereoRig.")
    if not rig.rectified:
        raise ConfigurationError("disparity from depth requires a rectified rig")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")

    depth = np.asarray(depth, dtype=np.float64)
    foreground = depth > 0
    if mask is not None:
        foreground &= np.asarray(mask, dtype=bool)

    values = np.zeros_like(depth)
    values[foreground] = rig.left.fx * rig.baseline / depth[foreground]

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        values[foreground] += rng.normal(0.0, noise_sigma, size=int(foreground.sum()))

    valid = foreground & (values > 0)

    return DisparityMap(values=values, valid=valid, confidence=valid.astype(np.float64))
