"""
Dense-correspondence pose solvers and stereo fusion strategies.

The strategies are solver-level counterparts of feature-fusion stages in a
stereo pose network:

- ``MONO_LEFT``: PnP on the left view only.
- ``LATE_POSE_COMBINE``: one PnP per view, poses averaged afterwards.
- ``MID_JOINT_PNP``: one PnP over the concatenated correspondences of both cameras.
- ``DISPARITY_3D3D``: correspondences lifted to 3D with disparity, then rigid alignment.
- ``EARLY_JOINT_PNP_PLUS_DEPTH``: joint PnP refined with point-to-point depth residuals.
- ``DOUBLE_FUSION``: late combination followed by a joint refinement over both views.

Classes:
--------
CorrespondenceSet
    Pixel / object-point pairs tagged with their view.
SolverParams
    RANSAC and refinement settings.
PoseEstimate
    Solver output with inlier statistics.
FrameInputs
    Everything one frame offers to :func:`estimate`.
"""

import logging

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from numpy.polynomial import Polynomial
from scipy.spatial.transform import Rotation

from stereo_pose.errors import (
    ConfigurationError,
    DegenerateConfigurationError,
    InsufficientDataError,
    NumericError,
    ValidationError,
)
from stereo_pose.geometry import LEFT, RIGHT, BoundingBox, CameraIntrinsics, Pose, StereoRig, backproject_pixels
from stereo_pose.rasterizer import DenseFeatureMaps
from stereo_pose.stereomatch import DisparityMap

logger = logging.getLogger(__name__)

MAX_CORRESPONDENCES = 2000

_COLLINEAR_TOL = 1e-9
_ROOT_IMAG_TOL = 1e-6
_COST_FLOOR    = 1e-30

# per-view solve failures that let a stereo strategy fall back to the other view
_VIEW_FAILURES = (InsufficientDataError, DegenerateConfigurationError, ValidationError, NumericError)


class FusionStrategy(Enum):

    MONO_LEFT                  = 'MONO_LEFT'
    LATE_POSE_COMBINE          = 'LATE_POSE_COMBINE'
    MID_JOINT_PNP              = 'MID_JOINT_PNP'
    DISPARITY_3D3D             = 'DISPARITY_3D3D'
    EARLY_JOINT_PNP_PLUS_DEPTH = 'EARLY_JOINT_PNP_PLUS_DEPTH'
    DOUBLE_FUSION              = 'DOUBLE_FUSION'

    @classmethod
    def from_name(cls, name) -> 'FusionStrategy':

        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ConfigurationError(f"unknown strategy '{name}'; choose from {', '.join(s.value for s in cls)}")


@dataclass(eq=False)
class CorrespondenceSet:

    """
    2D-3D correspondences: ``pixels`` (N, 2) in the image of their view, ``points``
    (N, 3) object coordinates in mm, ``weights`` (N,) in [0, 1], ``views`` (N,) with
    ``LEFT``/``RIGHT`` tags.
    """

    pixels : np.ndarray
    points : np.ndarray
    weights: np.ndarray = None
    views  : np.ndarray = None

    def __post_init__(self) -> None:

        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = self.pixels.shape[0]

        if self.points.shape[0] != n:
            raise ValueError(f"{n} pixels but {self.points.shape[0]} object points")

        self.weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.views   = np.full(n, LEFT, dtype=np.int8) if self.views is None else np.asarray(self.views, dtype=np.int8).reshape(-1)

        if self.weights.shape[0] != n or self.views.shape[0] != n:
            raise ValueError("weights and views must have one entry per correspondence")
        if np.any((self.weights < 0) | (self.weights > 1)) or not np.all(np.isfinite(self.weights)):
            raise ValueError("correspondence weights must lie in [0, 1]")
        if not np.all(np.isin(self.views, [LEFT, RIGHT])):
            raise ValueError("view tags must be LEFT (0) or RIGHT (1)")
        if not (np.all(np.isfinite(self.pixels)) and np.all(np.isfinite(self.points))):
            raise ValueError("correspondences contain non-finite values")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def empty(cls, view:int=LEFT) -> 'CorrespondenceSet':
        return cls(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), np.full(0, view, dtype=np.int8))

    def subset(self, index) -> 'CorrespondenceSet':
        return CorrespondenceSet(self.pixels[index], self.points[index], self.weights[index], self.views[index])

    def view(self, view:int) -> 'CorrespondenceSet':
        return self.subset(self.views == view)

    def concat(self, other:'CorrespondenceSet') -> 'CorrespondenceSet':

        if other is None:
            return self

        return CorrespondenceSet(
            np.vstack([self.pixels, other.pixels]),
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.views, other.views]),
        )

    def check_bounds(self, cameras:dict) -> None:

        """Raise ``ValidationError`` if a pixel lies outside the image of its view."""

        for view, (K, _) in cameras.items():
            px = self.pixels[self.views == view]
            outside = (px[:, 0] < -0.5) | (px[:, 0] > K.width - 0.5) | (px[:, 1] < -0.5) | (px[:, 1] > K.height - 0.5)
            if outside.any():
                raise ValidationError(f"{int(outside.sum())} correspondence pixel(s) outside the {'left' if view == LEFT else 'right'} image")

    @classmethod
    def from_feature_maps(cls, maps:DenseFeatureMaps, view:int=LEFT, inst_id:int=None, bbox:BoundingBox=None, max_count:int=MAX_CORRESPONDENCES) -> 'CorrespondenceSet':

        """
        Correspondences from dense XYZ maps: every foreground pixel (of ``inst_id`` when
        the maps carry an instance channel) inside ``bbox``, decimated to at most
        ``max_count`` by keeping one pixel per cell of a regular grid.
        """

        mask = maps.mask.copy()
        if inst_id is not None:
            if maps.instance is None:
                raise ValueError("maps carry no instance channel")
            mask &= maps.instance == inst_id
        if bbox is not None:
            H, W = mask.shape
            rows, cols = np.indices((H, W))
            mask &= bbox.contains(cols, rows)

        rows, cols = np.nonzero(mask)
        n = rows.size

        if n > max_count:
            cell = int(np.ceil(np.sqrt(n / max_count)))
            while True:
                cell_id = (rows // cell) * (maps.shape[1] // cell + 1) + cols // cell
                _, first = np.unique(cell_id, return_index=True)
                if first.size <= max_count:
                    break
                cell += 1
            keep = np.sort(first)
            rows, cols = rows[keep], cols[keep]

        pixels = np.stack([cols, rows], axis=1).astype(np.float64)
        points = maps.xyz[rows, cols]

        return cls(pixels, points, np.ones(rows.size), np.full(rows.size, view, dtype=np.int8))


@dataclass(frozen=True)
class SolverParams:

    ransac_threshold_px: float = 3.0
    ransac_confidence  : float = 0.999
    max_iterations     : int = 10000
    refine_iterations  : int = 20
    inlier_threshold_mm: float = 10.0
    depth_weight       : float = 1.0
    max_correspondences: int = MAX_CORRESPONDENCES
    view_weights       : tuple = (1.0, 1.0)
    seed               : int = 0

    def __post_init__(self) -> None:

        if not self.ransac_threshold_px > 0:
            raise ConfigurationError("ransac_threshold_px must be positive")
        if not self.inlier_threshold_mm > 0:
            raise ConfigurationError("inlier_threshold_mm must be positive")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ConfigurationError("ransac_confidence must lie in (0, 1)")
        if self.max_iterations < 1 or self.refine_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 1 and refine_iterations >= 0")
        if self.depth_weight < 0:
            raise ConfigurationError("depth_weight must be non-negative")
        if self.max_correspondences < 4:
            raise ConfigurationError("max_correspondences must be at least 4")
        if len(self.view_weights) != 2 or min(self.view_weights) <= 0:
            raise ConfigurationError("view_weights must be two positive numbers")

    @classmethod
    def from_dict(cls, values:dict) -> 'SolverParams':
        return cls(**{key: value for key, value in values.items() if key in cls.__dataclass_fields__})


@dataclass(eq=False)
class PoseEstimate:

    """
    Pose (object -> left camera) with solver diagnostics. ``residuals`` holds the
    per-correspondence reprojection error (px) in each correspondence's own view.
    """

    pose             : Pose
    inlier_count     : int
    inlier_ratio     : float
    mean_residual_px : float = 0.0
    mean_residual_mm : float = None
    strategy         : str = ''
    converged        : bool = True
    fallback         : bool = False
    n_correspondences: int = 0
    residuals        : np.ndarray = field(default=None, repr=False)
    inliers          : np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:

        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ValueError(f"inlier_ratio must lie in [0, 1], got {self.inlier_ratio}")
        if self.mean_residual_px < 0 or (self.mean_residual_mm is not None and self.mean_residual_mm < 0):
            raise ValueError("residuals must be non-negative")

    def with_strategy(self, strategy:str, fallback:bool=None) -> 'PoseEstimate':
        self.strategy = strategy
        if fallback is not None:
            self.fallback = self.fallback or fallback
        return self


@dataclass(eq=False)
class FrameInputs:

    """
    Inputs of one object in one stereo frame: left-view and right-view
    correspondences, the rig and an optional left-view disparity map.
    """

    left     : CorrespondenceSet
    rig      : StereoRig
    right    : CorrespondenceSet = None
    disparity: DisparityMap = None


def _cameras(rig:StereoRig=None, K:CameraIntrinsics=None) -> dict:

    if rig is not None:
        return {LEFT: (rig.left, Pose.identity()), RIGHT: (rig.right, rig.extrinsic_l2r)}
    if K is None:
        raise ConfigurationError("either a stereo rig or camera intrinsics are required")

    return {LEFT: (K, Pose.identity())}


def _single_view(corrs:CorrespondenceSet) -> CorrespondenceSet:

    """Treat every correspondence as seen by the one camera of a mono solve."""

    return CorrespondenceSet(corrs.pixels, corrs.points, corrs.weights, np.full(len(corrs), LEFT, dtype=np.int8))


def _skew(v:np.ndarray) -> np.ndarray:

    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]

    return S


def reprojection_errors(pose:Pose, corrs:CorrespondenceSet, rig:StereoRig=None, K:CameraIntrinsics=None) -> np.ndarray:

    """Pixel distance per correspondence in its own view; inf for points behind that camera."""

    return _reprojection_errors(pose, corrs, _cameras(rig, K))


def _reprojection_errors(pose:Pose, corrs:CorrespondenceSet, cameras:dict) -> np.ndarray:

    errors = np.full(len(corrs), np.inf)

    for view, (K, extrinsic) in cameras.items():

        sel = corrs.views == view
        if not sel.any():
            continue

        Xc = extrinsic.compose(pose).apply(corrs.points[sel])
        z = Xc[:, 2]
        front = z > 0

        err = np.full(z.shape, np.inf)
        u = K.fx * Xc[front, 0] / z[front] + K.cx
        v = K.fy * Xc[front, 1] / z[front] + K.cy
        err[front] = np.hypot(u - corrs.pixels[sel][front, 0], v - corrs.pixels[sel][front, 1])
        errors[sel] = err

    return errors


def pose_residuals(pose:Pose, corrs:CorrespondenceSet, rig:StereoRig=None, K:CameraIntrinsics=None, depth_pairs:tuple=None, depth_weight:float=1.0, view_weights:tuple=(1.0, 1.0)) -> tuple:

    """
    Stacked residual vector and its Jacobian with respect to the pose increment
    ``(omega, dt)`` of :meth:`Pose.perturb`.

    Reprojection residuals (px, two per correspondence, scaled by the square root of
    the weight) come first, followed by three point-to-point residuals (mm, scaled by
    ``sqrt(depth_weight)``) per ``(object point, left-camera point)`` pair of ``depth_pairs``.
    Residuals of points behind a camera are non-finite.
    """

    if rig is None:
        corrs = _single_view(corrs)

    return _residuals(pose, corrs, _cameras(rig, K), depth_pairs, depth_weight, view_weights)


def _residuals(pose:Pose, corrs:CorrespondenceSet, cameras:dict, depth_pairs, depth_weight:float, view_weights) -> tuple:

    n = len(corrs)
    n_depth = 0 if depth_pairs is None else len(depth_pairs[0])

    r = np.zeros(2 * n + 3 * n_depth)
    J = np.zeros((2 * n + 3 * n_depth, 6))

    R, t = pose.rotation, pose.translation

    for view, (K, extrinsic) in cameras.items():

        sel = np.nonzero(corrs.views == view)[0]
        if sel.size == 0:
            continue

        RX = corrs.points[sel] @ R.T
        P  = RX + t
        Rc = extrinsic.rotation
        Xc = P @ Rc.T + extrinsic.translation
        x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]

        with np.errstate(divide='ignore', invalid='ignore'):
            inv_z = np.where(z > 0, 1.0 / z, np.nan)

        scale = np.sqrt(corrs.weights[sel] * view_weights[view])

        res = np.stack([K.fx * x * inv_z + K.cx - corrs.pixels[sel, 0], K.fy * y * inv_z + K.cy - corrs.pixels[sel, 1]], axis=1)

        # d(pixel)/d(camera point)
        Jproj = np.zeros((sel.size, 2, 3))
        Jproj[:, 0, 0] = K.fx * inv_z
        Jproj[:, 0, 2] = -K.fx * x * inv_z ** 2
        Jproj[:, 1, 1] = K.fy * inv_z
        Jproj[:, 1, 2] = -K.fy * y * inv_z ** 2

        # d(camera point)/d(omega, dt); exp(omega) acts on the left of R
        dP = np.zeros((sel.size, 3, 6))
        dP[:, :, :3] = -_skew(RX)
        dP[:, :, 3:] = np.eye(3)
        dXc = np.einsum('ij,njk->nik', Rc, dP)

        Jv = np.einsum('nij,njk->nik', Jproj, dXc) * scale[:, None, None]

        rows = (2 * sel[:, None] + np.arange(2)).ravel()
        r[rows] = (res * scale[:, None]).ravel()
        J[rows] = Jv.reshape(-1, 6)

    if n_depth:
        obj, cam = depth_pairs
        w = np.sqrt(depth_weight)
        RX = np.asarray(obj) @ R.T
        r[2 * n:] = (w * (RX + t - np.asarray(cam))).ravel()
        Jd = np.zeros((n_depth, 3, 6))
        Jd[:, :, :3] = -_skew(RX)
        Jd[:, :, 3:] = np.eye(3)
        J[2 * n:] = (w * Jd).reshape(-1, 6)

    return r, J


def _levenberg_marquardt(pose:Pose, corrs:CorrespondenceSet, cameras:dict, iterations:int, depth_pairs=None, depth_weight:float=1.0, view_weights=(1.0, 1.0)) -> tuple:

    """Damped Gauss-Newton with Marquardt scaling; returns the pose and the accepted costs."""

    r, J = _residuals(pose, corrs, cameras, depth_pairs, depth_weight, view_weights)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
        raise NumericError("non-finite residuals at the initial pose (point behind a camera?)")

    cost  = 0.5 * float(r @ r)
    costs = [cost]
    lam   = 1e-3

    for _ in range(iterations):

        if cost <= _COST_FLOOR:
            break

        H = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(H), 1e-12 * max(np.diag(H).max(), 1e-300))

        try:
            delta = -np.linalg.solve(H + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= 2.0
            continue

        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite pose increment")
        if np.linalg.norm(delta) < 1e-15:
            break

        candidate = pose.perturb(delta)
        r_new, J_new = _residuals(candidate, corrs, cameras, depth_pairs, depth_weight, view_weights)
        cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf

        if cost_new < cost:
            converged = cost - cost_new <= 1e-15 * cost
            pose, r, J, cost = candidate, r_new, J_new, cost_new
            costs.append(cost)
            lam = max(lam * 0.5, 1e-12)
            if converged:
                break
        else:
            lam *= 2.0
            if lam > 1e12:
                break

    return pose, costs


def refine_pose(pose0:Pose, corrs:CorrespondenceSet, rig:StereoRig=None, iterations:int=20, K:CameraIntrinsics=None, depth_pairs:tuple=None, depth_weight:float=1.0, view_weights:tuple=(1.0, 1.0), return_costs:bool=False):

    """
    Minimise the reprojection error (both views when ``rig`` is given and right-view
    correspondences exist) over the pose, starting from ``pose0``.

    Parameters:
    -----------
    pose0: Pose
        Initial object -> left camera pose.
    corrs: CorrespondenceSet
        Correspondences; right-view entries need ``rig``.
    rig: StereoRig
        Stereo rig, or None for a mono refinement with ``K``.
    iterations: int
        Maximum number of damped Gauss-Newton steps.
    depth_pairs: tuple
        Optional ``(object points, left-camera points)`` adding point-to-point residuals.
    return_costs: bool
        Also return the cost after every accepted step (non-increasing).

    Raises:
    -------
    NumericError
        If residuals are non-finite at ``pose0``.
    """

    if not isinstance(pose0, Pose):
        raise TypeError("pose0 should be a Pose.")

    cameras = _cameras(rig, K)
    if rig is None:
        corrs = _single_view(corrs)

    pose, costs = _levenberg_marquardt(pose0, corrs, cameras, iterations, depth_pairs, depth_weight, view_weights)

    return (pose, costs) if return_costs else pose


def _bearings(pixels:np.ndarray, K:CameraIntrinsics) -> np.ndarray:

    rays = np.stack([(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy, np.ones(pixels.shape[0])], axis=1)

    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _is_collinear(points:np.ndarray) -> bool:

    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)

    return bool(s[0] == 0 or s[1] <= _COLLINEAR_TOL * s[0])


def _rigid_fit(src:np.ndarray, dst:np.ndarray) -> Pose:

    """Least-squares rotation and translation with ``dst ~ R src + t`` (det-corrected SVD)."""

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)

    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])

    R = Vt.T @ D @ U.T

    return Pose(R, mu_d - R @ mu_s)


def p3p_grunert(bearings:np.ndarray, points:np.ndarray) -> list:

    """
    All poses (object -> camera) consistent with three bearing vectors and three
    object points, at most four.

    The distances along the bearings follow from the law of cosines; eliminating the
    first unknown ratio leaves a quartic in the second, built with ``numpy.polynomial``.
    """

    j = np.asarray(bearings, dtype=np.float64).reshape(3, 3)
    P = np.asarray(points, dtype=np.float64).reshape(3, 3)
    j = j / np.linalg.norm(j, axis=1, keepdims=True)

    a = np.linalg.norm(P[1] - P[2])
    b = np.linalg.norm(P[0] - P[2])
    c = np.linalg.norm(P[0] - P[1])

    if min(a, b, c) <= 0 or np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0])) <= _COLLINEAR_TOL * b * c:
        raise DegenerateConfigurationError("collinear or coincident object points")

    cos_alpha = float(j[1] @ j[2])
    cos_beta  = float(j[0] @ j[2])
    cos_gamma = float(j[0] @ j[1])

    K_ac = (a * a - c * c) / (b * b)
    C    = (c * c) / (b * b)

    # u = s2 / s1 = N(v) / D(v), v = s3 / s1
    N = Polynomial([1.0 + K_ac, -2.0 * K_ac * cos_beta, K_ac - 1.0])
    D = Polynomial([2.0 * cos_gamma, -2.0 * cos_alpha])
    g = Polynomial([1.0, -2.0 * cos_beta, 1.0])

    quartic = N * N - 2.0 * cos_gamma * N * D + (1.0 - C * g) * D * D
    scale = np.abs(quartic.coef).max()
    if scale == 0:
        return []
    quartic = quartic.trim(1e-14 * scale)
    if quartic.degree() < 1:
        return []

    poses = []
    for root in quartic.roots():

        if abs(root.imag) > _ROOT_IMAG_TOL * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        d = D(v)
        gv = g(v)
        if v <= 0 or abs(d) < 1e-12 or gv <= 0:
            continue
        u = N(v) / d
        if u <= 0:
            continue

        s1 = np.sqrt(b * b / gv)
        cam = np.stack([s1 * j[0], u * s1 * j[1], v * s1 * j[2]])

        try:
            poses.append(_rigid_fit(P, cam))
        except ValueError:
            continue

    return poses


def _adaptive_iterations(inlier_ratio:float, confidence:float, sample_size:int) -> float:

    if inlier_ratio >= 1.0:
        return 1
    if inlier_ratio <= 0.0:
        return np.inf

    denom = np.log1p(-inlier_ratio ** sample_size)
    if denom == 0.0:
        return np.inf

    return float(np.ceil(np.log(1.0 - confidence) / denom))


def _ransac_pnp(corrs:CorrespondenceSet, cameras:dict, params:SolverParams, rng:np.random.Generator) -> Pose:

    """
    RANSAC over P3P hypotheses. Samples come from one view at a time (chosen in
    proportion to its correspondence count); hypotheses are scored on all views.
    """

    members = {view: np.nonzero(corrs.views == view)[0] for view in cameras}
    eligible = [view for view in cameras if members[view].size >= 4]
    if not eligible:
        raise InsufficientDataError("at least 4 correspondences in one view are required")

    sizes = np.array([members[view].size for view in eligible], dtype=np.float64)
    probs = sizes / sizes.sum()
    bearings = {view: _bearings(corrs.pixels[members[view]], cameras[view][0]) for view in eligible}

    n = len(corrs)
    threshold = params.ransac_threshold_px

    best_pose, best_count, best_mean = None, -1, np.inf
    needed = params.max_iterations
    iteration = 0

    while iteration < min(needed, params.max_iterations):

        iteration += 1

        view = eligible[0] if len(eligible) == 1 else eligible[int(rng.choice(len(eligible), p=probs))]
        pick = rng.choice(members[view].size, 4, replace=False)
        sample = members[view][pick]

        try:
            candidates = p3p_grunert(bearings[view][pick[:3]], corrs.points[sample[:3]])
        except DegenerateConfigurationError:
            continue
        if not candidates:
            continue

        K, extrinsic = cameras[view]
        to_left = extrinsic.invert()

        # the fourth point picks among the P3P solutions
        check = CorrespondenceSet(corrs.pixels[sample[3:]], corrs.points[sample[3:]])
        errors4 = [_reprojection_errors(p, check, {LEFT: (K, Pose.identity())})[0] for p in candidates]
        pose = to_left.compose(candidates[int(np.argmin(errors4))])

        errors = _reprojection_errors(pose, corrs, cameras)
        inliers = errors < threshold
        count = int(inliers.sum())
        mean = float(errors[inliers].mean()) if count else np.inf

        if count > best_count or (count == best_count and mean < best_mean):
            best_pose, best_count, best_mean = pose, count, mean
            needed = _adaptive_iterations(count / n, params.ransac_confidence, 4)

    if best_pose is None:
        raise DegenerateConfigurationError("every RANSAC sample was degenerate")

    logger.debug("RANSAC: %d iterations, %d/%d inliers", iteration, best_count, n)

    return best_pose


def _finalize(pose:Pose, corrs:CorrespondenceSet, cameras:dict, params:SolverParams) -> PoseEstimate:

    """Refine on the inliers (twice if the inlier set changes) and collect diagnostics."""

    threshold = params.ransac_threshold_px
    errors = _reprojection_errors(pose, corrs, cameras)
    inliers = errors < threshold
    converged = True

    for _ in range(2):

        if inliers.sum() < 3:
            converged = False
            break

        pose, _ = _levenberg_marquardt(pose, corrs.subset(inliers), cameras, params.refine_iterations, view_weights=params.view_weights)
        errors = _reprojection_errors(pose, corrs, cameras)
        updated = errors < threshold
        if np.array_equal(updated, inliers):
            break
        inliers = updated

    count = int(inliers.sum())
    if count < 4:
        converged = False

    return PoseEstimate(
        pose             =pose,
        inlier_count     =count,
        inlier_ratio     =count / len(corrs),
        mean_residual_px =float(errors[inliers].mean()) if count else 0.0,
        converged        =converged,
        n_correspondences=len(corrs),
        residuals        =errors,
        inliers          =inliers,
    )


def pnp_solve(corrs:CorrespondenceSet, K:CameraIntrinsics, params:SolverParams=None) -> PoseEstimate:

    """
    Single-view PnP: RANSAC over P3P samples (three points plus one to pick the
    solution), adaptive iteration count, then damped least-squares refinement.

    Raises:
    -------
    InsufficientDataError
        With fewer than 4 correspondences.
    DegenerateConfigurationError
        If the object points are collinear or every sample is degenerate.
    """

    params = params or SolverParams()

    if len(corrs) < 4:
        raise InsufficientDataError(f"PnP needs at least 4 correspondences, got {len(corrs)}")

    corrs = _single_view(corrs)
    cameras = _cameras(K=K)
    corrs.check_bounds(cameras)

    if _is_collinear(corrs.points):
        raise DegenerateConfigurationError("all object points are collinear")

    rng = np.random.default_rng(params.seed)
    pose = _ransac_pnp(corrs, cameras, params, rng)

    return _finalize(pose, corrs, cameras, params)


def joint_stereo_pnp(corrs:CorrespondenceSet, rig:StereoRig, params:SolverParams=None) -> PoseEstimate:

    """
    PnP over both cameras at once: a single left-frame pose minimising reprojection
    residuals in the left and right images (right residuals through the rig extrinsic).
    Without right-view correspondences this is exactly :func:`pnp_solve` on the left view.
    """

    params = params or SolverParams()

    left = corrs.view(LEFT)
    if (corrs.views == RIGHT).sum() == 0:
        return pnp_solve(left, rig.left, params)

    if len(corrs) < 4:
        raise InsufficientDataError(f"PnP needs at least 4 correspondences, got {len(corrs)}")

    cameras = _cameras(rig)
    corrs.check_bounds(cameras)

    if _is_collinear(corrs.points):
        raise DegenerateConfigurationError("all object points are collinear")

    rng = np.random.default_rng(params.seed)
    pose = _ransac_pnp(corrs, cameras, params, rng)

    return _finalize(pose, corrs, cameras, params)


def kabsch_align(pairs, params:SolverParams=None, ransac:bool=False, inlier_test=None) -> PoseEstimate:

    """
    Rigid transform ``camera ~ R object + t`` from paired 3D points.

    Parameters:
    -----------
    pairs:
        (N, 2, 3) array-like of ``(object point, camera point)`` pairs in mm.
    ransac: bool
        Wrap the closed form in RANSAC over 3-point samples with
        ``params.inlier_threshold_mm`` and re-estimate on the inliers.
    inlier_test: callable
        ``inlier_test(pose, object points, camera points)`` returning the inlier mask
        used by RANSAC in place of the Euclidean threshold.

    Raises:
    -------
    DegenerateConfigurationError
        With fewer than 3 pairs or collinear points.
    """

    params = params or SolverParams()

    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 3):
        raise ValueError(f"pairs must be an (N, 2, 3) array, got {pairs.shape}")

    src, dst = pairs[:, 0], pairs[:, 1]
    n = src.shape[0]

    if n < 3:
        raise DegenerateConfigurationError(f"rigid alignment needs at least 3 pairs, got {n}")
    if _is_collinear(src) or _is_collinear(dst):
        raise DegenerateConfigurationError("collinear point set")

    threshold = params.inlier_threshold_mm
    if inlier_test is None:
        def inlier_test(pose, obj, cam):
            return np.linalg.norm(pose.apply(obj) - cam, axis=1) < threshold

    if not ransac:
        pose = _rigid_fit(src, dst)
        residuals = np.linalg.norm(pose.apply(src) - dst, axis=1)
        return PoseEstimate(
            pose=pose, inlier_count=n, inlier_ratio=1.0, mean_residual_mm=float(residuals.mean()),
            n_correspondences=n, inliers=np.ones(n, dtype=bool),
        )

    rng = np.random.default_rng(params.seed)
    best_pose, best_inliers, best_count, best_mean = None, None, -1, np.inf
    needed = params.max_iterations
    iteration = 0

    while iteration < min(needed, params.max_iterations):

        iteration += 1
        sample = rng.choice(n, 3, replace=False)
        if _is_collinear(src[sample]) or _is_collinear(dst[sample]):
            continue

        pose = _rigid_fit(src[sample], dst[sample])
        residuals = np.linalg.norm(pose.apply(src) - dst, axis=1)
        inliers = inlier_test(pose, src, dst)
        count = int(inliers.sum())
        mean = float(residuals[inliers].mean()) if count else np.inf

        if count > best_count or (count == best_count and mean < best_mean):
            best_pose, best_inliers, best_count, best_mean = pose, inliers, count, mean
            needed = _adaptive_iterations(count / n, params.ransac_confidence, 3)

    if best_inliers is None or best_count < 3:
        raise DegenerateConfigurationError("no non-degenerate 3-point sample found")

    pose, inliers = best_pose, best_inliers
    for _ in range(3):
        if _is_collinear(src[inliers]):
            break
        refit = _rigid_fit(src[inliers], dst[inliers])
        updated = inlier_test(refit, src, dst)
        if updated.sum() < 3:
            break
        pose = refit
        if np.array_equal(updated, inliers):
            break
        inliers = updated

    residuals = np.linalg.norm(pose.apply(src) - dst, axis=1)

    count = int(inliers.sum())

    return PoseEstimate(
        pose             =pose,
        inlier_count     =count,
        inlier_ratio     =count / n,
        mean_residual_mm =float(residuals[inliers].mean()) if count else 0.0,
        converged        =count >= 3,
        n_correspondences=n,
        inliers          =inliers,
    )


def lift_correspondences(corrs:CorrespondenceSet, disparity:DisparityMap, rig:StereoRig) -> tuple:

    """
    Camera-frame 3D points of the left-view correspondences via ``Z = f * B / d``
    sampled at the nearest pixel. Returns ``(object points, camera points)`` of the
    correspondences with a valid positive disparity.
    """

    if not rig.rectified:
        raise ConfigurationError("disparity lifting requires a rectified rig")

    left = corrs.view(LEFT)
    d, valid = disparity.sample(left.pixels)
    valid &= d > 0

    if not valid.any():
        return np.zeros((0, 3)), np.zeros((0, 3))

    Z = rig.left.fx * rig.baseline / d[valid]
    cam = backproject_pixels(left.pixels[valid], Z, rig.left)

    return left.points[valid], cam


def consistent_lifts(pose:Pose, obj:np.ndarray, cam:np.ndarray, rig:StereoRig, threshold_px:float) -> np.ndarray:

    """
    Mask of lifted pairs that agree with ``pose`` in image units: the predicted point
    reprojects within ``threshold_px`` of the lifted pixel and its disparity
    ``f * B / Z`` is within ``threshold_px`` of the measured one.
    """

    K = rig.left
    pred = pose.apply(np.asarray(obj, dtype=np.float64).reshape(-1, 3))
    cam = np.asarray(cam, dtype=np.float64).reshape(-1, 3)

    front = pred[:, 2] > 0
    z = np.where(front, pred[:, 2], 1.0)
    fB = K.fx * rig.baseline

    du = K.fx * (pred[:, 0] / z - cam[:, 0] / cam[:, 2])
    dv = K.fy * (pred[:, 1] / z - cam[:, 1] / cam[:, 2])
    dd = fB / z - fB / cam[:, 2]

    return front & (np.hypot(du, dv) < threshold_px) & (np.abs(dd) < threshold_px)


def disparity_3d3d_solve(corrs:CorrespondenceSet, disparity:DisparityMap, rig:StereoRig, params:SolverParams=None) -> PoseEstimate:

    """
    Lift left-view correspondences with the disparity map and align them to the
    object points with RANSAC-wrapped Kabsch; RANSAC inliers are the lifts that pass
    :func:`consistent_lifts` at ``params.ransac_threshold_px``.

    Raises:
    -------
    InsufficientDataError
        With fewer than 3 valid lifts.
    """

    params = params or SolverParams()

    obj, cam = lift_correspondences(corrs, disparity, rig)
    if obj.shape[0] < 3:
        raise InsufficientDataError(f"only {obj.shape[0]} correspondence(s) with valid disparity")

    est = kabsch_align(
        np.stack([obj, cam], axis=1), params, ransac=True,
        inlier_test=lambda pose, src, dst: consistent_lifts(pose, src, dst, rig, params.ransac_threshold_px),
    )

    left = corrs.view(LEFT)
    est.residuals = _reprojection_errors(est.pose, _single_view(left), _cameras(K=rig.left))
    est.mean_residual_px = float(np.mean(est.residuals[np.isfinite(est.residuals)])) if np.isfinite(est.residuals).any() else 0.0

    return est


def _quaternion_mean(rotations:list) -> np.ndarray:

    quats = Rotation.from_matrix(np.stack(rotations)).as_quat()
    reference = quats[0]
    aligned = np.array([q if q @ reference >= 0 else -q for q in quats])
    mean = aligned.sum(axis=0)

    return Rotation.from_quat(mean / np.linalg.norm(mean)).as_matrix()


def fuse_late(pose_left:PoseEstimate, pose_right:PoseEstimate, rig:StereoRig) -> PoseEstimate:

    """
    Combine per-view estimates: the right pose is mapped into the left frame, the
    translations averaged and the rotations averaged by the sign-aligned quaternion
    (chordal) mean. A non-converged input is ignored and the result flagged.
    """

    if not pose_left.converged or not pose_right.converged:

        if pose_left.converged or not pose_right.converged:
            logger.warning("Late fusion fell back to the left-view estimate")
            base = pose_left
            pose = pose_left.pose
        else:
            logger.warning("Late fusion fell back to the right-view estimate")
            base = pose_right
            pose = rig.from_view(pose_right.pose, RIGHT)

        return PoseEstimate(
            pose=pose, inlier_count=base.inlier_count, inlier_ratio=base.inlier_ratio,
            mean_residual_px=base.mean_residual_px, converged=base.converged, fallback=True,
            n_correspondences=base.n_correspondences,
        )

    right_in_left = rig.from_view(pose_right.pose, RIGHT)

    R = _quaternion_mean([pose_left.pose.rotation, right_in_left.rotation])
    t = 0.5 * (pose_left.pose.translation + right_in_left.translation)

    count = pose_left.inlier_count + pose_right.inlier_count
    total = pose_left.n_correspondences + pose_right.n_correspondences
    mean = (pose_left.mean_residual_px * pose_left.inlier_count + pose_right.mean_residual_px * pose_right.inlier_count) / count if count else 0.0

    return PoseEstimate(
        pose             =Pose(R, t),
        inlier_count     =count,
        inlier_ratio     =count / total if total else 0.0,
        mean_residual_px =float(mean),
        converged        =True,
        n_correspondences=total,
    )


def _stereo_corrs(inputs:FrameInputs) -> CorrespondenceSet:

    left = inputs.left.view(LEFT)
    if not _right_usable(inputs):
        return left

    right = CorrespondenceSet(inputs.right.pixels, inputs.right.points, inputs.right.weights, np.full(len(inputs.right), RIGHT, dtype=np.int8))

    return left.concat(right)


def _joint_refine(est:PoseEstimate, corrs:CorrespondenceSet, rig:StereoRig, params:SolverParams, depth_pairs=None) -> PoseEstimate:

    """Refine ``est`` over the reprojection inliers of both views (plus optional depth pairs)."""

    cameras = _cameras(rig)
    errors = _reprojection_errors(est.pose, corrs, cameras)
    inliers = errors < params.ransac_threshold_px

    if inliers.sum() < 3 and (depth_pairs is None or len(depth_pairs[0]) < 3):
        return est

    pose, _ = _levenberg_marquardt(
        est.pose, corrs.subset(inliers), cameras, params.refine_iterations,
        depth_pairs=depth_pairs, depth_weight=params.depth_weight, view_weights=params.view_weights,
    )

    errors = _reprojection_errors(pose, corrs, cameras)
    inliers = errors < params.ransac_threshold_px
    count = int(inliers.sum())

    mean_mm = None
    if depth_pairs is not None and len(depth_pairs[0]):
        mean_mm = float(np.linalg.norm(pose.apply(depth_pairs[0]) - depth_pairs[1], axis=1).mean())

    return PoseEstimate(
        pose             =pose,
        inlier_count     =count,
        inlier_ratio     =count / len(corrs),
        mean_residual_px =float(errors[inliers].mean()) if count else 0.0,
        mean_residual_mm =mean_mm,
        converged        =est.converged,
        fallback         =est.fallback,
        n_correspondences=len(corrs),
        residuals        =errors,
        inliers          =inliers,
    )


def _gated_depth_pairs(pose:Pose, inputs:FrameInputs, params:SolverParams):

    obj, cam = lift_correspondences(inputs.left, inputs.disparity, inputs.rig)
    if obj.shape[0] == 0:
        return None

    keep = consistent_lifts(pose, obj, cam, inputs.rig, params.ransac_threshold_px)
    if keep.sum() < 3:
        return None

    return obj[keep], cam[keep]


def _right_usable(inputs:FrameInputs) -> bool:

    """At least 4 right-view correspondences inside the right image, not all collinear."""

    right = inputs.right
    if right is None or len(right) < 4:
        return False

    try:
        _single_view(right).check_bounds(_cameras(K=inputs.rig.right))
    except ValidationError:
        return False

    return not _is_collinear(right.points)


def estimate(strategy, inputs:FrameInputs, params:SolverParams=None) -> PoseEstimate:

    """
    Dispatch one frame to the solver of ``strategy``.

    Stereo strategies whose second signal is missing or unusable degrade to their
    mono counterpart and flag the result; strategies that need a disparity map raise
    ``ConfigurationError`` when none is given.
    """

    strategy = FusionStrategy.from_name(strategy)
    params = params or SolverParams()

    if not isinstance(inputs, FrameInputs):
        raise TypeError("inputs should be a FrameInputs.")

    rig  = inputs.rig
    left = inputs.left.view(LEFT)
    name = strategy.value

    if strategy in (FusionStrategy.DISPARITY_3D3D, FusionStrategy.EARLY_JOINT_PNP_PLUS_DEPTH) and inputs.disparity is None:
        raise ConfigurationError(f"strategy {name} requires a disparity map")

    if strategy is FusionStrategy.MONO_LEFT:
        return pnp_solve(left, rig.left, params).with_strategy(name)

    if strategy is FusionStrategy.MID_JOINT_PNP:
        return joint_stereo_pnp(_stereo_corrs(inputs), rig, params).with_strategy(name, fallback=not _right_usable(inputs))

    if strategy in (FusionStrategy.LATE_POSE_COMBINE, FusionStrategy.DOUBLE_FUSION):

        if not _right_usable(inputs):
            logger.info("%s: right view unusable, solving the left view only", name)
            return pnp_solve(left, rig.left, params).with_strategy(name, fallback=True)

        est_l = pnp_solve(left, rig.left, params)
        try:
            est_r = pnp_solve(inputs.right, rig.right, params)
        except _VIEW_FAILURES as e:
            logger.info("%s: right view failed (%s), keeping the left-view pose", name, e)
            return est_l.with_strategy(name, fallback=True)
        fused = fuse_late(est_l, est_r, rig)

        if strategy is FusionStrategy.LATE_POSE_COMBINE:
            return fused.with_strategy(name)

        return _joint_refine(fused, _stereo_corrs(inputs), rig, params).with_strategy(name)

    if strategy is FusionStrategy.DISPARITY_3D3D:
        try:
            return disparity_3d3d_solve(left, inputs.disparity, rig, params).with_strategy(name)
        except (InsufficientDataError, DegenerateConfigurationError) as e:
            logger.info("%s: %s; solving the left view only", name, e)
            return pnp_solve(left, rig.left, params).with_strategy(name, fallback=True)

    # EARLY_JOINT_PNP_PLUS_DEPTH
    joint = joint_stereo_pnp(_stereo_corrs(inputs), rig, params)
    depth_pairs = _gated_depth_pairs(joint.pose, inputs, params)
    if depth_pairs is None:
        logger.info("%s: no usable disparity lifts, keeping the joint PnP pose", name)
        return joint.with_strategy(name, fallback=True)

    return _joint_refine(joint, _stereo_corrs(inputs), rig, params, depth_pairs).with_strategy(name, fallback=not _right_usable(inputs))
