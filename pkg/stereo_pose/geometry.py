"""
Pinhole camera math, rigid transforms, stereo rigs and bounding boxes.

Conventions used throughout the package: right-handed camera frames with +Z
forward, +X right and +Y down (BOP), millimetres for 3D quantities and pixels
for image quantities. Pixel ``(u, v)`` denotes the centre of column ``u`` and
row ``v``. Poses map object-frame points into a camera frame.

Classes:
--------
Pose
    Rigid transform (rotation + translation in mm).
CameraIntrinsics
    Pinhole intrinsics plus image size.
StereoRig
    Two cameras and the left-to-right extrinsic.
BoundingBox
    Half-open pixel box.
"""

from dataclasses import dataclass

import numpy as np

from scipy.spatial.transform import Rotation

from stereo_pose.errors import BehindCameraError, InvalidDepthError, InvalidDisparityError, InvalidRotationError

ORTHONORMAL_TOL = 1e-6
RECTIFIED_TOL   = 1e-6

LEFT  = 0
RIGHT = 1


def _frozen(array:np.ndarray, shape:tuple) -> np.ndarray:

    out = np.array(array, dtype=np.float64, copy=True)
    if out.shape != shape:
        out = out.reshape(shape)
    out.setflags(write=False)

    return out


def check_rotation(R:np.ndarray, tol:float=ORTHONORMAL_TOL) -> np.ndarray:

    """
    Validate that ``R`` is a proper 3x3 rotation matrix.

    Raises
    ------
    InvalidRotationError
        If ``R`` is not 3x3, not orthonormal within ``tol`` or has det != +1.
    """

    R = np.asarray(R, dtype=np.float64)

    if R.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation contains non-finite entries")
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol:
        raise InvalidRotationError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidRotationError("rotation has determinant != +1")

    return R


@dataclass(frozen=True, eq=False)
class Pose:

    """
    Rigid transform mapping object-frame points to a camera frame.

    ``x_cam = rotation @ x_obj + translation``, translation in millimetres.
    """

    rotation   : np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:

        R = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)

        if t.shape != (3,):
            raise ValueError(f"translation must have 3 entries, got {t.shape[0]}")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation contains non-finite entries")

        object.__setattr__(self, 'rotation', _frozen(R, (3, 3)))
        object.__setattr__(self, 'translation', _frozen(t, (3,)))

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec:np.ndarray, translation:np.ndarray) -> 'Pose':
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, T:np.ndarray) -> 'Pose':

        T = np.asarray(T, dtype=np.float64)
        if T.shape not in [(4, 4), (3, 4)]:
            raise ValueError(f"expected a 4x4 or 3x4 matrix, got {T.shape}")

        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:

        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3]  = self.translation

        return T

    def apply(self, points:np.ndarray) -> np.ndarray:

        """Transform an (N, 3) array (or a single 3-vector) of object points."""

        points = np.asarray(points, dtype=np.float64)

        return points @ self.rotation.T + self.translation

    def compose(self, other:'Pose') -> 'Pose':

        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""

        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def invert(self) -> 'Pose':

        Rt = self.rotation.T

        return Pose(Rt, -Rt @ self.translation)

    def perturb(self, delta:np.ndarray) -> 'Pose':

        """
        Apply a 6-vector increment ``(omega, dt)``: the rotation is updated on the
        left by ``exp(omega)`` and the translation by ``dt``.
        """

        delta = np.asarray(delta, dtype=np.float64)
        dR = Rotation.from_rotvec(delta[:3]).as_matrix()

        return Pose(dR @ self.rotation, self.translation + delta[3:])

    def allclose(self, other:'Pose', rtol:float=0.0, atol:float=1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=rtol, atol=atol) and np.allclose(self.translation, other.translation, rtol=rtol, atol=atol)
        )

    def __repr__(self) -> str:
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 4).tolist()})"


def invert(pose:Pose) -> Pose:
    return pose.invert()


def compose(a:Pose, b:Pose) -> Pose:
    return a.compose(b)


def rot_x(angle:float) -> np.ndarray:
    return Rotation.from_euler('x', angle).as_matrix()


def rot_y(angle:float) -> np.ndarray:
    return Rotation.from_euler('y', angle).as_matrix()


def rot_z(angle:float) -> np.ndarray:
    return Rotation.from_euler('z', angle).as_matrix()


def random_rotation(rng:np.random.Generator) -> np.ndarray:

    """Rotation drawn uniformly (Haar measure) from SO(3)."""

    return Rotation.random(random_state=rng).as_matrix()


def look_at(center:np.ndarray, target:np.ndarray, down:np.ndarray=(0.0, 1.0, 0.0)) -> Pose:

    """
    World-to-camera pose of a camera at ``center`` looking at ``target``.

    The camera +Y axis is aligned with the projection of ``down`` so that a camera
    at the origin looking along +Z yields the identity pose.
    """

    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    down   = np.asarray(down, dtype=np.float64)

    forward = target - center
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera centre and target coincide")
    forward /= norm

    x_axis = np.cross(down, forward)
    if np.linalg.norm(x_axis) < 1e-9:
        raise ValueError("viewing direction is parallel to the down vector")
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)

    R = np.vstack([x_axis, y_axis, forward])

    return Pose(R, -R @ center)


def rotation_geodesic(Ra:np.ndarray, Rb:np.ndarray) -> float:

    """
    Geodesic distance (radians, in [0, pi]) between two rotations.

    Raises
    ------
    InvalidRotationError
        If either input is not orthonormal within 1e-6.
    """

    Ra = check_rotation(Ra)
    Rb = check_rotation(Rb)

    cos_angle = (np.trace(Ra.T @ Rb) - 1.0) / 2.0

    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))


@dataclass(frozen=True)
class CameraIntrinsics:

    """Pinhole intrinsics (pixels) and image size."""

    fx    : float
    fy    : float
    cx    : float
    cy    : float
    width : int
    height: int

    def __post_init__(self) -> None:

        for name in ['fx', 'fy', 'cx', 'cy']:
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)):
                raise TypeError(f"{name} should be a number.")
            object.__setattr__(self, name, float(value))

        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths fx and fy must be positive")

        for name in ['width', 'height']:
            value = getattr(self, name)
            if int(value) != value or int(value) < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(value))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, K:np.ndarray, width:int, height:int) -> 'CameraIntrinsics':

        K = np.asarray(K, dtype=np.float64).reshape(3, 3)

        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height)

    def scaled(self, factor:float) -> 'CameraIntrinsics':

        """Intrinsics of the same camera rendered at ``factor`` times the resolution."""

        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
        )


def project(point:np.ndarray, K:CameraIntrinsics) -> tuple:

    """
    Project a camera-frame point (mm) to pixel coordinates.

    Raises
    ------
    BehindCameraError
        If the point has z <= 0.
    """

    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)

    if not z > 0:
        raise BehindCameraError(f"cannot project point with z={z}")

    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def project_points(points:np.ndarray, K:CameraIntrinsics) -> np.ndarray:

    """Vectorised :func:`project` for an (N, 3) array; raises if any z <= 0."""

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]

    if np.any(~(z > 0)):
        raise BehindCameraError(f"{int(np.sum(~(z > 0)))} point(s) with z <= 0")

    return np.stack([K.fx * points[:, 0] / z + K.cx, K.fy * points[:, 1] / z + K.cy], axis=1)


def backproject(pixel:tuple, depth:float, K:CameraIntrinsics) -> np.ndarray:

    """
    Camera-frame point at ``depth`` (mm, z-coordinate) under ``pixel``.

    Raises
    ------
    InvalidDepthError
        If depth <= 0.
    """

    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")

    u, v = pixel

    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, float(depth)])


def backproject_pixels(pixels:np.ndarray, depths:np.ndarray, K:CameraIntrinsics) -> np.ndarray:

    """Vectorised :func:`backproject`; ``pixels`` is (N, 2), ``depths`` is (N,)."""

    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)

    if np.any(~(depths > 0)):
        raise InvalidDepthError(f"{int(np.sum(~(depths > 0)))} non-positive depth value(s)")

    return np.stack([
        (pixels[:, 0] - K.cx) * depths / K.fx,
        (pixels[:, 1] - K.cy) * depths / K.fy,
        depths,
    ], axis=1)


def disparity_depth(value, f:float, baseline:float, direction:str='depth_to_disparity'):

    """
    Convert depth (mm) to disparity (px) or back: ``d = f * B / Z`` and ``Z = f * B / d``.

    Both directions share the same formula so the conversion is an involution.
    ``value`` may be a scalar or an array.

    Raises
    ------
    InvalidDisparityError
        If any value is <= 0 (zero disparity means infinite depth).
    """

    if direction not in ['depth_to_disparity', 'disparity_to_depth']:
        raise ValueError(f"unknown direction: {direction}")
    if not f > 0:
        raise ValueError("focal length must be positive")
    if not baseline > 0:
        raise ValueError("baseline must be positive")

    value = np.asarray(value, dtype=np.float64)
    if np.any(~(value > 0)):
        raise InvalidDisparityError(f"{direction.split('_')[0]} must be positive")

    out = (f * baseline) / value

    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StereoRig:

    """
    Two pinhole cameras and the extrinsic mapping left-camera points to the right
    camera frame. A rectified rig has identity rotation and translation (-B, 0, 0).
    """

    left         : CameraIntrinsics
    right        : CameraIntrinsics
    extrinsic_l2r: Pose
    rectified    : bool = True

    def __post_init__(self) -> None:

        if not isinstance(self.extrinsic_l2r, Pose):
            raise TypeError("extrinsic_l2r should be a Pose.")
        if self.baseline <= 0:
            raise ValueError("stereo baseline must be positive")

        if self.rectified:
            R = self.extrinsic_l2r.rotation
            t = self.extrinsic_l2r.translation
            if np.abs(R - np.eye(3)).max() > RECTIFIED_TOL:
                raise ValueError("rectified rig requires identity extrinsic rotation")
            if abs(t[1]) > RECTIFIED_TOL or abs(t[2]) > RECTIFIED_TOL or not t[0] < 0:
                raise ValueError("rectified rig requires extrinsic translation (-B, 0, 0) with B > 0")
            if self.left.height != self.right.height or abs(self.left.fy - self.right.fy) > RECTIFIED_TOL or abs(self.left.cy - self.right.cy) > RECTIFIED_TOL:
                raise ValueError("rectified rig requires row-aligned cameras (equal fy, cy and height)")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.extrinsic_l2r.translation))

    @classmethod
    def rectified_pair(cls, K:CameraIntrinsics, baseline:float) -> 'StereoRig':

        """Rectified rig of two identical cameras, right camera ``baseline`` mm to the right."""

        if not baseline > 0:
            raise ValueError("baseline must be positive")

        return cls(K, K, Pose(np.eye(3), np.array([-float(baseline), 0.0, 0.0])), rectified=True)

    def camera(self, view:int) -> CameraIntrinsics:
        return self.left if view == LEFT else self.right

    def extrinsic(self, view:int) -> Pose:

        """Pose mapping left-camera points into camera ``view``."""

        return Pose.identity() if view == LEFT else self.extrinsic_l2r

    def to_view(self, pose_left:Pose, view:int) -> Pose:

        """Express an object-to-left-camera pose in camera ``view``."""

        return pose_left if view == LEFT else self.extrinsic_l2r.compose(pose_left)

    def from_view(self, pose_view:Pose, view:int) -> Pose:

        """Inverse of :meth:`to_view`."""

        return pose_view if view == LEFT else self.extrinsic_l2r.invert().compose(pose_view)


@dataclass(frozen=True)
class BoundingBox:

    """Half-open pixel box ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:

        for name in ['x_min', 'y_min', 'x_max', 'y_max']:
            value = getattr(self, name)
            if int(value) != value:
                raise ValueError(f"{name} must be an integer pixel coordinate")
            object.__setattr__(self, name, int(value))

        if not self.x_min < self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be < x_max ({self.x_max})")
        if not self.y_min < self.y_max:
            raise ValueError(f"y_min ({self.y_min}) must be < y_max ({self.y_max})")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @classmethod
    def from_xywh(cls, box) -> 'BoundingBox':
        x, y, w, h = [int(v) for v in box]
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> list:
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_mask(cls, mask:np.ndarray):

        """Tight box of the true pixels of ``mask``, or ``None`` if the mask is empty."""

        rows = np.flatnonzero(np.any(mask, axis=1))
        cols = np.flatnonzero(np.any(mask, axis=0))

        if rows.size == 0:
            return None

        return cls(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)

    def clip(self, width:int, height:int):

        """Intersection with the image ``[0, width) x [0, height)``, ``None`` if empty."""

        x0, y0 = max(self.x_min, 0), max(self.y_min, 0)
        x1, y1 = min(self.x_max, width), min(self.y_max, height)

        if x0 >= x1 or y0 >= y1:
            return None

        return BoundingBox(x0, y0, x1, y1)

    def contains(self, u, v) -> np.ndarray:
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= self.x_min) & (u < self.x_max) & (v >= self.y_min) & (v < self.y_max)


def unify_bboxes(left:BoundingBox, right:BoundingBox) -> BoundingBox:

    """
    Minimal box containing both inputs. Callers crop BOTH views with the returned
    box, which keeps the image rows of the two crops aligned for stereo matching.
    """

    return BoundingBox(
        min(left.x_min, right.x_min),
        min(left.y_min, right.y_min),
        max(left.x_max, right.x_max),
        max(left.y_max, right.y_max),
    )
