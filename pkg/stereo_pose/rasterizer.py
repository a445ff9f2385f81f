"""
Software rasterization of triangle meshes into dense ground-truth feature maps.

Every pixel is sampled once at its centre; depth and object coordinates come from
the exact intersection of the pixel ray with the winning triangle (perspective
correct barycentrics), so labels are crisp and satisfy the projection
invariants to floating-point precision.

Functions:
----------
- rasterize: depth, mask, XYZ object coordinates and region ids of one mesh.
- render_scene: joint z-buffer over several instances plus per-instance silhouettes.
- compute_visibility: visible fraction of every instance of a scene.
- self_occlusion_maps: ray/coordinate-plane intersections (six layers).
- region_partition: farthest-point surface regions on face centroids.
- shade_gray: flat-shaded, procedurally textured grayscale image of feature maps.
"""

import logging

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from stereo_pose.geometry import BoundingBox, CameraIntrinsics, Pose

logger = logging.getLogger(__name__)

REGION_BACKGROUND   = -1
INSTANCE_BACKGROUND = -1
NEAR_PLANE_MM       = 1.0
PARALLEL_EPS        = 1e-9
DEGENERATE_AREA_MM2 = 1e-12
DEFAULT_REGIONS     = 64

_INSIDE_EPS = 1e-10


def _hull_points(points:np.ndarray) -> np.ndarray:

    """Vertices of the convex hull; flat sets use the hull in their own plane, collinear sets their two ends."""

    if points.shape[0] < 3:
        return points

    try:
        return points[ConvexHull(points).vertices]
    except QhullError:
        pass

    centered = points - points.mean(axis=0)
    _, _, Vt = np.linalg.svd(centered, full_matrices=False)

    try:
        return points[ConvexHull(centered @ Vt[:2].T).vertices]
    except QhullError:
        along = centered @ Vt[0]
        return points[[int(np.argmin(along)), int(np.argmax(along))]]


@dataclass(frozen=True, eq=False)
class TriMesh:

    """
    Triangle mesh in the object frame (mm) with one surface-region id per face.
    """

    vertices      : np.ndarray
    faces         : np.ndarray
    region_of_face: np.ndarray = None
    name          : str = ''

    def __post_init__(self) -> None:

        vertices = np.array(self.vertices, dtype=np.float64, copy=True)
        faces    = np.array(self.faces, dtype=np.int64, copy=True)

        if vertices.ndim != 2 or vertices.shape[1] != 3 or vertices.shape[0] == 0:
            raise ValueError(f"vertices must be a non-empty (N, 3) array, got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3 or faces.shape[0] == 0:
            raise ValueError(f"faces must be a non-empty (M, 3) array, got {faces.shape}")
        if faces.min() < 0 or faces.max() >= vertices.shape[0]:
            raise ValueError("face indices out of range")

        if self.region_of_face is None:
            regions = np.zeros(faces.shape[0], dtype=np.int32)
        else:
            regions = np.array(self.region_of_face, dtype=np.int32, copy=True).reshape(-1)
            if regions.shape[0] != faces.shape[0]:
                raise ValueError("region_of_face needs one entry per face")
            if regions.min() < 0:
                raise ValueError("region ids must be non-negative")

        for array in [vertices, faces, regions]:
            array.setflags(write=False)

        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'faces', faces)
        object.__setattr__(self, 'region_of_face', regions)

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @cached_property
    def face_areas(self) -> np.ndarray:

        v0, v1, v2 = (self.vertices[self.faces[:, i]] for i in range(3))

        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    @cached_property
    def degenerate_faces(self) -> np.ndarray:
        return self.face_areas <= DEGENERATE_AREA_MM2

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @cached_property
    def diameter(self) -> float:

        """Largest distance between two vertices (computed on the convex hull)."""

        if self.vertices.shape[0] < 2:
            return 0.0

        return float(pdist(_hull_points(self.vertices)).max())

    @cached_property
    def extents(self) -> np.ndarray:
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    @cached_property
    def bounding_radius(self) -> float:

        """Radius of the origin-centred sphere enclosing the mesh."""

        return float(np.linalg.norm(self.vertices, axis=1).max())

    def with_regions(self, region_of_face:np.ndarray) -> 'TriMesh':
        return TriMesh(self.vertices, self.faces, region_of_face, self.name)


def merge_meshes(meshes:list, name:str='') -> TriMesh:

    """Concatenate meshes into one; region ids of later parts are offset to stay distinct."""

    if len(meshes) == 0:
        raise ValueError("nothing to merge")

    vertices, faces, regions = [], [], []
    v_offset, r_offset = 0, 0

    for mesh in meshes:
        vertices.append(mesh.vertices)
        faces.append(mesh.faces + v_offset)
        regions.append(mesh.region_of_face + r_offset)
        v_offset += mesh.vertices.shape[0]
        r_offset += int(mesh.region_of_face.max()) + 1

    return TriMesh(np.vstack(vertices), np.vstack(faces), np.concatenate(regions), name)


@dataclass(eq=False)
class DenseFeatureMaps:

    """
    Per-pixel ground-truth features of one view.

    ``xyz`` holds object-frame coordinates (mm) of the visible surface point, ``selfocc``
    the six self-occlusion coordinates with three validity flags (planes X=0, Y=0, Z=0).
    ``instance`` is present on scene-level maps and tells which instance owns a pixel.
    """

    mask         : np.ndarray
    depth        : np.ndarray
    xyz          : np.ndarray
    region       : np.ndarray
    selfocc      : np.ndarray = None
    selfocc_valid: np.ndarray = None
    disparity    : np.ndarray = None
    instance     : np.ndarray = None

    def __post_init__(self) -> None:

        if self.mask.ndim != 2:
            raise ValueError("mask must be an (H, W) array")

        H, W = self.mask.shape
        expected = {
            'depth'        : (H, W),
            'xyz'          : (H, W, 3),
            'region'       : (H, W),
            'selfocc'      : (H, W, 6),
            'selfocc_valid': (H, W, 3),
            'disparity'    : (H, W),
            'instance'     : (H, W),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value is not None and value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @classmethod
    def empty(cls, height:int, width:int) -> 'DenseFeatureMaps':
        return cls(
            mask  =np.zeros((height, width), dtype=bool),
            depth =np.zeros((height, width), dtype=np.float64),
            xyz   =np.zeros((height, width, 3), dtype=np.float64),
            region=np.full((height, width), REGION_BACKGROUND, dtype=np.int32),
        )

    def channels(self) -> dict:

        """Non-empty channels keyed by field name."""

        return {
            name: getattr(self, name)
            for name in ['mask', 'depth', 'xyz', 'region', 'selfocc', 'selfocc_valid', 'disparity', 'instance']
            if getattr(self, name) is not None
        }

    def for_instance(self, inst_id:int) -> 'DenseFeatureMaps':

        """Maps restricted to the pixels owned by ``inst_id`` (scene-level maps only)."""

        if self.instance is None:
            raise ValueError("maps carry no instance channel")

        own = self.instance == inst_id

        def _masked(array, fill):
            if array is None:
                return None
            out = array.copy()
            out[~own] = fill
            return out

        return DenseFeatureMaps(
            mask         =own,
            depth        =_masked(self.depth, 0.0),
            xyz          =_masked(self.xyz, 0.0),
            region       =_masked(self.region, REGION_BACKGROUND),
            selfocc      =_masked(self.selfocc, 0.0),
            selfocc_valid=_masked(self.selfocc_valid, False),
            disparity    =_masked(self.disparity, 0.0),
        )


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _rasterize_into(mesh:TriMesh, pose:Pose, K:CameraIntrinsics, depth:np.ndarray, xyz:np.ndarray, region:np.ndarray) -> int:

    """
    Z-buffer ``mesh`` into the given buffers (depth 0 = empty). Returns the number of
    degenerate faces that were skipped.
    """

    H, W = depth.shape

    cam = pose.apply(mesh.vertices)
    z = cam[:, 2]
    in_front = z > NEAR_PLANE_MM

    uv = np.zeros((cam.shape[0], 2))
    uv[in_front, 0] = K.fx * cam[in_front, 0] / z[in_front] + K.cx
    uv[in_front, 1] = K.fy * cam[in_front, 1] / z[in_front] + K.cy
    inv_z = np.zeros_like(z)
    inv_z[in_front] = 1.0 / z[in_front]

    faces = mesh.faces
    degenerate = mesh.degenerate_faces
    drawable = in_front[faces].all(axis=1) & ~degenerate

    for f in np.flatnonzero(drawable):

        i0, i1, i2 = faces[f]
        (u0, v0), (u1, v1), (u2, v2) = uv[i0], uv[i1], uv[i2]

        x0 = max(int(np.ceil(min(u0, u1, u2))), 0)
        x1 = min(int(np.floor(max(u0, u1, u2))), W - 1)
        y0 = max(int(np.ceil(min(v0, v1, v2))), 0)
        y1 = min(int(np.floor(max(v0, v1, v2))), H - 1)
        if x0 > x1 or y0 > y1:
            continue

        area = _edge(u0, v0, u1, v1, u2, v2)
        if abs(area) < 1e-12:
            # triangle seen edge-on
            continue

        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64), np.arange(y0, y1 + 1, dtype=np.float64))

        w0 = _edge(u1, v1, u2, v2, px, py) / area
        w1 = _edge(u2, v2, u0, v0, px, py) / area
        w2 = 1.0 - w0 - w1

        inside = (w0 >= -_INSIDE_EPS) & (w1 >= -_INSIDE_EPS) & (w2 >= -_INSIDE_EPS)
        if not inside.any():
            continue

        # perspective-correct interpolation: 1/z is affine in screen space
        iz0, iz1, iz2 = w0 * inv_z[i0], w1 * inv_z[i1], w2 * inv_z[i2]
        iz = iz0 + iz1 + iz2
        z_pix = 1.0 / iz

        current = depth[y0:y1 + 1, x0:x1 + 1]
        wins = inside & ((current == 0.0) | (z_pix < current))
        if not wins.any():
            continue

        b0 = (iz0 * z_pix)[wins]
        b1 = (iz1 * z_pix)[wins]
        b2 = (iz2 * z_pix)[wins]
        V = mesh.vertices

        rows, cols = np.nonzero(wins)
        rows += y0
        cols += x0

        depth[rows, cols]  = z_pix[wins]
        xyz[rows, cols]    = b0[:, None] * V[i0] + b1[:, None] * V[i1] + b2[:, None] * V[i2]
        region[rows, cols] = mesh.region_of_face[f]

    return int(degenerate.sum())


def rasterize(mesh:TriMesh, pose:Pose, K:CameraIntrinsics) -> DenseFeatureMaps:

    """
    Render mask, depth, XYZ object coordinates and region ids of ``mesh`` under ``pose``.

    Both faces of every triangle are drawn (no culling); triangles with a vertex
    closer than the 1 mm near plane are skipped, so an object entirely behind the
    camera yields an empty mask.
    """

    if not isinstance(mesh, TriMesh):
        raise TypeError("mesh should be a TriMesh.")
    if not isinstance(pose, Pose):
        raise TypeError("pose should be a Pose.")

    maps = DenseFeatureMaps.empty(K.height, K.width)
    skipped = _rasterize_into(mesh, pose, K, maps.depth, maps.xyz, maps.region)

    if skipped:
        logger.warning("Skipped %d degenerate face(s) of mesh '%s'", skipped, mesh.name)

    maps.mask[:] = maps.depth > 0.0

    return maps


@dataclass(eq=False)
class SceneRender:

    """Joint z-buffer of a scene and per-instance silhouette sizes."""

    maps        : DenseFeatureMaps
    alone_pixels: np.ndarray = field(default=None)
    alone_bboxes: list = field(default=None)

    @property
    def visible_pixels(self) -> np.ndarray:
        counts = np.bincount(self.maps.instance[self.maps.mask].ravel(), minlength=len(self.alone_pixels))
        return counts[:len(self.alone_pixels)]

    @property
    def visibility(self) -> np.ndarray:

        alone = self.alone_pixels.astype(np.float64)
        out = np.zeros_like(alone)
        np.divide(self.visible_pixels, alone, out=out, where=alone > 0)

        return out


def render_scene(scene:list, K:CameraIntrinsics, with_selfocc:bool=True) -> SceneRender:

    """
    Render a list of ``(mesh, pose)`` instances.

    Every instance is rasterized once on its own; its silhouette size is recorded
    and its pixels are merged into the joint z-buffer, giving the scene-level maps
    with an ``instance`` channel (index into ``scene``) in the same pass.
    """

    if len(scene) == 0:
        raise ValueError("scene must contain at least one object")

    H, W = K.height, K.width
    joint = DenseFeatureMaps.empty(H, W)
    joint.instance = np.full((H, W), INSTANCE_BACKGROUND, dtype=np.int32)

    alone_pixels = np.zeros(len(scene), dtype=np.int64)
    alone_bboxes = []

    for idx, (mesh, pose) in enumerate(scene):

        alone = rasterize(mesh, pose, K)
        alone_pixels[idx] = int(alone.mask.sum())
        alone_bboxes.append(BoundingBox.from_mask(alone.mask))

        closer = alone.mask & (~joint.mask | (alone.depth < joint.depth))

        joint.depth[closer]    = alone.depth[closer]
        joint.xyz[closer]      = alone.xyz[closer]
        joint.region[closer]   = alone.region[closer]
        joint.instance[closer] = idx
        joint.mask |= closer

    if with_selfocc:
        H, W = joint.mask.shape
        joint.selfocc       = np.zeros((H, W, 6))
        joint.selfocc_valid = np.zeros((H, W, 3), dtype=bool)
        for idx, (_, pose) in enumerate(scene):
            own = joint.instance == idx
            if own.any():
                values, flags = self_occlusion_maps(pose, K, own)
                joint.selfocc[own]       = values[own]
                joint.selfocc_valid[own] = flags[own]

    return SceneRender(maps=joint, alone_pixels=alone_pixels, alone_bboxes=alone_bboxes)


def compute_visibility(scene:list, K:CameraIntrinsics) -> np.ndarray:

    """
    Visible fraction of every instance: pixels it wins in the joint z-buffer over
    pixels it covers when rendered alone (0 when it is outside the image).
    """

    return render_scene(scene, K, with_selfocc=False).visibility


def self_occlusion_maps(pose:Pose, K:CameraIntrinsics, mask:np.ndarray) -> tuple:

    """
    Intersections of every foreground pixel ray with the object planes X=0, Y=0, Z=0.

    Returns ``(values, flags)``: ``values`` is (H, W, 6) holding (y, z) on X=0,
    (x, z) on Y=0 and (x, y) on Z=0 in object coordinates (mm); ``flags`` is
    (H, W, 3) and is False where the unit ray is parallel to the plane
    (|ray . normal| < 1e-9). Intersections behind the camera are kept as computed.
    """

    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape

    values = np.zeros((H, W, 6))
    flags  = np.zeros((H, W, 3), dtype=bool)

    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return values, flags

    rays = np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones(rows.size)], axis=1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    R, t = pose.rotation, pose.translation
    origin = -R.T @ t
    directions = rays @ R

    for axis in range(3):

        others = [a for a in range(3) if a != axis]
        denom = directions[:, axis]
        valid = np.abs(denom) >= PARALLEL_EPS

        s = np.zeros_like(denom)
        s[valid] = -origin[axis] / denom[valid]
        points = origin + s[:, None] * directions

        pair = points[:, others]
        pair[~valid] = 0.0

        values[rows, cols, 2 * axis:2 * axis + 2] = pair
        flags[rows, cols, axis] = valid

    return values, flags


def region_partition(mesh:TriMesh, k:int=DEFAULT_REGIONS, seed:int=0) -> np.ndarray:

    """
    Partition the surface into ``k`` regions: farthest-point sampling of ``k`` face
    centroids (first seed drawn from ``seed``), then nearest-seed assignment.
    """

    if not isinstance(k, (int, np.integer)):
        raise TypeError("k should be of type int.")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > mesh.n_faces:
        raise ValueError(f"k={k} exceeds the number of faces ({mesh.n_faces})")

    centroids = mesh.face_centroids
    rng = np.random.default_rng(seed)

    seeds = [int(rng.integers(mesh.n_faces))]
    dist = np.linalg.norm(centroids - centroids[seeds[0]], axis=1)

    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(centroids - centroids[nxt], axis=1))

    _, labels = cKDTree(centroids[seeds]).query(centroids)

    return labels.astype(np.int32)


def _hash01(cells:np.ndarray) -> np.ndarray:
    return np.modf(np.abs(np.sin(cells @ np.array([12.9898, 78.233, 37.719])) * 43758.5453))[0]


def shade_gray(maps:DenseFeatureMaps, texture_mm:float=3.0, background:int=24) -> np.ndarray:

    """
    Flat-shaded grayscale rendering: one gray level per region plus a procedural
    texture keyed on object coordinates, so both views of a surface point look alike.
    """

    H, W = maps.mask.shape
    image = np.full((H, W), float(background))

    fg = maps.mask
    if fg.any():
        base = 70.0 + (maps.region[fg].astype(np.float64) * 37.0) % 110.0
        instance = maps.instance[fg] if maps.instance is not None else np.zeros(int(fg.sum()))
        cells = np.floor(maps.xyz[fg] / texture_mm) + 101.0 * instance[:, None]
        image[fg] = base + 70.0 * _hash01(cells)

    return np.clip(np.round(image), 0, 255).astype(np.uint8)
