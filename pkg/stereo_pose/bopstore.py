"""
BOP-format stereo scenes, object models and the compressed dense-feature archive.

On-disk layout of one scene (``######`` = zero-padded ids)::

    <root>/<scene_id>/left/rgb/<frame>.png       8-bit RGB
    <root>/<scene_id>/left/depth/<frame>.png     16-bit, depth_scale mm per unit
    <root>/<scene_id>/right/...                  same for the right camera
    <root>/<scene_id>/scene_gt.json              labels (both views per entry)
    <root>/<scene_id>/scene_camera.json          cam_K, depth_scale, cam_R_w2c, cam_t_w2c
    <root>/<scene_id>/stereo_rig.json            baseline, R, t (left -> right), both K
    <root>/<scene_id>/scene_layout.json          every placed instance (scene frame)
    <root>/<scene_id>/features/{left,right}/<frame>.spkf

Object models live in ``<root>/models`` as ASCII PLY files plus ``models_info.json``.
"""

import io
import json
import logging
import os
import struct
import zlib

from dataclasses import dataclass, field

import numpy as np

from PIL import Image

from stereo_pose.errors import ArchiveVersionError, CorruptArchiveError, SceneFormatError, ValidationError
from stereo_pose.geometry import BoundingBox, CameraIntrinsics, Pose, StereoRig
from stereo_pose.Helpers import atomic_write_bytes, atomic_write_json
from stereo_pose.meshes import ObjectModel
from stereo_pose.rasterizer import DenseFeatureMaps, TriMesh

logger = logging.getLogger(__name__)

DEPTH_SCALE = 0.1
MIN_VISIB   = 0.10
VIEWS       = ('left', 'right')

ARCHIVE_MAGIC   = b'SPKF'
ARCHIVE_VERSION = 1

# field name -> channel tag (at most 8 ASCII bytes)
CHANNEL_TAGS = {
    'mask'         : 'mask',
    'depth'        : 'depth',
    'xyz'          : 'xyz',
    'region'       : 'region',
    'selfocc'      : 'selfocc',
    'selfocc_valid': 'selfval',
    'disparity'    : 'disp',
    'instance'     : 'instance',
}
_TAG_FIELDS  = {tag: name for name, tag in CHANNEL_TAGS.items()}
_REQUIRED    = ['mask', 'depth', 'xyz', 'region']
_HEADER      = struct.Struct('<4sHH')
_ENTRY       = struct.Struct('<8s8sIIIQ')
_CRC         = struct.Struct('<I')


@dataclass(eq=False)
class FrameAnnotation:

    """One object label of a stereo frame; ``pose`` is object -> left camera."""

    obj_id           : int
    pose             : Pose
    visib_fract_left : float
    visib_fract_right: float
    bbox_left        : BoundingBox
    bbox_right       : BoundingBox
    inst_id          : int = -1

    def __post_init__(self) -> None:

        if not isinstance(self.pose, Pose):
            raise TypeError("pose should be a Pose.")
        for name in ['visib_fract_left', 'visib_fract_right']:
            value = getattr(self, name)
            if value is None or not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(eq=False)
class StereoFrame:

    """
    One stereo frame. Image and feature arrays are optional: they are written when
    present and loaded on demand by :func:`read_scene` (``load_images=True``).
    """

    frame_id      : int
    annotations   : list = field(default_factory=list)
    cam_pose      : Pose = None
    rgb_left      : np.ndarray = None
    rgb_right     : np.ndarray = None
    depth_left    : np.ndarray = None
    depth_right   : np.ndarray = None
    features_left : DenseFeatureMaps = None
    features_right: DenseFeatureMaps = None

    def image(self, view:str, kind:str):
        return getattr(self, f"{kind}_{view}")


@dataclass(eq=False)
class StereoScene:

    scene_id   : int
    rig        : StereoRig
    frames     : list = field(default_factory=list)
    depth_scale: float = DEPTH_SCALE
    layout     : list = None

    def frame(self, frame_id:int) -> StereoFrame:
        for frame in self.frames:
            if frame.frame_id == frame_id:
                return frame
        raise KeyError(f"frame {frame_id} not in scene {self.scene_id}")


def scene_path(root:str, scene_id:int) -> str:
    return os.path.join(root, f"{int(scene_id):06d}")


def image_path(scene_dir:str, view:str, kind:str, frame_id:int) -> str:
    return os.path.join(scene_dir, view, kind, f"{int(frame_id):06d}.png")


def features_path(scene_dir:str, view:str, frame_id:int) -> str:
    return os.path.join(scene_dir, 'features', view, f"{int(frame_id):06d}.spkf")


def list_scenes(root:str) -> list:

    """Sorted scene ids found under ``root``."""

    if not os.path.isdir(root):
        raise FileNotFoundError(f"Dataset root does not exist: {root}")

    return sorted(
        int(name) for name in os.listdir(root)
        if name.isdigit() and os.path.isfile(os.path.join(root, name, 'scene_gt.json'))
    )


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]


def _pose_entry(pose:Pose, r_key:str, t_key:str) -> dict:
    return {r_key: _floats(pose.rotation), t_key: _floats(pose.translation)}


def _annotation_to_json(ann:FrameAnnotation) -> dict:

    entry = {'obj_id': int(ann.obj_id), 'inst_id': int(ann.inst_id)}
    entry.update(_pose_entry(ann.pose, 'cam_R_m2c', 'cam_t_m2c'))
    entry.update({
        'visib_fract_left' : float(ann.visib_fract_left),
        'visib_fract_right': float(ann.visib_fract_right),
        'bbox_left'        : ann.bbox_left.to_xywh(),
        'bbox_right'       : ann.bbox_right.to_xywh(),
    })

    return entry


def _rig_to_json(rig:StereoRig) -> dict:
    return {
        'baseline' : rig.baseline,
        'R'        : _floats(rig.extrinsic_l2r.rotation),
        't'        : _floats(rig.extrinsic_l2r.translation),
        'rectified': bool(rig.rectified),
        'cam_K_left' : _floats(rig.left.matrix),
        'cam_K_right': _floats(rig.right.matrix),
        'width'    : int(rig.left.width),
        'height'   : int(rig.left.height),
    }


def write_depth_png(depth:np.ndarray, path:str, depth_scale:float=DEPTH_SCALE) -> None:

    """Store depth (mm) as 16-bit PNG in units of ``depth_scale`` mm."""

    scaled = np.round(np.asarray(depth, dtype=np.float64) / depth_scale)
    if scaled.max(initial=0) > 65535:
        logger.warning("Depth beyond %.1f mm clipped in %s", 65535 * depth_scale, path)
    data = np.clip(scaled, 0, 65535).astype(np.uint16)

    _write_png(Image.fromarray(data), path)


def read_depth_png(path:str, depth_scale:float=DEPTH_SCALE) -> np.ndarray:
    with Image.open(path) as img:
        data = np.array(img)
    return data.astype(np.uint16).astype(np.float64) * depth_scale


def write_rgb_png(rgb:np.ndarray, path:str) -> None:

    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)

    _write_png(Image.fromarray(np.ascontiguousarray(rgb[:, :, :3], dtype=np.uint8)), path)


def read_rgb_png(path:str) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert('RGB'))


def _write_png(img:Image.Image, path:str) -> None:

    buffer = io.BytesIO()
    img.save(buffer, format='PNG')
    atomic_write_bytes(path, buffer.getvalue())


def write_scene(scene:StereoScene, root:str) -> str:

    """
    Write ``scene`` below ``root`` in the BOP stereo layout; returns the scene directory.
    """

    if not isinstance(scene, StereoScene):
        raise TypeError("scene should be a StereoScene.")

    frame_ids = [frame.frame_id for frame in scene.frames]
    if len(set(frame_ids)) != len(frame_ids):
        raise ValidationError(f"scene {scene.scene_id} has duplicate frame ids")

    for frame in scene.frames:
        for kind in ['rgb', 'depth', 'features']:
            left, right = getattr(frame, f"{kind}_left"), getattr(frame, f"{kind}_right")
            if (left is None) != (right is None):
                raise ValidationError(f"scene {scene.scene_id} frame {frame.frame_id}: {kind} present for one view only")

    scene_dir = scene_path(root, scene.scene_id)
    os.makedirs(scene_dir, exist_ok=True)

    scene_gt, scene_camera = {}, {}

    for frame in scene.frames:

        key = str(int(frame.frame_id))
        scene_gt[key] = [_annotation_to_json(ann) for ann in frame.annotations]

        camera = {'cam_K': _floats(scene.rig.left.matrix), 'depth_scale': float(scene.depth_scale)}
        if frame.cam_pose is not None:
            camera.update(_pose_entry(frame.cam_pose, 'cam_R_w2c', 'cam_t_w2c'))
        scene_camera[key] = camera

        for view in VIEWS:
            rgb = frame.image(view, 'rgb')
            if rgb is not None:
                write_rgb_png(rgb, image_path(scene_dir, view, 'rgb', frame.frame_id))
            depth = frame.image(view, 'depth')
            if depth is not None:
                write_depth_png(depth, image_path(scene_dir, view, 'depth', frame.frame_id), scene.depth_scale)
            features = frame.image(view, 'features')
            if features is not None:
                write_features(features, features_path(scene_dir, view, frame.frame_id))

    atomic_write_json(os.path.join(scene_dir, 'stereo_rig.json'), _rig_to_json(scene.rig))
    atomic_write_json(os.path.join(scene_dir, 'scene_camera.json'), scene_camera)
    if scene.layout is not None:
        layout = [dict({'obj_id': int(obj_id)}, **_pose_entry(pose, 'R_m2w', 't_m2w')) for obj_id, pose in scene.layout]
        atomic_write_json(os.path.join(scene_dir, 'scene_layout.json'), layout)
    atomic_write_json(os.path.join(scene_dir, 'scene_gt.json'), scene_gt)

    return scene_dir


def _load_json(path:str):

    if not os.path.isfile(path):
        raise SceneFormatError("missing file", path=path)
    try:
        with open(path, 'r') as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"malformed JSON: {e}", path=path) from e


def _get(record:dict, key:str, path:str, size:int=None):

    if not isinstance(record, dict) or key not in record:
        raise SceneFormatError("missing key", path=path, key=key)

    value = record[key]
    if size is not None:
        if not isinstance(value, list) or len(value) != size:
            raise SceneFormatError(f"expected {size} numbers", path=path, key=key)
        try:
            return np.array(value, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise SceneFormatError("non-numeric entries", path=path, key=key) from e

    return value


def _pose_from(record:dict, r_key:str, t_key:str, path:str) -> Pose:
    try:
        return Pose(_get(record, r_key, path, 9).reshape(3, 3), _get(record, t_key, path, 3))
    except ValueError as e:
        if isinstance(e, SceneFormatError):
            raise
        raise SceneFormatError(f"invalid pose: {e}", path=path, key=r_key) from e


def _read_rig(scene_dir:str) -> StereoRig:

    path = os.path.join(scene_dir, 'stereo_rig.json')
    record = _load_json(path)

    width  = int(_get(record, 'width', path))
    height = int(_get(record, 'height', path))
    K_left  = CameraIntrinsics.from_matrix(_get(record, 'cam_K_left', path, 9), width, height)
    K_right = CameraIntrinsics.from_matrix(_get(record, 'cam_K_right', path, 9), width, height)

    try:
        extrinsic = Pose(_get(record, 'R', path, 9).reshape(3, 3), _get(record, 't', path, 3))
        rig = StereoRig(K_left, K_right, extrinsic, rectified=bool(_get(record, 'rectified', path)))
    except ValueError as e:
        if isinstance(e, SceneFormatError):
            raise
        raise SceneFormatError(f"invalid stereo rig: {e}", path=path) from e

    baseline = float(_get(record, 'baseline', path))
    if abs(baseline - rig.baseline) > 1e-6:
        raise SceneFormatError(f"baseline {baseline} disagrees with |t| = {rig.baseline}", path=path, key='baseline')

    return rig


def read_scene(scene_dir:str, load_images:bool=False, load_features:bool=False) -> StereoScene:

    """
    Read one scene directory written by :func:`write_scene`.

    Raises
    ------
    SceneFormatError
        On missing files, malformed records or a rig that disagrees with the
        per-frame cameras; the message names the file and key.
    """

    if not os.path.isdir(scene_dir):
        raise FileNotFoundError(f"Scene directory does not exist: {scene_dir}")

    scene_id = int(os.path.basename(os.path.normpath(scene_dir)))
    rig = _read_rig(scene_dir)

    gt_path  = os.path.join(scene_dir, 'scene_gt.json')
    cam_path = os.path.join(scene_dir, 'scene_camera.json')
    scene_gt     = _load_json(gt_path)
    scene_camera = _load_json(cam_path)

    if not isinstance(scene_gt, dict) or not isinstance(scene_camera, dict):
        raise SceneFormatError("top-level record must be an object", path=gt_path)
    if set(scene_gt.keys()) != set(scene_camera.keys()):
        raise SceneFormatError("frame ids of scene_gt.json and scene_camera.json differ", path=cam_path)

    depth_scale = DEPTH_SCALE
    frames = []

    for key in sorted(scene_gt.keys(), key=int):

        camera = scene_camera[key]
        K = _get(camera, 'cam_K', cam_path, 9)
        if np.abs(K - rig.left.matrix.ravel()).max() > 1e-6:
            raise SceneFormatError(f"cam_K of frame {key} disagrees with stereo_rig.json", path=cam_path, key='cam_K')
        depth_scale = float(_get(camera, 'depth_scale', cam_path))

        cam_pose = None
        if 'cam_R_w2c' in camera:
            cam_pose = _pose_from(camera, 'cam_R_w2c', 'cam_t_w2c', cam_path)

        annotations = []
        entries = scene_gt[key]
        if not isinstance(entries, list):
            raise SceneFormatError(f"frame {key} entry must be a list", path=gt_path, key=key)

        for entry in entries:
            try:
                annotations.append(FrameAnnotation(
                    obj_id           =int(_get(entry, 'obj_id', gt_path)),
                    pose             =_pose_from(entry, 'cam_R_m2c', 'cam_t_m2c', gt_path),
                    visib_fract_left =float(_get(entry, 'visib_fract_left', gt_path)),
                    visib_fract_right=float(_get(entry, 'visib_fract_right', gt_path)),
                    bbox_left        =BoundingBox.from_xywh(_get(entry, 'bbox_left', gt_path, 4)),
                    bbox_right       =BoundingBox.from_xywh(_get(entry, 'bbox_right', gt_path, 4)),
                    inst_id          =int(entry.get('inst_id', -1)),
                ))
            except SceneFormatError:
                raise
            except (TypeError, ValueError) as e:
                raise SceneFormatError(f"invalid label in frame {key}: {e}", path=gt_path, key=key) from e

        frame = StereoFrame(frame_id=int(key), annotations=annotations, cam_pose=cam_pose)

        if load_images:
            for view in VIEWS:
                rgb_path, depth_path = image_path(scene_dir, view, 'rgb', frame.frame_id), image_path(scene_dir, view, 'depth', frame.frame_id)
                for path in [rgb_path, depth_path]:
                    if not os.path.isfile(path):
                        raise SceneFormatError("missing image", path=path)
                setattr(frame, f"rgb_{view}", read_rgb_png(rgb_path))
                setattr(frame, f"depth_{view}", read_depth_png(depth_path, depth_scale))

        if load_features:
            for view in VIEWS:
                setattr(frame, f"features_{view}", read_features(features_path(scene_dir, view, frame.frame_id)))

        frames.append(frame)

    _check_view_counts(scene_dir, frames)

    layout = None
    layout_path = os.path.join(scene_dir, 'scene_layout.json')
    if os.path.isfile(layout_path):
        records = _load_json(layout_path)
        layout = [(int(_get(r, 'obj_id', layout_path)), _pose_from(r, 'R_m2w', 't_m2w', layout_path)) for r in records]

    return StereoScene(scene_id=scene_id, rig=rig, frames=frames, depth_scale=depth_scale, layout=layout)


def _check_view_counts(scene_dir:str, frames:list) -> None:

    counts = {}
    for view in VIEWS:
        folder = os.path.join(scene_dir, view, 'rgb')
        counts[view] = len([f for f in os.listdir(folder) if f.endswith('.png')]) if os.path.isdir(folder) else 0

    if counts['left'] != counts['right']:
        raise SceneFormatError(f"left/right frame counts differ ({counts['left']} vs {counts['right']})", path=scene_dir)


def filter_labels(annotations:list, min_visib:float=MIN_VISIB) -> list:

    """
    Keep a label only if at least ``min_visib`` of the object is visible in BOTH
    views; labels below the threshold in either view are removed. Order is kept.
    """

    if not 0.0 <= min_visib <= 1.0:
        raise ValueError("min_visib should be between 0 and 1")

    kept = []
    for ann in annotations:
        if ann.visib_fract_left is None or ann.visib_fract_right is None:
            raise ValueError(f"visibility of object {ann.obj_id} not populated for both views")
        if ann.visib_fract_left >= min_visib and ann.visib_fract_right >= min_visib:
            kept.append(ann)

    return kept


def write_features(maps:DenseFeatureMaps, path:str) -> None:

    """
    Write ``maps`` to a self-describing archive: magic ``SPKF``, version, channel
    table and header CRC32, then one deflate-compressed payload plus CRC32 per channel.
    """

    channels = maps.channels()
    table, payloads = [], []

    for name, array in channels.items():
        array = np.ascontiguousarray(array)
        array = array.astype(array.dtype.newbyteorder('<'), copy=False)
        h, w = array.shape[:2]
        c = array.shape[2] if array.ndim == 3 else 1
        compressed = zlib.compress(array.tobytes(), 6)
        table.append(_ENTRY.pack(CHANNEL_TAGS[name].encode('ascii'), array.dtype.str.encode('ascii'), h, w, c, len(compressed)))
        payloads.append(compressed + _CRC.pack(zlib.crc32(compressed)))

    header = _HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, len(table)) + b''.join(table)
    blob = header + _CRC.pack(zlib.crc32(header)) + b''.join(payloads)

    atomic_write_bytes(path, blob)


def read_features(path:str) -> DenseFeatureMaps:

    """
    Read an archive written by :func:`write_features`.

    Raises
    ------
    CorruptArchiveError
        On bad magic, truncation, trailing bytes or any checksum mismatch.
    ArchiveVersionError
        On an unknown format version or channel tag (with intact checksums).
    """

    if not os.path.isfile(path):
        raise FileNotFoundError(f"Feature archive not found: {path}")

    with open(path, 'rb') as file:
        data = file.read()

    return decode_features(data, source=path)


def decode_features(data:bytes, source:str='<bytes>') -> DenseFeatureMaps:

    if len(data) < _HEADER.size:
        raise CorruptArchiveError(f"truncated archive: {source}")

    magic, version, n = _HEADER.unpack_from(data, 0)
    if magic != ARCHIVE_MAGIC:
        raise CorruptArchiveError(f"bad magic bytes in {source}")

    header_end = _HEADER.size + n * _ENTRY.size
    if len(data) < header_end + _CRC.size:
        raise CorruptArchiveError(f"truncated archive header: {source}")
    (header_crc,) = _CRC.unpack_from(data, header_end)
    if zlib.crc32(data[:header_end]) != header_crc:
        raise CorruptArchiveError(f"header checksum mismatch in {source}")

    if version != ARCHIVE_VERSION:
        raise ArchiveVersionError(f"unsupported archive version {version} in {source}")

    arrays = {}
    offset = header_end + _CRC.size

    for i in range(n):

        raw_tag, raw_dtype, h, w, c, nbytes = _ENTRY.unpack_from(data, _HEADER.size + i * _ENTRY.size)
        tag = raw_tag.rstrip(b'\x00').decode('ascii', errors='replace')
        if tag not in _TAG_FIELDS:
            raise ArchiveVersionError(f"unknown channel tag '{tag}' in {source}")

        end = offset + nbytes
        if end + _CRC.size > len(data):
            raise CorruptArchiveError(f"truncated payload of channel '{tag}' in {source}")
        payload = data[offset:end]
        (crc,) = _CRC.unpack_from(data, end)
        if zlib.crc32(payload) != crc:
            raise CorruptArchiveError(f"checksum mismatch in channel '{tag}' of {source}")

        try:
            dtype = np.dtype(raw_dtype.rstrip(b'\x00').decode('ascii'))
            raw = zlib.decompress(payload)
        except (TypeError, ValueError, zlib.error) as e:
            raise CorruptArchiveError(f"undecodable channel '{tag}' in {source}: {e}") from e

        if len(raw) != h * w * c * dtype.itemsize:
            raise CorruptArchiveError(f"size mismatch in channel '{tag}' of {source}")

        array = np.frombuffer(raw, dtype=dtype).reshape((h, w, c) if c > 1 or tag == 'xyz' else (h, w)).copy()
        arrays[_TAG_FIELDS[tag]] = array.astype(dtype.newbyteorder('='), copy=False)

        offset = end + _CRC.size

    if offset != len(data):
        raise CorruptArchiveError(f"trailing bytes after last channel in {source}")

    missing = [name for name in _REQUIRED if name not in arrays]
    if missing:
        raise CorruptArchiveError(f"archive {source} lacks channel(s): {', '.join(missing)}")

    return DenseFeatureMaps(**arrays)


def write_models(root:str, library:dict) -> str:

    """Write PLY meshes and ``models_info.json`` to ``<root>/models``."""

    models_dir = os.path.join(root, 'models')
    os.makedirs(models_dir, exist_ok=True)

    info = {}
    for obj_id in sorted(library):

        model = library[obj_id]
        mesh  = model.mesh
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)

        info[str(obj_id)] = {
            'name'     : model.name,
            'diameter' : mesh.diameter,
            'min_x'    : float(lo[0]), 'min_y': float(lo[1]), 'min_z': float(lo[2]),
            'size_x'   : float(hi[0] - lo[0]), 'size_y': float(hi[1] - lo[1]), 'size_z': float(hi[2] - lo[2]),
            'symmetric': bool(model.symmetric),
        }

        lines = [
            'ply',
            'format ascii 1.0',
            f'comment {model.name}',
            f'element vertex {mesh.vertices.shape[0]}',
            'property double x',
            'property double y',
            'property double z',
            f'element face {mesh.n_faces}',
            'property list uchar int vertex_indices',
            'property int region',
            'end_header',
        ]
        lines += [' '.join(repr(float(c)) for c in v) for v in mesh.vertices]
        lines += [f'3 {f[0]} {f[1]} {f[2]} {r}' for f, r in zip(mesh.faces, mesh.region_of_face)]

        atomic_write_bytes(os.path.join(models_dir, f'obj_{obj_id:06d}.ply'), ('\n'.join(lines) + '\n').encode('ascii'))

    atomic_write_json(os.path.join(models_dir, 'models_info.json'), info)

    return models_dir


def _read_ply(path:str, name:str) -> TriMesh:

    with open(path, 'r') as file:
        lines = file.read().splitlines()

    try:
        end = lines.index('end_header')
        n_vertices = int(next(l.split()[2] for l in lines[:end] if l.startswith('element vertex')))
        n_faces    = int(next(l.split()[2] for l in lines[:end] if l.startswith('element face')))
        body = lines[end + 1:]
        vertices = np.array([[float(x) for x in l.split()] for l in body[:n_vertices]])
        face_rows = np.array([[int(x) for x in l.split()] for l in body[n_vertices:n_vertices + n_faces]])
    except (ValueError, StopIteration, IndexError) as e:
        raise SceneFormatError(f"malformed PLY: {e}", path=path) from e

    if face_rows.ndim != 2 or face_rows.shape[1] != 5 or np.any(face_rows[:, 0] != 3):
        raise SceneFormatError("only triangle faces with a region property are supported", path=path)

    return TriMesh(vertices, face_rows[:, 1:4], face_rows[:, 4], name)


def read_models(root:str) -> dict:

    """Inverse of :func:`write_models`; returns ``{obj_id: ObjectModel}``."""

    models_dir = os.path.join(root, 'models')
    info_path  = os.path.join(models_dir, 'models_info.json')
    info = _load_json(info_path)

    library = {}
    for key, record in info.items():
        obj_id = int(key)
        name = str(record.get('name', f'obj_{obj_id:06d}'))
        mesh = _read_ply(os.path.join(models_dir, f'obj_{obj_id:06d}.ply'), name)
        library[obj_id] = ObjectModel(obj_id, name, mesh, bool(_get(record, 'symmetric', info_path)))

    return library
