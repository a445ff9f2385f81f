"""
Deterministic synthetic stereo dataset generation.

A scene is a collision-free layout of library objects in the frame of the
canonical left camera (view 0). Further viewpoints look at the layout centroid
from a spherical cap around the canonical viewing direction. Every viewpoint is
rendered for both cameras of the rig; labels whose visible fraction falls below
``min_visib`` in either view are removed before the scene is written.

Classes:
--------
GenConfig
    Generation settings.
GenerationStats
    Frame and label counts of a run.

Functions:
----------
- sample_scene: random layout of one scene.
- generate_dataset: layouts, renders, annotations and BOP files for every scene.
- annotate_dataset: recompute features and labels of an existing dataset.
- annotation_throughput: frames per second of the annotation pass.
"""

import json
import logging
import os
import time

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from tqdm import tqdm

from stereo_pose.bopstore import (
    FrameAnnotation,
    StereoFrame,
    StereoScene,
    filter_labels,
    list_scenes,
    read_models,
    read_scene,
    scene_path,
    write_models,
    write_scene,
)
from stereo_pose.errors import ConfigurationError, GenerationError
from stereo_pose.geometry import LEFT, RIGHT, BoundingBox, CameraIntrinsics, Pose, StereoRig, look_at, random_rotation
from stereo_pose.Helpers import atomic_write_json
from stereo_pose.meshes import default_library
from stereo_pose.rasterizer import render_scene, shade_gray

logger = logging.getLogger(__name__)

MAX_OBJECTS        = 15
PLACEMENT_ATTEMPTS = 100

# view sampling law and camera distance are not prescribed by the source data
PLACEHOLDER_DEFAULTS = ['depth_range', 'lateral_range', 'view_cone_deg']


@dataclass(frozen=True)
class GenConfig:

    objects        : tuple = (1, 2, 3, 4, 5, 6)
    n_objects      : tuple = (3, 8)
    max_objects    : int = MAX_OBJECTS
    scenes         : int = 2
    views_per_scene: int = 25
    depth_range    : tuple = (450.0, 800.0)
    lateral_range  : float = 120.0
    view_cone_deg  : float = 25.0
    baseline       : float = 50.0
    width          : int = 640
    height         : int = 480
    fx             : float = 600.0
    fy             : float = 600.0
    n_regions      : int = 64
    min_visib      : float = 0.10
    seed           : int = 0

    def __post_init__(self) -> None:

        object.__setattr__(self, 'objects', tuple(int(o) for o in self.objects))
        object.__setattr__(self, 'n_objects', tuple(int(n) for n in self.n_objects))
        object.__setattr__(self, 'depth_range', tuple(float(z) for z in self.depth_range))

        if len(self.objects) == 0:
            raise ConfigurationError("objects must list at least one object id")
        if len(self.n_objects) != 2 or not 1 <= self.n_objects[0] <= self.n_objects[1]:
            raise ConfigurationError(f"n_objects must be a non-empty range [lo, hi] with lo >= 1, got {list(self.n_objects)}")
        if self.n_objects[1] > self.max_objects:
            raise ConfigurationError(f"n_objects upper bound {self.n_objects[1]} exceeds max_objects {self.max_objects}")
        if len(self.depth_range) != 2 or not 0 < self.depth_range[0] <= self.depth_range[1]:
            raise ConfigurationError(f"depth_range must be a non-empty positive range, got {list(self.depth_range)}")
        if self.lateral_range < 0:
            raise ConfigurationError("lateral_range must be non-negative")
        if not 0 <= self.view_cone_deg < 90:
            raise ConfigurationError("view_cone_deg must lie in [0, 90)")
        if self.scenes < 1 or self.views_per_scene < 1:
            raise ConfigurationError("scenes and views_per_scene must be at least 1")
        if not self.baseline > 0:
            raise ConfigurationError("baseline must be positive")
        if not 0.0 <= self.min_visib <= 1.0:
            raise ConfigurationError("min_visib must lie in [0, 1]")

    @classmethod
    def from_dict(cls, values:dict) -> 'GenConfig':
        return cls(**{key: tuple(value) if isinstance(value, list) else value for key, value in values.items() if key in cls.__dataclass_fields__})

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)

    def rig(self) -> StereoRig:
        return StereoRig.rectified_pair(self.intrinsics(), self.baseline)


@dataclass
class GenerationStats:

    scenes         : int = 0
    frames         : int = 0
    labels_kept    : int = 0
    labels_removed : int = 0
    removed_left   : int = 0
    removed_right  : int = 0
    visibility_sum : float = 0.0

    @property
    def mean_visibility(self) -> float:
        return self.visibility_sum / self.labels_kept if self.labels_kept else 0.0

    def add(self, other:'GenerationStats') -> 'GenerationStats':
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop('visibility_sum')
        out['mean_visibility'] = round(self.mean_visibility, 6)
        return out


def _inside_both(center:np.ndarray, rig:StereoRig) -> bool:

    for view in (LEFT, RIGHT):
        K = rig.camera(view)
        p = rig.extrinsic(view).apply(center)
        if p[2] <= 0:
            return False
        u = K.fx * p[0] / p[2] + K.cx
        v = K.fy * p[1] / p[2] + K.cy
        if not (-0.5 <= u <= K.width - 0.5 and -0.5 <= v <= K.height - 0.5):
            return False

    return True


def sample_scene(config:GenConfig, scene_seed, library:dict) -> list:

    """
    Random layout of one scene as ``(obj_id, Pose)`` pairs in the canonical left
    camera frame.

    Rotations are uniform over SO(3); object centres lie in the configured depth and
    lateral ranges and project into both images. An object whose bounding sphere
    keeps overlapping placed ones is dropped after 100 attempts.

    Raises:
    -------
    GenerationError
        If not a single object can be placed.
    """

    unknown = [obj_id for obj_id in config.objects if obj_id not in library]
    if unknown:
        raise ConfigurationError(f"object id(s) {unknown} not in the object library")

    rng = np.random.default_rng(scene_seed)
    rig = config.rig()

    n = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    chosen = [int(o) for o in rng.choice(np.array(config.objects), size=n)]

    placed, centers, radii = [], [], []
    z_lo, z_hi = config.depth_range
    lat = config.lateral_range

    for obj_id in chosen:

        radius = library[obj_id].mesh.bounding_radius
        rotation = random_rotation(rng)

        for _ in range(PLACEMENT_ATTEMPTS):
            center = np.array([rng.uniform(-lat, lat), rng.uniform(-lat, lat), rng.uniform(z_lo, z_hi)])
            if not _inside_both(center, rig):
                continue
            if any(np.linalg.norm(center - c) < radius + r for c, r in zip(centers, radii)):
                continue
            placed.append((obj_id, Pose(rotation, center)))
            centers.append(center)
            radii.append(radius)
            break
        else:
            logger.warning("Dropped object %d after %d placement attempts", obj_id, PLACEMENT_ATTEMPTS)

    if not placed:
        raise GenerationError("no object could be placed; the sampling frustum is too small")

    return placed


def sample_viewpoints(config:GenConfig, layout:list, rng:np.random.Generator) -> list:

    """
    World (canonical left camera) -> left camera poses: the identity first, then
    cameras on a spherical cap around the canonical viewing direction, each looking
    at the layout centroid from the canonical distance.
    """

    centroid = np.mean([pose.translation for _, pose in layout], axis=0)
    radius = np.linalg.norm(centroid)
    axis = -centroid / radius

    # orthonormal frame around the cap axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    cos_max = np.cos(np.radians(config.view_cone_deg))
    views = [Pose.identity()]

    for _ in range(config.views_per_scene - 1):
        cos_t = rng.uniform(cos_max, 1.0)
        sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        phi = rng.uniform(0.0, 2 * np.pi)
        direction = cos_t * axis + sin_t * (np.cos(phi) * e1 + np.sin(phi) * e2)
        views.append(look_at(centroid + radius * direction, centroid))

    return views


def annotate_frame(layout:list, library:dict, cam_pose:Pose, rig:StereoRig, frame_id:int, min_visib:float, with_images:bool=True) -> tuple:

    """
    Render one stereo viewpoint and build its labels.

    Returns ``(StereoFrame, GenerationStats)``; the frame carries RGB, depth and
    feature maps (with ground-truth disparity) for both views and only the labels
    that pass the either-view visibility rule.
    """

    renders = {}
    poses_left = [cam_pose.compose(pose) for _, pose in layout]

    for view in (LEFT, RIGHT):
        K = rig.camera(view)
        scene = [(library[obj_id].mesh, rig.to_view(pose, view)) for (obj_id, _), pose in zip(layout, poses_left)]
        render = render_scene(scene, K)
        maps = render.maps
        disparity = np.zeros_like(maps.depth)
        disparity[maps.mask] = K.fx * rig.baseline / maps.depth[maps.mask]
        maps.disparity = disparity
        renders[view] = render

    annotations = []
    for idx, ((obj_id, _), pose) in enumerate(zip(layout, poses_left)):

        visib = [float(renders[view].visibility[idx]) for view in (LEFT, RIGHT)]
        boxes = [BoundingBox.from_mask(renders[view].maps.instance == idx) for view in (LEFT, RIGHT)]
        if boxes[0] is None or boxes[1] is None:
            # invisible in one view: keep a placeholder box, the label is filtered below
            boxes = [b if b is not None else BoundingBox(0, 0, 1, 1) for b in boxes]

        annotations.append(FrameAnnotation(
            obj_id           =obj_id,
            pose             =pose,
            visib_fract_left =min(1.0, visib[0]),
            visib_fract_right=min(1.0, visib[1]),
            bbox_left        =boxes[0],
            bbox_right       =boxes[1],
            inst_id          =idx,
        ))

    kept = filter_labels(annotations, min_visib)

    stats = GenerationStats(
        frames        =1,
        labels_kept   =len(kept),
        labels_removed=len(annotations) - len(kept),
        removed_left  =sum(a.visib_fract_left < min_visib for a in annotations),
        removed_right =sum(a.visib_fract_right < min_visib for a in annotations),
        visibility_sum=float(sum(0.5 * (a.visib_fract_left + a.visib_fract_right) for a in kept)),
    )

    frame = StereoFrame(frame_id=frame_id, annotations=kept, cam_pose=cam_pose)
    frame.features_left  = renders[LEFT].maps
    frame.features_right = renders[RIGHT].maps
    if with_images:
        frame.rgb_left    = shade_gray(renders[LEFT].maps)
        frame.rgb_right   = shade_gray(renders[RIGHT].maps)
        frame.depth_left  = renders[LEFT].maps.depth
        frame.depth_right = renders[RIGHT].maps.depth

    return frame, stats


def _generate_scene(config:GenConfig, scene_id:int, seed_seq:np.random.SeedSequence, library:dict, root:str) -> GenerationStats:

    layout_seed, view_seed = seed_seq.spawn(2)
    frame_id = -1

    try:
        layout = sample_scene(config, layout_seed, library)
        views = sample_viewpoints(config, layout, np.random.default_rng(view_seed))
        rig = config.rig()

        scene = StereoScene(scene_id=scene_id, rig=rig, layout=layout)
        stats = GenerationStats(scenes=1)

        for frame_id, cam_pose in enumerate(views):
            frame, frame_stats = annotate_frame(layout, library, cam_pose, rig, frame_id, config.min_visib)
            scene.frames.append(frame)
            stats.add(frame_stats)

        frame_id = -1
        write_scene(scene, root)

    except (GenerationError, OSError, ValueError) as e:
        context = f"scene {scene_id:06d}" + (f" frame {frame_id:06d}" if frame_id >= 0 else '')
        raise GenerationError(f"{context}: {e}") from e

    return stats


def _library_for(config:GenConfig) -> dict:

    library = default_library(config.n_regions)
    unknown = [obj_id for obj_id in config.objects if obj_id not in library]
    if unknown:
        raise ConfigurationError(f"object id(s) {unknown} not in the object library (known: {sorted(library)})")

    return {obj_id: library[obj_id] for obj_id in sorted(set(config.objects))}


def generate_dataset(config:GenConfig, root:str, workers:int=1, progress:bool=True) -> GenerationStats:

    """
    Generate ``config.scenes`` scenes below ``root`` (BOP stereo layout, feature
    archives, object models) and write ``manifest.json``.

    Per-scene random streams are spawned from ``config.seed``, so the annotation
    files depend only on the configuration, not on ``workers``.
    """

    if not isinstance(config, GenConfig):
        raise TypeError("config should be a GenConfig.")

    os.makedirs(root, exist_ok=True)
    library = _library_for(config)
    write_models(root, library)

    seeds = np.random.SeedSequence(config.seed).spawn(config.scenes)
    totals = GenerationStats()

    with tqdm(total=config.scenes, desc='Generating scenes', unit='scene', disable=not progress) as bar:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_generate_scene, config, scene_id, seeds[scene_id], library, root) for scene_id in range(config.scenes)]
                for future in futures:
                    totals.add(future.result())
                    bar.update(1)
        else:
            for scene_id in range(config.scenes):
                totals.add(_generate_scene(config, scene_id, seeds[scene_id], library, root))
                bar.update(1)

    write_manifest(root, config, totals)
    logger.info("Generated %d frames, %d labels kept, %d removed", totals.frames, totals.labels_kept, totals.labels_removed)

    return totals


def write_manifest(root:str, config:GenConfig, stats:GenerationStats) -> None:

    config_echo = asdict(config)
    for key, value in config_echo.items():
        if isinstance(value, tuple):
            config_echo[key] = list(value)

    atomic_write_json(os.path.join(root, 'manifest.json'), {
        'stats'               : stats.as_dict(),
        'config'              : config_echo,
        'seed'                : config.seed,
        'placeholder_defaults': PLACEHOLDER_DEFAULTS,
    })


def read_manifest(root:str) -> dict:

    path = os.path.join(root, 'manifest.json')
    if not os.path.isfile(path):
        return {}
    with open(path, 'r') as file:
        return json.load(file)


def _annotate_scene(root:str, scene_id:int, library:dict, min_visib:float) -> GenerationStats:

    scene_dir = scene_path(root, scene_id)
    scene = read_scene(scene_dir)

    if scene.layout is None:
        raise GenerationError(f"scene {scene_id:06d}: scene_layout.json is required to re-annotate")

    stats = GenerationStats(scenes=1)
    frames = []
    for old in scene.frames:
        if old.cam_pose is None:
            raise GenerationError(f"scene {scene_id:06d} frame {old.frame_id:06d}: camera pose missing")
        frame, frame_stats = annotate_frame(scene.layout, library, old.cam_pose, scene.rig, old.frame_id, min_visib)
        frames.append(frame)
        stats.add(frame_stats)

    scene.frames = frames
    write_scene(scene, root)

    return stats


def annotate_dataset(root:str, workers:int=1, min_visib:float=None, progress:bool=True) -> GenerationStats:

    """
    Recompute feature maps, images, visibilities and filtered labels of every scene
    under ``root`` from its layout, camera poses and the stored object models.
    """

    scene_ids = list_scenes(root)
    library = read_models(root)

    if min_visib is None:
        min_visib = read_manifest(root).get('config', {}).get('min_visib', 0.10)

    totals = GenerationStats()
    with tqdm(total=len(scene_ids), desc='Annotating scenes', unit='scene', disable=not progress) as bar:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_annotate_scene, root, scene_id, library, min_visib) for scene_id in scene_ids]
                for future in futures:
                    totals.add(future.result())
                    bar.update(1)
        else:
            for scene_id in scene_ids:
                totals.add(_annotate_scene(root, scene_id, library, min_visib))
                bar.update(1)

    return totals


def _bench_frame(config:GenConfig, seed_seq:np.random.SeedSequence, library:dict) -> float:

    layout = sample_scene(config, seed_seq, library)
    start = time.perf_counter()
    annotate_frame(layout, library, Pose.identity(), config.rig(), 0, config.min_visib)

    return time.perf_counter() - start


def annotation_throughput(frames:int=20, width:int=640, height:int=480, n_objects:int=8, workers:int=4, seed:int=0) -> dict:

    """
    Annotation speed on random layouts with exactly ``n_objects`` objects: both views
    rendered with features, visibility and shading per stereo frame, no disk I/O.
    """

    if frames < 1:
        raise ConfigurationError("frames must be at least 1")

    config = GenConfig(n_objects=(n_objects, n_objects), width=width, height=height, fx=600.0 * width / 640, fy=600.0 * width / 640, seed=seed)
    library = _library_for(config)
    seeds = np.random.SeedSequence(seed).spawn(frames)

    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            timings = list(pool.map(_bench_frame, [config] * frames, seeds, [library] * frames))
    else:
        timings = [_bench_frame(config, s, library) for s in seeds]
    elapsed = time.perf_counter() - start

    return {
        'frames'      : frames,
        'workers'     : workers,
        'width'       : width,
        'height'      : height,
        'n_objects'   : n_objects,
        'seconds'     : elapsed,
        'fps'         : frames / elapsed if elapsed > 0 else float('inf'),
        'per_frame_ms': 1000.0 * float(np.mean(timings)),
    }


def throughput_passes(result:dict, baseline_fps:float, tolerance:float=0.5) -> bool:

    """Regression gate: throughput must stay above ``tolerance`` times the recorded baseline."""

    if not baseline_fps or baseline_fps <= 0:
        return True

    return result['fps'] >= tolerance * baseline_fps
