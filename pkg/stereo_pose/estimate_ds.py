"""
Module to run pose estimation strategies over a generated stereo dataset.

Ground-truth dense features stand in for the output of a learned correspondence
network; the noise knobs (pixel noise, object-coordinate noise, outlier fraction
and disparity noise) emulate imperfect predictions.

Classes:
--------
EstimateDS
    Class to load a dataset, run the chosen strategies and write the estimates.

Functions:
----------
- inject_noise: perturb a correspondence set with the estimation noise knobs.
- estimates_path: location of the estimates table of one strategy in a run directory.
"""

import logging
import os

from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from tqdm import tqdm

from stereo_pose.bopstore import VIEWS, features_path, image_path, list_scenes, read_features, read_rgb_png, read_scene, scene_path
from stereo_pose.errors import ConfigurationError, DegenerateConfigurationError, InsufficientDataError, NumericError
from stereo_pose.geometry import LEFT, RIGHT, BoundingBox, CameraIntrinsics, unify_bboxes
from stereo_pose.Helpers import atomic_write_bytes, atomic_write_json, default_config, parse_strategies
from stereo_pose.posesolve import CorrespondenceSet, FrameInputs, FusionStrategy, SolverParams, estimate
from stereo_pose.stereomatch import block_match, disparity_from_depth

logger = logging.getLogger(__name__)

DISPARITY_STRATEGIES = {FusionStrategy.DISPARITY_3D3D, FusionStrategy.EARLY_JOINT_PNP_PLUS_DEPTH}
NOISE_KNOBS          = ['noise_px', 'noise_mm', 'outlier_fraction', 'disparity_sigma']
ROTATION_COLUMNS     = [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)]

ESTIMATE_COLUMNS = (
    ['scene_id', 'frame_id', 'inst_id', 'obj_id', 'strategy', 'status']
    + ROTATION_COLUMNS
    + ['tx', 'ty', 'tz', 'inlier_count', 'inlier_ratio', 'mean_residual_px', 'mean_residual_mm', 'converged', 'fallback', 'n_correspondences', 'message']
)

# solver failures that leave one label without an estimate; everything else aborts the run
_SOLVER_FAILURES = (InsufficientDataError, DegenerateConfigurationError, NumericError)


def estimates_path(run_dir:str, strategy:str) -> str:
    return os.path.join(run_dir, f"estimates_{strategy}.csv")


def inject_noise(corrs:CorrespondenceSet, rng:np.random.Generator, K:CameraIntrinsics, bbox:BoundingBox=None, noise_px:float=0.0, noise_mm:float=0.0, outlier_fraction:float=0.0) -> CorrespondenceSet:

    """
    Perturb correspondences the way an imperfect dense predictor would.

    Parameters:
    -----------
    corrs: CorrespondenceSet
        Ground-truth correspondences of one view.
    rng: np.random.Generator
        Seeded generator; the draws depend only on its state.
    K: CameraIntrinsics
        Camera of the view, noisy pixels are clipped to its image.
    bbox: BoundingBox
        Box the outlier pixels are drawn from (the whole image if None).
    noise_px: float
        Standard deviation of the Gaussian pixel noise.
    noise_mm: float
        Standard deviation of the Gaussian noise on object coordinates.
    outlier_fraction: float
        Share of correspondences whose pixel is replaced by a uniform draw inside ``bbox``.

    Returns:
    --------
    CorrespondenceSet
        A new set; ``corrs`` is left untouched.
    """

    n = len(corrs)
    pixels = corrs.pixels.copy()
    points = corrs.points.copy()

    if n == 0:
        return CorrespondenceSet(pixels, points, corrs.weights.copy(), corrs.views.copy())

    if noise_px > 0:
        pixels += rng.normal(0.0, noise_px, size=pixels.shape)
    if noise_mm > 0:
        points += rng.normal(0.0, noise_mm, size=points.shape)

    box = (bbox.clip(K.width, K.height) if bbox is not None else None) or BoundingBox(0, 0, K.width, K.height)

    n_out = int(round(outlier_fraction * n))
    if n_out > 0:
        idx = rng.choice(n, size=n_out, replace=False)
        pixels[idx, 0] = rng.uniform(box.x_min, box.x_max - 1, size=n_out)
        pixels[idx, 1] = rng.uniform(box.y_min, box.y_max - 1, size=n_out)

    pixels[:, 0] = np.clip(pixels[:, 0], 0.0, K.width - 1)
    pixels[:, 1] = np.clip(pixels[:, 1], 0.0, K.height - 1)

    return CorrespondenceSet(pixels, points, corrs.weights.copy(), corrs.views.copy())


def _label_rng(seed:int, scene_id:int, frame_id:int, inst_id:int) -> np.random.Generator:
    return np.random.default_rng([seed, scene_id, frame_id, inst_id + 1])


def _frame_disparity(task:dict, maps_left):

    knobs = task['knobs']
    rig = task['rig']

    if knobs['disparity'] == 'gt':
        disp_seed = int(np.random.SeedSequence([knobs['seed'], task['scene_id'], task['frame'].frame_id]).generate_state(1)[0])
        return disparity_from_depth(maps_left.depth, rig, knobs['disparity_sigma'], seed=disp_seed, mask=maps_left.mask)

    images = []
    for view in VIEWS:
        path = image_path(task['scene_dir'], view, 'rgb', task['frame'].frame_id)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"RGB image required for block matching was not found: {path}")
        images.append(read_rgb_png(path))

    return block_match(images[0], images[1], max_disp=knobs['max_disp'], window=knobs['window'])


def _estimate_row(task:dict, ann, strategy:str, est=None, message:str='') -> dict:

    row = {
        'scene_id': task['scene_id'],
        'frame_id': task['frame'].frame_id,
        'inst_id' : ann.inst_id,
        'obj_id'  : ann.obj_id,
        'strategy': strategy,
        'status'  : 'ok' if est is not None else 'failed',
        'message' : message,
    }

    if est is None:
        row.update({col: np.nan for col in ROTATION_COLUMNS + ['tx', 'ty', 'tz', 'inlier_ratio', 'mean_residual_px', 'mean_residual_mm']})
        row.update({'inlier_count': 0, 'converged': False, 'fallback': False, 'n_correspondences': 0})
        return row

    row.update(dict(zip(ROTATION_COLUMNS, est.pose.rotation.ravel())))
    row.update(dict(zip(['tx', 'ty', 'tz'], est.pose.translation)))
    row.update({
        'inlier_count'     : int(est.inlier_count),
        'inlier_ratio'     : float(est.inlier_ratio),
        'mean_residual_px' : float(est.mean_residual_px),
        'mean_residual_mm' : np.nan if est.mean_residual_mm is None else float(est.mean_residual_mm),
        'converged'        : bool(est.converged),
        'fallback'         : bool(est.fallback),
        'n_correspondences': int(est.n_correspondences),
    })

    return row


def _estimate_frame(task:dict) -> list:

    """Every strategy on every kept label of one stereo frame; rows in label-then-strategy order."""

    frame  = task['frame']
    rig    = task['rig']
    knobs  = task['knobs']
    params = task['params']

    context = f"scene {task['scene_id']:06d} frame {frame.frame_id:06d}"

    try:
        maps = {view: read_features(features_path(task['scene_dir'], name, frame.frame_id)) for view, name in zip((LEFT, RIGHT), VIEWS)}
        needs_disparity = any(FusionStrategy.from_name(s) in DISPARITY_STRATEGIES for s in task['strategies'])
        disparity = _frame_disparity(task, maps[LEFT]) if needs_disparity else None
    except (OSError, ValueError) as e:
        raise type(e)(f"{context}: {e}") from e

    rows = []
    for ann in frame.annotations:

        bbox = unify_bboxes(ann.bbox_left, ann.bbox_right)
        inst = ann.inst_id if ann.inst_id >= 0 else None
        rng = _label_rng(knobs['seed'], task['scene_id'], frame.frame_id, ann.inst_id)

        views = {}
        for view in (LEFT, RIGHT):
            clean = CorrespondenceSet.from_feature_maps(maps[view], view, inst, bbox, params.max_correspondences)
            views[view] = inject_noise(
                clean, rng, rig.camera(view), bbox,
                noise_px        =knobs['noise_px'],
                noise_mm        =knobs['noise_mm'],
                outlier_fraction=knobs['outlier_fraction'],
            )

        inputs = FrameInputs(left=views[LEFT], rig=rig, right=views[RIGHT], disparity=disparity)

        for strategy in task['strategies']:
            try:
                est = estimate(strategy, inputs, params)
                rows.append(_estimate_row(task, ann, strategy, est))
            except _SOLVER_FAILURES as e:
                logger.warning("%s inst %d (%s): %s", context, ann.inst_id, strategy, e)
                rows.append(_estimate_row(task, ann, strategy, message=str(e)))
            except ConfigurationError:
                raise
            except ValueError as e:
                raise ValueError(f"{context} inst {ann.inst_id} ({strategy}): {e}") from e

    return rows


class EstimateDS:

    """
    Class designed to run pose estimation strategies over every kept label of a dataset.
    """

    def __init__(self, dataset_path:str, output_path:str, config_dict:dict=None, workers:int=1, progress:bool=True) -> None:

        """
        Initialize the EstimateDS class.

        Parameters:
        -----------
        dataset_path : str
            Root of a dataset written by the generate step.
        output_path : str
            Run directory for the estimates; created if missing.
        config_dict : dict
            Configuration with the sections 'estimate' and 'solver'.
        workers : int
            Number of worker processes.
        progress : bool
            Show a progress bar.

        Returns:
        --------
        None
        """

        if dataset_path is None or output_path is None:
            raise ValueError("Values for dataset_path and output_path must be set upon initialization.")
        if not os.path.exists(dataset_path):
            raise FileNotFoundError(f"Dataset path does not exist: {dataset_path}")

        if config_dict is None:
            config_dict = default_config()
        if not isinstance(config_dict, dict):
            raise TypeError("config_dict should be of type dict.")
        if 'estimate' not in config_dict or 'solver' not in config_dict:
            raise ConfigurationError("config_dict needs the sections 'estimate' and 'solver'")

        if not isinstance(workers, int) or isinstance(workers, bool):
            raise TypeError("workers should be of type int.")
        if workers < 1:
            raise ValueError("workers should be at least 1.")

        knobs = dict(config_dict['estimate'])

        for key in NOISE_KNOBS:
            if knobs[key] < 0:
                raise ConfigurationError(f"{key} should be non-negative")
        if knobs['outlier_fraction'] >= 1:
            raise ConfigurationError("outlier_fraction should be smaller than 1")
        if knobs['disparity'] not in ('gt', 'block'):
            raise ConfigurationError(f"disparity should be 'gt' or 'block', got '{knobs['disparity']}'")
        if knobs['window'] < 1 or knobs['window'] % 2 == 0:
            raise ConfigurationError("window should be a positive odd number")
        if knobs['max_disp'] < 1:
            raise ConfigurationError("max_disp should be at least 1")

        knobs['strategies'] = parse_strategies(knobs['strategies'])

        self.dataset_path = dataset_path
        self.output_path  = output_path
        self.knobs        = knobs
        self.params       = SolverParams.from_dict(config_dict['solver'])
        self.workers      = workers
        self.progress     = progress

        self.tasks         = []
        self.rows          = []
        self.files_written = []

        if not os.path.exists(self.output_path):
            os.makedirs(self.output_path)

        pass

    def load_dataset(self) -> dict:

        """
        Method to read every scene and queue one task per stereo frame with kept labels.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "load_dataset"

        scene_ids = list_scenes(self.dataset_path)
        if not scene_ids:
            raise FileNotFoundError(f"No scenes found under {self.dataset_path}")

        tasks = []
        labels = 0
        for scene_id in scene_ids:
            scene_dir = scene_path(self.dataset_path, scene_id)
            scene = read_scene(scene_dir)
            for frame in scene.frames:
                if not frame.annotations:
                    continue
                labels += len(frame.annotations)
                tasks.append({
                    'scene_id'  : scene_id,
                    'scene_dir' : scene_dir,
                    'rig'       : scene.rig,
                    'frame'     : frame,
                    'strategies': self.knobs['strategies'],
                    'knobs'     : self.knobs,
                    'params'    : self.params,
                })

        self.tasks = tasks
        logger.info("Queued %d frames with %d labels from %d scenes", len(tasks), labels, len(scene_ids))

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'scenes': len(scene_ids), 'frames': len(tasks), 'labels': labels},
        }

        return out_dict

    def run_strategies(self) -> dict:

        """
        Method to run every strategy on every queued label and write one estimates table per strategy.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "run_strategies"

        if not self.tasks:
            raise ValueError("No frames queued: run load_dataset first or check the dataset labels.")

        rows = []
        with tqdm(total=len(self.tasks), desc='Estimating poses', unit='frame', disable=not self.progress) as bar:
            if self.workers > 1:
                with ProcessPoolExecutor(max_workers=self.workers) as pool:
                    for frame_rows in pool.map(_estimate_frame, self.tasks, chunksize=4):
                        rows.extend(frame_rows)
                        bar.update(1)
            else:
                for task in self.tasks:
                    rows.extend(_estimate_frame(task))
                    bar.update(1)

        self.rows = rows
        table = pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)

        outputs = {}
        for strategy in self.knobs['strategies']:
            path = estimates_path(self.output_path, strategy)
            self.files_written.append(path)
            csv = table[table['strategy'] == strategy].to_csv(index=False, float_format='%.10g', lineterminator='\n')
            atomic_write_bytes(path, csv.encode('utf-8'))
            outputs[strategy] = path

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': outputs,
        }

        return out_dict

    def write_summary(self) -> dict:

        """
        Method to record the noise knobs and per-strategy counts of the run in ``summary.json``.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "write_summary"

        table = pd.DataFrame(self.rows, columns=ESTIMATE_COLUMNS)

        counts = {}
        for strategy in self.knobs['strategies']:
            part = table[table['strategy'] == strategy]
            counts[strategy] = {
                'estimates': int((part['status'] == 'ok').sum()),
                'failed'   : int((part['status'] == 'failed').sum()),
                'fallback' : int(part['fallback'].astype(bool).sum()),
            }

        summary = {
            'dataset'   : os.path.abspath(self.dataset_path),
            'strategies': self.knobs['strategies'],
            'noise'     : {key: float(self.knobs[key]) for key in NOISE_KNOBS},
            'disparity' : self.knobs['disparity'],
            'seed'      : int(self.knobs['seed']),
            'solver'    : {key: getattr(self.params, key) for key in ['ransac_threshold_px', 'ransac_confidence', 'max_iterations', 'refine_iterations', 'inlier_threshold_mm', 'depth_weight', 'max_correspondences', 'seed']},
            'counts'    : counts,
        }

        path = os.path.join(self.output_path, 'summary.json')
        self.files_written.append(path)
        atomic_write_json(path, summary)

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'summary': path},
        }

        return out_dict
