"""
Module to score pose estimates against the ground truth of a dataset and to merge
scored runs into comparison tables and charts.

Classes:
--------
EvaluateDS
    Class to compute ADD(-S) errors and recall reports of one estimation run.
ReportDS
    Class to merge several evaluated runs (one noise setting each).
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from stereo_pose.bopstore import list_scenes, read_models, read_scene, scene_path
from stereo_pose.errors import ConfigurationError, ValidationError
from stereo_pose.estimate_ds import NOISE_KNOBS, ROTATION_COLUMNS, estimates_path
from stereo_pose.evalkit import (
    DEFAULT_TAU,
    MAX_MODEL_POINTS,
    EvalReport,
    ObjectMeta,
    comparison_table,
    comparison_text,
    depth_error_mm,
    pose_error,
    recall_table,
    rotation_error_deg,
    translation_error_mm,
)
from stereo_pose.geometry import Pose
from stereo_pose.Helpers import atomic_write_bytes, atomic_write_json
from stereo_pose.plots import error_vs_noise_draw, recall_vs_noise_draw

logger = logging.getLogger(__name__)

KEY_COLUMNS   = ['scene_id', 'frame_id', 'inst_id']
ERROR_COLUMNS = KEY_COLUMNS + ['obj_id', 'strategy', 'status', 'symmetric', 'error_mm', 'threshold_mm', 'hit', 'rot_err_deg', 'trans_err_mm', 'depth_err_mm', 'fallback']


def report_path(run_dir:str, strategy:str) -> str:
    return os.path.join(run_dir, f"report_{strategy}.csv")


def _write_csv(path:str, table:pd.DataFrame, float_format:str='%.6f') -> None:
    atomic_write_bytes(path, table.to_csv(index=False, float_format=float_format, lineterminator='\n').encode('utf-8'))


def _load_json(path:str) -> dict:

    if not os.path.isfile(path):
        raise FileNotFoundError(f"File was not found: {path}")
    with open(path, 'r') as file:
        return json.load(file)


def _describe(keys:set, limit:int=5) -> str:

    listed = ', '.join(f"scene {s:06d} frame {f:06d} inst {i}" for s, f, i in sorted(keys)[:limit])
    more = f" and {len(keys) - limit} more" if len(keys) > limit else ''

    return listed + more


class EvaluateDS:

    """
    Class designed to score the estimates of one run with ADD(-S) recall.
    """

    def __init__(self, dataset_path:str, run_path:str, config_dict:dict=None) -> None:

        """
        Initialize the EvaluateDS class.

        Parameters:
        -----------
        dataset_path : str
            Root of the dataset the estimates were computed on.
        run_path : str
            Run directory written by the estimate step.
        config_dict : dict
            Configuration with the section 'evaluate'.

        Returns:
        --------
        None
        """

        if dataset_path is None or run_path is None:
            raise ValueError("Values for dataset_path and run_path must be set upon initialization.")
        if not os.path.exists(dataset_path):
            raise FileNotFoundError(f"Dataset path does not exist: {dataset_path}")
        if not os.path.exists(run_path):
            raise FileNotFoundError(f"Run path does not exist: {run_path}")
        if not os.path.isfile(os.path.join(run_path, 'summary.json')):
            raise FileNotFoundError(f"Run summary was not found: {os.path.join(run_path, 'summary.json')}")

        if config_dict is None:
            config_dict = {'evaluate': {'tau': DEFAULT_TAU, 'max_model_points': MAX_MODEL_POINTS}}
        if not isinstance(config_dict, dict):
            raise TypeError("config_dict should be of type dict.")

        tau = config_dict['evaluate']['tau']
        max_points = config_dict['evaluate']['max_model_points']

        if not isinstance(tau, float):
            raise TypeError("tau should be of type float.")
        if not 0 < tau <= 1:
            raise ConfigurationError("tau should be in (0, 1]")
        if not isinstance(max_points, int) or max_points < 3:
            raise ConfigurationError("max_model_points should be an integer >= 3")

        self.dataset_path = dataset_path
        self.run_path     = run_path
        self.tau          = tau
        self.max_points   = max_points

        self.meta          = {}
        self.ground_truth  = {}
        self.estimates     = {}
        self.errors        = None
        self.reports       = []
        self.files_written = []

        pass

    def load_inputs(self) -> dict:

        """
        Method to read the object models, the ground-truth labels and the estimate tables.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "load_inputs"

        self.meta = {obj_id: ObjectMeta.from_model(model, self.max_points) for obj_id, model in read_models(self.dataset_path).items()}

        ground_truth = {}
        for scene_id in list_scenes(self.dataset_path):
            scene = read_scene(scene_path(self.dataset_path, scene_id))
            for frame in scene.frames:
                for ann in frame.annotations:
                    ground_truth[(scene_id, frame.frame_id, ann.inst_id)] = (ann.obj_id, ann.pose)
        self.ground_truth = ground_truth

        summary = _load_json(os.path.join(self.run_path, 'summary.json'))
        strategies = summary.get('strategies')
        if not strategies:
            raise ValidationError(f"run summary lists no strategies: {self.run_path}")

        estimates = {}
        for strategy in strategies:
            path = estimates_path(self.run_path, strategy)
            if not os.path.isfile(path):
                raise FileNotFoundError(f"Estimates of strategy {strategy} were not found: {path}")
            estimates[strategy] = pd.read_csv(path, keep_default_na=True)
        self.estimates = estimates

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'labels': len(ground_truth), 'strategies': strategies},
        }

        return out_dict

    def _check_ids(self, strategy:str, table:pd.DataFrame) -> None:

        keys = set(zip(table['scene_id'].astype(int), table['frame_id'].astype(int), table['inst_id'].astype(int)))

        if len(keys) != len(table):
            raise ValidationError(f"{estimates_path(self.run_path, strategy)}: duplicate label ids")

        unknown = keys - set(self.ground_truth)
        missing = set(self.ground_truth) - keys

        if unknown:
            raise ValidationError(f"{estimates_path(self.run_path, strategy)}: estimates for labels not in the dataset: {_describe(unknown)}")
        if missing:
            raise ValidationError(f"{estimates_path(self.run_path, strategy)}: no estimates for dataset labels: {_describe(missing)}")

    def score_estimates(self) -> dict:

        """
        Method to compute the ADD(-S) error and pose diagnostics of every estimate.

        Failed solves count as misses (infinite error).

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "score_estimates"

        rows = []
        for strategy, table in self.estimates.items():

            self._check_ids(strategy, table)

            for record in table.to_dict('records'):

                key = (int(record['scene_id']), int(record['frame_id']), int(record['inst_id']))
                obj_id, pose_gt = self.ground_truth[key]

                if int(record['obj_id']) != obj_id:
                    raise ValidationError(
                        f"{estimates_path(self.run_path, strategy)}: scene {key[0]:06d} frame {key[1]:06d} inst {key[2]} "
                        f"has obj_id {int(record['obj_id'])}, the dataset says {obj_id}"
                    )
                if obj_id not in self.meta:
                    raise ValidationError(f"no object model for obj_id {obj_id}")

                meta = self.meta[obj_id]
                row = {
                    'scene_id' : key[0],
                    'frame_id' : key[1],
                    'inst_id'  : key[2],
                    'obj_id'   : obj_id,
                    'strategy' : strategy,
                    'status'   : record['status'],
                    'symmetric': bool(meta.symmetric),
                    'fallback' : bool(record['fallback']),
                }

                if record['status'] == 'ok':
                    R = np.array([record[col] for col in ROTATION_COLUMNS], dtype=np.float64).reshape(3, 3)
                    t = np.array([record['tx'], record['ty'], record['tz']], dtype=np.float64)
                    pose_est = Pose.from_matrix(np.vstack([np.column_stack([R, t]), [0.0, 0.0, 0.0, 1.0]]))
                    row.update({
                        'error_mm'    : pose_error(meta, pose_gt, pose_est),
                        'rot_err_deg' : rotation_error_deg(pose_gt, pose_est),
                        'trans_err_mm': translation_error_mm(pose_gt, pose_est),
                        'depth_err_mm': depth_error_mm(pose_gt, pose_est),
                    })
                else:
                    row.update({'error_mm': np.inf, 'rot_err_deg': np.nan, 'trans_err_mm': np.nan, 'depth_err_mm': np.nan})

                row['threshold_mm'] = self.tau * meta.diameter
                row['hit'] = bool(row['error_mm'] < row['threshold_mm'])
                rows.append(row)

        self.errors = pd.DataFrame(rows, columns=ERROR_COLUMNS)

        path = os.path.join(self.run_path, 'errors.csv')
        self.files_written.append(path)
        _write_csv(path, self.errors)

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'errors': path},
        }

        return out_dict

    def build_reports(self) -> dict:

        """
        Method to write per-strategy recall reports, the comparison table and ``evaluation.json``.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "build_reports"

        if self.errors is None:
            raise ValueError("No errors computed: run score_estimates first.")

        reports, summary = [], {}
        for strategy in self.estimates:

            part = self.errors[self.errors['strategy'] == strategy]
            report = recall_table(list(zip(part['obj_id'].astype(int), part['error_mm'])), self.meta, self.tau, strategy)
            reports.append(report)

            path = report_path(self.run_path, strategy)
            self.files_written.append(path)
            report.to_csv(path)

            finite = part[np.isfinite(part['error_mm'])]
            summary[strategy] = {
                'overall_recall'   : round(report.overall, 6),
                'mean_error_mm'    : round(float(finite['error_mm'].mean()), 6) if len(finite) else None,
                'median_depth_err' : round(float(finite['depth_err_mm'].median()), 6) if len(finite) else None,
                'median_rot_err'   : round(float(finite['rot_err_deg'].median()), 6) if len(finite) else None,
                'failed'           : int((part['status'] != 'ok').sum()),
                'fallback'         : int(part['fallback'].sum()),
                'labels'           : int(len(part)),
            }

        self.reports = reports
        table = comparison_table(reports)

        csv_path, txt_path, json_path = [os.path.join(self.run_path, name) for name in ['report.csv', 'report.txt', 'evaluation.json']]
        self.files_written += [csv_path, txt_path, json_path]

        _write_csv(csv_path, table, float_format='%.4f')
        atomic_write_bytes(txt_path, comparison_text(table).encode('utf-8'))
        atomic_write_json(json_path, {'tau': self.tau, 'strategies': summary})

        logger.info("Overall ADD(-S) recall: %s", ', '.join(f"{r.strategy} {r.overall:.2f}" for r in reports))

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'report': csv_path, 'text': txt_path, 'evaluation': json_path},
        }

        return out_dict


def noise_axis(summaries:list) -> str:

    """
    The noise knob the runs differ in; the first knob in :data:`NOISE_KNOBS` order
    wins when several vary, ``noise_px`` when none does.
    """

    for knob in NOISE_KNOBS:
        if len({float(s['noise'][knob]) for s in summaries}) > 1:
            return knob

    return NOISE_KNOBS[0]


class ReportDS:

    """
    Class designed to merge evaluated runs into comparison tables and SVG charts.
    """

    def __init__(self, run_paths:list, output_path:str) -> None:

        """
        Initialize the ReportDS class.

        Parameters:
        -----------
        run_paths : list
            Run directories already scored by EvaluateDS.
        output_path : str
            Report directory; created if missing.

        Returns:
        --------
        None
        """

        if not run_paths:
            raise ConfigurationError("At least one run directory is required.")
        if not isinstance(run_paths, list):
            raise TypeError("run_paths should be of type list.")
        if output_path is None:
            raise ValueError("A value for output_path must be set upon initialization.")

        for run in run_paths:
            for name in ['summary.json', 'evaluation.json']:
                if not os.path.isfile(os.path.join(run, name)):
                    raise FileNotFoundError(f"Run {run} is not evaluated: {name} was not found")

        self.run_paths   = run_paths
        self.output_path = output_path

        self.runs          = []
        self.files_written = []

        if not os.path.exists(self.output_path):
            os.makedirs(self.output_path)

        pass

    def collect_runs(self) -> dict:

        """
        Method to read the summary, evaluation and recall reports of every run.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "collect_runs"

        runs = []
        for run in self.run_paths:

            summary    = _load_json(os.path.join(run, 'summary.json'))
            evaluation = _load_json(os.path.join(run, 'evaluation.json'))

            reports = []
            for strategy in summary['strategies']:
                path = report_path(run, strategy)
                if not os.path.isfile(path):
                    raise FileNotFoundError(f"Recall report was not found: {path}")
                reports.append(EvalReport.from_frame(pd.read_csv(path), strategy, evaluation['tau']))

            runs.append({'name': os.path.basename(os.path.normpath(run)), 'summary': summary, 'evaluation': evaluation, 'reports': reports})

        self.runs = runs

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'runs': [r['name'] for r in runs]},
        }

        return out_dict

    def write_tables(self) -> dict:

        """
        Method to write ``comparison.csv`` (all runs, one column per strategy) and ``comparison.txt``.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "write_tables"

        frames, texts = [], []
        for run in self.runs:

            table = comparison_table(run['reports'])
            knobs = run['summary']['noise']

            table.insert(0, 'run', run['name'])
            for i, knob in enumerate(NOISE_KNOBS):
                table.insert(1 + i, knob, float(knobs[knob]))
            frames.append(table)

            setting = ', '.join(f"{knob}={float(knobs[knob]):g}" for knob in NOISE_KNOBS)
            texts.append(f"## {run['name']} ({setting}; disparity={run['summary']['disparity']})\n" + comparison_text(table.drop(columns=['run'] + NOISE_KNOBS)))

        merged = pd.concat(frames, ignore_index=True)

        csv_path = os.path.join(self.output_path, 'comparison.csv')
        txt_path = os.path.join(self.output_path, 'comparison.txt')
        self.files_written += [csv_path, txt_path]

        _write_csv(csv_path, merged, float_format='%.4f')
        atomic_write_bytes(txt_path, '\n'.join(texts).encode('utf-8'))

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'comparison': csv_path, 'text': txt_path},
        }

        return out_dict

    def draw_charts(self) -> dict:

        """
        Method to draw error-vs-noise and recall-vs-noise line charts, one line per strategy.

        Returns:
        --------
        out_dict : dict
            Dictionary containing a report of the process
        """

        step = "draw_charts"

        axis = noise_axis([run['summary'] for run in self.runs])

        rows = []
        for run in self.runs:
            for strategy, values in run['evaluation']['strategies'].items():
                rows.append({
                    'run'          : run['name'],
                    'strategy'     : strategy,
                    axis           : float(run['summary']['noise'][axis]),
                    'mean_error_mm': values['mean_error_mm'] if values['mean_error_mm'] is not None else np.nan,
                    'recall'       : values['overall_recall'],
                })
        curves = pd.DataFrame(rows).sort_values([axis, 'strategy'], kind='stable').reset_index(drop=True)

        error_path  = os.path.join(self.output_path, 'error_vs_noise.svg')
        recall_path = os.path.join(self.output_path, 'recall_vs_noise.svg')
        self.files_written += [error_path, recall_path]

        error_vs_noise_draw(curves, self.output_path, x_col=axis)
        recall_vs_noise_draw(curves, self.output_path, x_col=axis)

        out_dict = {
            'pass'  : True,
            'step'  : step,
            'output': {'error_chart': error_path, 'recall_chart': recall_path, 'axis': axis},
        }

        return out_dict
