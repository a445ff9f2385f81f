"""
Pose-error metrics and per-object ADD(-S) recall tables.

Functions:
----------
- add_error / adds_error: average model-point distance (plain and closest-point).
- pose_error: ADD-S for symmetric objects, ADD otherwise.
- rotation_error_deg, translation_error_mm, depth_error_mm: per-estimate diagnostics.
- recall_table: per-object recall below ``tau * diameter`` with an unweighted overall mean.
- comparison_table: several reports side by side, one column per strategy.
"""

import logging

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from scipy.spatial import cKDTree

from stereo_pose.errors import ValidationError
from stereo_pose.geometry import Pose, rotation_geodesic
from stereo_pose.meshes import ObjectModel
from stereo_pose.rasterizer import TriMesh

logger = logging.getLogger(__name__)

MAX_MODEL_POINTS = 1024
DEFAULT_TAU      = 0.1

OVERALL_LABEL = 'Overall'
OVERALL_NOTE  = 'overall = unweighted mean of per-object recalls'


def farthest_point_sample(points:np.ndarray, k:int, seed:int=0) -> np.ndarray:

    """Indices of ``k`` points picked by farthest-point sampling (first point drawn from ``seed``)."""

    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]

    if k >= n:
        return np.arange(n)

    rng = np.random.default_rng(seed)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)

    for i in range(1, k):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(points - points[chosen[i]], axis=1))

    return chosen


@dataclass(eq=False)
class ObjectMeta:

    """
    Evaluation metadata of one object: model points (mm) for the metrics, the
    diameter of the full vertex set and the symmetry flag that selects ADD-S.
    """

    obj_id   : int
    points   : np.ndarray
    diameter : float
    symmetric: bool = False
    name     : str = ''

    def __post_init__(self) -> None:

        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

        if self.points.shape[0] == 0:
            raise ValueError(f"object {self.obj_id} has no model points")
        if not self.diameter > 0:
            raise ValueError(f"object {self.obj_id} needs a positive diameter")
        if not self.name:
            self.name = f"obj_{self.obj_id:06d}"

    @classmethod
    def from_mesh(cls, obj_id:int, mesh:TriMesh, symmetric:bool=False, max_points:int=MAX_MODEL_POINTS, seed:int=0) -> 'ObjectMeta':

        """Subsample mesh vertices to ``max_points`` by FPS; the diameter uses every vertex."""

        idx = farthest_point_sample(mesh.vertices, max_points, seed)

        return cls(obj_id, mesh.vertices[idx], mesh.diameter, symmetric, mesh.name)

    @classmethod
    def from_model(cls, model:ObjectModel, max_points:int=MAX_MODEL_POINTS) -> 'ObjectMeta':
        return cls.from_mesh(model.obj_id, model.mesh, model.symmetric, max_points, seed=model.obj_id)


def _check_points(points:np.ndarray) -> np.ndarray:

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValueError("model point set is empty")

    return points


def add_error(pose_gt:Pose, pose_est:Pose, model_points:np.ndarray) -> float:

    """Mean distance between corresponding model points under the two poses (mm)."""

    points = _check_points(model_points)

    return float(np.linalg.norm(pose_est.apply(points) - pose_gt.apply(points), axis=1).mean())


def adds_error(pose_gt:Pose, pose_est:Pose, model_points:np.ndarray) -> float:

    """Mean distance from each ground-truth model point to the closest estimated one (mm)."""

    points = _check_points(model_points)

    tree = cKDTree(pose_est.apply(points))
    dist, _ = tree.query(pose_gt.apply(points), k=1)

    return float(dist.mean())


def pose_error(meta:ObjectMeta, pose_gt:Pose, pose_est:Pose) -> float:
    if meta.symmetric:
        return adds_error(pose_gt, pose_est, meta.points)
    return add_error(pose_gt, pose_est, meta.points)


def rotation_error_deg(pose_gt:Pose, pose_est:Pose) -> float:
    return float(np.degrees(rotation_geodesic(pose_gt.rotation, pose_est.rotation)))


def translation_error_mm(pose_gt:Pose, pose_est:Pose) -> float:
    return float(np.linalg.norm(pose_est.translation - pose_gt.translation))


def depth_error_mm(pose_gt:Pose, pose_est:Pose) -> float:
    return float(abs(pose_est.translation[2] - pose_gt.translation[2]))


@dataclass(eq=False)
class EvalReport:

    """
    ADD(-S) recall per object (percent) for one strategy. ``overall`` is the
    unweighted mean of the per-object recalls.
    """

    strategy : str
    tau      : float
    recalls  : dict = field(default_factory=dict)
    counts   : dict = field(default_factory=dict)
    names    : dict = field(default_factory=dict)
    symmetric: dict = field(default_factory=dict)

    @property
    def overall(self) -> float:
        if not self.recalls:
            return 0.0
        return float(np.mean([self.recalls[obj_id] for obj_id in sorted(self.recalls)]))

    def to_frame(self) -> pd.DataFrame:

        rows = [
            {'obj_id': obj_id, 'object': self.names[obj_id], 'symmetric': self.symmetric[obj_id], 'count': self.counts[obj_id], 'recall': self.recalls[obj_id]}
            for obj_id in sorted(self.recalls)
        ]
        rows.append({'obj_id': -1, 'object': OVERALL_LABEL, 'symmetric': False, 'count': int(sum(self.counts.values())), 'recall': self.overall})

        return pd.DataFrame(rows, columns=['obj_id', 'object', 'symmetric', 'count', 'recall'])

    @classmethod
    def from_frame(cls, frame:pd.DataFrame, strategy:str, tau:float) -> 'EvalReport':

        """Inverse of :meth:`to_frame`; the overall footer row is recomputed, not read."""

        rows = frame[frame['obj_id'] != -1].to_dict('records')

        return cls(
            strategy =strategy,
            tau      =tau,
            recalls  ={int(r['obj_id']): float(r['recall']) for r in rows},
            counts   ={int(r['obj_id']): int(r['count']) for r in rows},
            names    ={int(r['obj_id']): str(r['object']) for r in rows},
            symmetric={int(r['obj_id']): bool(r['symmetric']) for r in rows},
        )

    def to_csv(self, path:str) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.4f', lineterminator='\n')

    def to_text(self) -> str:

        frame = self.to_frame()
        width = max(len(OVERALL_LABEL), frame['object'].str.len().max()) + 2

        lines = [f"# {self.strategy}: ADD(-S) recall at {self.tau:g} d ({OVERALL_NOTE}; * symmetric)"]
        for _, row in frame.iterrows():
            label = row['object'] + ('*' if row['symmetric'] else '')
            lines.append(f"{label:<{width}}{row['recall']:>8.2f}{row['count']:>8d}")

        return '\n'.join(lines) + '\n'


def recall_table(results:list, meta:dict, tau:float=DEFAULT_TAU, strategy:str='') -> EvalReport:

    """
    Per-object recall: ``100 * |{error < tau * diameter}| / count``.

    Parameters:
    -----------
    results: list
        ``(obj_id, error_mm)`` pairs; errors of symmetric objects must already be ADD-S.
    meta: dict
        ``{obj_id: ObjectMeta}``.
    tau: float
        Threshold as a fraction of the diameter.

    Raises:
    -------
    ValidationError
        If a result refers to an object without metadata.
    """

    if not tau > 0:
        raise ValueError("tau must be positive")

    hits, counts = {}, {}

    for obj_id, error in results:

        if obj_id not in meta:
            raise ValidationError(f"no object metadata for obj_id {obj_id}")
        if not np.isfinite(error):
            error = np.inf

        counts[obj_id] = counts.get(obj_id, 0) + 1
        hits[obj_id] = hits.get(obj_id, 0) + int(error < tau * meta[obj_id].diameter)

    return EvalReport(
        strategy =strategy,
        tau      =tau,
        recalls  ={obj_id: 100.0 * hits[obj_id] / counts[obj_id] for obj_id in counts},
        counts   =counts,
        names    ={obj_id: meta[obj_id].name for obj_id in counts},
        symmetric={obj_id: bool(meta[obj_id].symmetric) for obj_id in counts},
    )


def comparison_table(reports:list) -> pd.DataFrame:

    """
    One recall column per report (strategy), one row per object plus the overall
    footer; ``best`` names the column with the highest recall of each row.
    """

    if not reports:
        raise ValueError("at least one report is required")

    strategies = [report.strategy for report in reports]
    if len(set(strategies)) != len(strategies):
        raise ValidationError("reports must have distinct strategy names")

    obj_ids = sorted(set().union(*[report.recalls.keys() for report in reports]))
    names, symmetric = {}, {}
    for report in reports:
        names.update(report.names)
        symmetric.update(report.symmetric)

    rows = []
    for obj_id in obj_ids:
        row = {'obj_id': obj_id, 'object': names[obj_id], 'symmetric': symmetric[obj_id]}
        row.update({report.strategy: report.recalls.get(obj_id, np.nan) for report in reports})
        rows.append(row)

    footer = {'obj_id': -1, 'object': OVERALL_LABEL, 'symmetric': False}
    footer.update({report.strategy: report.overall for report in reports})
    rows.append(footer)

    table = pd.DataFrame(rows, columns=['obj_id', 'object', 'symmetric'] + strategies)
    table['best'] = table[strategies].idxmax(axis=1, skipna=True)

    return table


def comparison_text(table:pd.DataFrame) -> str:

    """Aligned text rendering: best value of each row in brackets, symmetric objects starred."""

    strategies = [c for c in table.columns if c not in ('obj_id', 'object', 'symmetric', 'best')]
    width = max(len(OVERALL_LABEL), table['object'].str.len().max()) + 3
    col = max(10, max(len(s) for s in strategies) + 2)

    lines = [f"# ADD(-S) recall in percent; [best], * symmetric; {OVERALL_NOTE}"]
    lines.append(f"{'object':<{width}}" + ''.join(f"{s:>{col}}" for s in strategies))

    for _, row in table.iterrows():
        label = row['object'] + ('*' if row['symmetric'] else '')
        cells = []
        for s in strategies:
            value = row[s]
            text = '-' if pd.isna(value) else f"{value:.2f}"
            cells.append(f"{('[' + text + ']') if s == row['best'] else text:>{col}}")
        lines.append(f"{label:<{width}}" + ''.join(cells))

    return '\n'.join(lines) + '\n'
