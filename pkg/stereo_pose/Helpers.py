import argparse
import json
import logging
import os
import tempfile

from stereo_pose.errors import ConfigurationError

logger = logging.getLogger(__name__)

STRATEGY_NAMES = [
    'MONO_LEFT',
    'LATE_POSE_COMBINE',
    'MID_JOINT_PNP',
    'DISPARITY_3D3D',
    'EARLY_JOINT_PNP_PLUS_DEPTH',
    'DOUBLE_FUSION',
]

# section -> key -> (accepted types, default)
CONFIG_SCHEMA = {
    'generate': {
        'objects'        : (list, [1, 2, 3, 4, 5, 6]),
        'n_objects'      : (list, [3, 8]),
        'max_objects'    : (int, 15),
        'scenes'         : (int, 2),
        'views_per_scene': (int, 25),
        'depth_range'    : (list, [450.0, 800.0]),
        'lateral_range'  : (float, 120.0),
        'view_cone_deg'  : (float, 25.0),
        'baseline'       : (float, 50.0),
        'width'          : (int, 640),
        'height'         : (int, 480),
        'fx'             : (float, 600.0),
        'fy'             : (float, 600.0),
        'n_regions'      : (int, 64),
        'min_visib'      : (float, 0.10),
        'seed'           : (int, 0),
    },
    'solver': {
        'ransac_threshold_px': (float, 3.0),
        'ransac_confidence'  : (float, 0.999),
        'max_iterations'     : (int, 10000),
        'refine_iterations'  : (int, 20),
        'inlier_threshold_mm': (float, 10.0),
        'depth_weight'       : (float, 1.0),
        'max_correspondences': (int, 2000),
        'seed'               : (int, 0),
    },
    'estimate': {
        'strategies'      : (list, ['MONO_LEFT', 'MID_JOINT_PNP']),
        'noise_px'        : (float, 0.0),
        'noise_mm'        : (float, 0.0),
        'outlier_fraction': (float, 0.0),
        'disparity_sigma' : (float, 0.0),
        'disparity'       : (str, 'gt'),
        'max_disp'        : (int, 128),
        'window'          : (int, 9),
        'seed'            : (int, 0),
    },
    'evaluate': {
        'tau'             : (float, 0.1),
        'max_model_points': (int, 1024),
    },
    'report': {
        'runs'  : (list, []),
        'output': (str, 'report'),
    },
    'bench': {
        'frames'      : (int, 20),
        'width'       : (int, 640),
        'height'      : (int, 480),
        'n_objects'   : (int, 8),
        'baseline_fps': (float, 0.0),
        'tolerance'   : (float, 0.5),
        'seed'        : (int, 0),
    },
}


def default_workers() -> int:

    """
    Worker count from ``STEREO_POSE_WORKERS``; otherwise all but two cores (at least one).
    """

    value = os.environ.get('STEREO_POSE_WORKERS')
    if value is not None:
        try:
            workers = int(value)
        except ValueError:
            raise ConfigurationError(f"STEREO_POSE_WORKERS must be an integer, got '{value}'")
        if workers < 1:
            raise ConfigurationError("STEREO_POSE_WORKERS must be at least 1")
        return workers

    cpus = os.cpu_count() or 1

    return max(1, cpus - 2)


def _check_value(section:str, key:str, value):

    expected, default = CONFIG_SCHEMA[section][key]

    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigurationError(f"[{section}] {key} should be of type int, got bool")
    if not isinstance(value, expected):
        raise ConfigurationError(f"[{section}] {key} should be of type {expected.__name__}, got {type(value).__name__}")

    return value


def default_config() -> dict:
    return {section: {key: spec[1] for key, spec in keys.items()} for section, keys in CONFIG_SCHEMA.items()}


def load_config(path:str=None) -> dict:

    """
    Read a JSON configuration file and merge it over the defaults.

    Parameters:
    -----------
    path: str
        Path to the JSON file, or None for the defaults only.

    Returns:
    --------
    dict
        One dictionary per section.

    Raises:
    -------
    ConfigurationError
        On unknown sections or keys, or values of the wrong type.
    """

    config = default_config()

    if path is None:
        return config

    if not os.path.isfile(path):
        raise ConfigurationError(f"Configuration file not found: {path}")

    with open(path, 'r') as file:
        try:
            data = json.load(file)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Malformed configuration file {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration file {path} must hold a JSON object")

    for section, values in data.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigurationError(f"Unknown configuration section '{section}' in {path}")
        if not isinstance(values, dict):
            raise ConfigurationError(f"Section '{section}' in {path} must be an object")
        for key, value in values.items():
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigurationError(f"Unknown key '{key}' in section '{section}' of {path}")
            config[section][key] = _check_value(section, key, value)

    return config


def apply_overrides(config:dict, section:str, overrides:dict) -> dict:

    """Overwrite ``config[section]`` with every non-None entry of ``overrides``."""

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in CONFIG_SCHEMA[section]:
            raise ConfigurationError(f"Unknown key '{key}' in section '{section}'")
        config[section][key] = _check_value(section, key, value)

    return config


def parse_strategies(text) -> list:

    if isinstance(text, str):
        names = [name.strip().upper() for name in text.split(',') if name.strip()]
    else:
        names = [str(name).strip().upper() for name in text]

    if not names:
        raise ConfigurationError("at least one strategy must be given")
    unknown = [name for name in names if name not in STRATEGY_NAMES]
    if unknown:
        raise ConfigurationError(f"unknown strategy name(s): {', '.join(unknown)}; choose from {', '.join(STRATEGY_NAMES)}")

    return names


def arg_parser(argv:list=None) -> argparse.Namespace:

    # options shared by every subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Full path to the JSON configuration file.')
    common.add_argument('--workers', type=int, default=None, help='Number of worker processes (default: STEREO_POSE_WORKERS or cores - 2).')
    common.add_argument('-v', '--verbose', action='store_true', help='Log debug messages.')
    common.add_argument('-q', '--quiet', action='store_true', help='Log warnings and errors only.')

    parser = argparse.ArgumentParser(prog='stereo_pose', description='Stereo 6D object pose toolkit: dataset generation, pose estimation and evaluation.')
    sub = parser.add_subparsers(dest='command', required=True)

    # synthetic dataset generation
    gen = sub.add_parser('generate', parents=[common], help='Generate a synthetic stereo dataset in BOP layout.')
    gen.add_argument('--root', type=str, required=True, help='Dataset root directory.')
    gen.add_argument('--seed', type=int, default=None, help='Master seed.')
    gen.add_argument('--scenes', type=int, default=None, help='Number of scenes.')
    gen.add_argument('--views', type=int, default=None, help='Viewpoints per scene.')

    ann = sub.add_parser('annotate', parents=[common], help='Recompute feature maps and visibilities of an existing dataset.')
    ann.add_argument('--root', type=str, required=True, help='Dataset root directory.')

    est = sub.add_parser('estimate', parents=[common], help='Run pose strategies over a dataset.')
    est.add_argument('--root', type=str, required=True, help='Dataset root directory.')
    est.add_argument('--output', type=str, required=True, help='Run directory for the estimates.')
    est.add_argument('--strategy', type=str, default=None, help='Comma-separated strategy names.')
    est.add_argument('--noise-px', dest='noise_px', type=float, default=None, help='Gaussian pixel noise on correspondences.')
    est.add_argument('--noise-mm', dest='noise_mm', type=float, default=None, help='Gaussian noise on object coordinates (mm).')
    est.add_argument('--outlier-fraction', dest='outlier_fraction', type=float, default=None, help='Fraction of correspondences replaced by outliers.')
    est.add_argument('--disparity-sigma', dest='disparity_sigma', type=float, default=None, help='Gaussian noise on ground-truth disparity (px).')
    est.add_argument('--disparity', type=str, choices=['gt', 'block'], default=None, help='Disparity source.')
    est.add_argument('--seed', type=int, default=None, help='Noise and solver seed.')

    ev = sub.add_parser('evaluate', parents=[common], help='Score estimates with ADD(-S) recall.')
    ev.add_argument('--root', type=str, required=True, help='Dataset root directory.')
    ev.add_argument('--run', type=str, required=True, help='Run directory written by estimate.')
    ev.add_argument('--tau', type=float, default=None, help='Recall threshold as a fraction of the diameter.')

    rep = sub.add_parser('report', parents=[common], help='Merge evaluated runs into comparison tables and charts.')
    rep.add_argument('--runs', type=str, nargs='+', default=None, help='Evaluated run directories.')
    rep.add_argument('--output', type=str, default=None, help='Report directory.')

    bench = sub.add_parser('bench', parents=[common], help='Measure annotation throughput.')
    bench.add_argument('--frames', type=int, default=None, help='Number of stereo frames to annotate.')
    bench.add_argument('--objects', dest='n_objects', type=int, default=None, help='Objects per frame.')
    bench.add_argument('--baseline-fps', dest='baseline_fps', type=float, default=None, help='Recorded throughput to gate against.')

    return parser.parse_args(argv)


def atomic_write_bytes(path:str, data:bytes) -> None:

    """Write ``data`` to a temporary file next to ``path``, then rename it into place."""

    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)

    fd, tmp_path = tempfile.mkstemp(dir=folder, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'wb') as file:
            file.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_json(path:str, data) -> None:
    atomic_write_bytes(path, (json.dumps(data, indent=2) + '\n').encode('utf-8'))


def remove_partial_outputs(paths:list) -> None:

    """
    Remove files written by a step that failed half way. Directories are left in place.
    """

    for path in paths:
        if os.path.isfile(path):
            os.remove(path)
            logger.info("Removed partial output %s", path)
