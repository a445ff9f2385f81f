import json
import logging
import sys

from stereo_pose.errors import ConfigurationError, ValidationError
from stereo_pose.estimate_ds import EstimateDS
from stereo_pose.evaluate_ds import EvaluateDS, ReportDS
from stereo_pose.Helpers import apply_overrides, arg_parser, default_workers, load_config, parse_strategies, remove_partial_outputs
from stereo_pose.scenegen import GenConfig, annotate_dataset, annotation_throughput, generate_dataset, throughput_passes

logger = logging.getLogger('stereo_pose')

EXIT_OK         = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME    = 2


def _setup_logging(verbose:bool, quiet:bool) -> None:

    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)


def _run_steps(name:str, worker, steps:dict) -> None:

    try:
        for step in steps.keys():
            report = steps[step]()
            logger.debug("%s: %s", step, report['output'])
    except BaseException:
        remove_partial_outputs(worker.files_written)
        raise

    print(f"\033[1m{name} steps completed.\033[0m")


def analysis_pipe(args_dict:dict, config:dict, workers:int) -> None:

    command  = args_dict['command']
    progress = not args_dict['quiet']

    if command == 'generate':
        apply_overrides(config, 'generate', {'seed': args_dict['seed'], 'scenes': args_dict['scenes'], 'views_per_scene': args_dict['views']})
        stats = generate_dataset(GenConfig.from_dict(config['generate']), args_dict['root'], workers=workers, progress=progress)
        logger.info("Dataset statistics: %s", stats.as_dict())
        print("\033[1mDataset generation completed.\033[0m")

    elif command == 'annotate':
        stats = annotate_dataset(args_dict['root'], workers=workers, progress=progress)
        logger.info("Annotation statistics: %s", stats.as_dict())
        print("\033[1mAnnotation completed.\033[0m")

    elif command == 'estimate':
        overrides = {key: args_dict[key] for key in ['noise_px', 'noise_mm', 'outlier_fraction', 'disparity_sigma', 'disparity', 'seed']}
        if args_dict['strategy'] is not None:
            overrides['strategies'] = parse_strategies(args_dict['strategy'])
        apply_overrides(config, 'estimate', overrides)
        apply_overrides(config, 'solver', {'seed': args_dict['seed']})

        est = EstimateDS(
            dataset_path=args_dict['root'],
            output_path =args_dict['output'],
            config_dict =config,
            workers     =workers,
            progress    =progress,
        )

        # pipeline steps
        est_steps = {
            'load_dataset'  : est.load_dataset,
            'run_strategies': est.run_strategies,
            'write_summary' : est.write_summary,
        }
        _run_steps('Estimation', est, est_steps)

    elif command == 'evaluate':
        apply_overrides(config, 'evaluate', {'tau': args_dict['tau']})

        ev = EvaluateDS(
            dataset_path=args_dict['root'],
            run_path    =args_dict['run'],
            config_dict =config,
        )

        ev_steps = {
            'load_inputs'    : ev.load_inputs,
            'score_estimates': ev.score_estimates,
            'build_reports'  : ev.build_reports,
        }
        _run_steps('Evaluation', ev, ev_steps)

    elif command == 'report':
        apply_overrides(config, 'report', {'runs': args_dict['runs'], 'output': args_dict['output']})

        rep = ReportDS(
            run_paths  =config['report']['runs'],
            output_path=config['report']['output'],
        )

        rep_steps = {
            'collect_runs': rep.collect_runs,
            'write_tables': rep.write_tables,
            'draw_charts' : rep.draw_charts,
        }
        _run_steps('Report', rep, rep_steps)

    elif command == 'bench':
        apply_overrides(config, 'bench', {'frames': args_dict['frames'], 'n_objects': args_dict['n_objects'], 'baseline_fps': args_dict['baseline_fps']})
        bench = config['bench']

        result = annotation_throughput(
            frames   =bench['frames'],
            width    =bench['width'],
            height   =bench['height'],
            n_objects=bench['n_objects'],
            workers  =workers,
            seed     =bench['seed'],
        )
        print(json.dumps(result, indent=2))

        if not throughput_passes(result, bench['baseline_fps'], bench['tolerance']):
            raise RuntimeError(
                f"throughput {result['fps']:.2f} frames/s is below {bench['tolerance']:g} x the baseline of {bench['baseline_fps']:.2f} frames/s"
            )
        print("\033[1mBenchmark completed.\033[0m")

    pass


def run(argv:list=None) -> int:

    """
    Command-line entry point; returns the process exit code (0 success, 1 invalid
    input or configuration, 2 runtime failure).
    """

    try:
        args = arg_parser(argv)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_VALIDATION

    args_dict = vars(args)
    command = args_dict['command']

    _setup_logging(args_dict['verbose'], args_dict['quiet'])

    try:
        config = load_config(args_dict['config'])
        workers = args_dict['workers'] if args_dict['workers'] is not None else default_workers()
        if workers < 1:
            raise ConfigurationError("--workers must be at least 1")

        analysis_pipe(args_dict, config, workers)

    except (ConfigurationError, ValidationError) as e:
        logger.error("%s: %s", command, e)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        logger.error("%s: interrupted", command)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("%s failed: %s", command, e, exc_info=args_dict['verbose'])
        return EXIT_RUNTIME

    return EXIT_OK


def execute_main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    execute_main()
