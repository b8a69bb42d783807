"""
Command line interface.

    motioncluster synth --family F --count N --pose-level L --seed S --out DIR
    motioncluster discover --data DIR [--config FILE] --out DIR [--iterations I]
                           [--k K] [--seed S] [--workers W] [--resume]
    motioncluster eval --pred FILE --gt DIR --out report.json [--mode M]
    motioncluster gradcheck [--points P] [--seed S]
    motioncluster export --data DIR --pred FILE --shape ID --out FILE [--steps N]

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import logging
import os
import sys

from .annotations import read_annotations
from .config import load_config
from .evaluation import MODES, MATCHED, evaluate
from .gradcheck import format_results, run_gradcheck
from .pipeline import run_pipeline
from .shapes import load_dataset, write_dataset
from .synth import FAMILIES, export_sweep, synth_generate
from .util import Error, InputError, NumericalError

log = logging.getLogger(__name__)


def cmd_synth(args):
    shapes = synth_generate(args.family, args.count, args.pose_level, args.seed)
    write_dataset(shapes, args.out)
    print('wrote {} shapes to {}'.format(len(shapes), args.out))


def cmd_discover(args):
    config = load_config(args.config).override(
        iterations=args.iterations, k=args.k, seed=args.seed, workers=args.workers).validate()
    shapes = load_dataset(args.data)
    annotations = run_pipeline(shapes, config, args.out, resume=args.resume)
    parts = sum(len(items) for items in annotations.values())
    print('annotated {} parts of {} shapes in {}'.format(parts, len(annotations), args.out))


def cmd_eval(args):
    pred = read_annotations(args.pred)
    report = evaluate(pred, load_dataset(args.gt), args.mode)
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    report.write(args.out)
    print(report.table())


def cmd_gradcheck(args):
    results = run_gradcheck(args.points, args.seed)
    print(format_results(results))
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericalError('{} of {} gradient checks failed'.format(len(failed), len(results)))


def cmd_export(args):
    shapes = {s.id: s for s in load_dataset(args.data)}
    if args.shape not in shapes:
        raise InputError('no shape {!r} in {}'.format(args.shape, args.data))
    pred = read_annotations(args.pred)
    if args.shape not in pred:
        raise InputError('no predictions for shape {!r} in {}'.format(args.shape, args.pred))
    export_sweep(shapes[args.shape], pred[args.shape], args.steps, args.out)
    print('wrote {}'.format(args.out))


def build_parser():
    parser = argparse.ArgumentParser(
        prog='motioncluster',
        description='Unsupervised discovery of part motions in shape collections.')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings only')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='generate a synthetic dataset with ground truth')
    p.add_argument('--family', required=True, choices=FAMILIES)
    p.add_argument('--count', type=int, required=True)
    p.add_argument('--pose-level', type=int, default=0, choices=range(6))
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('discover', help='discover the motions of a dataset')
    p.add_argument('--data', required=True)
    p.add_argument('--config', help='YAML configuration, defaults when omitted')
    p.add_argument('--out', required=True)
    p.add_argument('--iterations', type=int)
    p.add_argument('--k', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--workers', type=int)
    p.add_argument('--resume', action='store_true')
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser('eval', help='score predictions against ground truth')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--mode', choices=MODES, default=MATCHED)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('gradcheck', help='compare loss gradients with finite differences')
    p.add_argument('--points', type=int, default=20)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('export', help='write an OBJ sweeping every moving part')
    p.add_argument('--data', required=True)
    p.add_argument('--pred', required=True)
    p.add_argument('--shape', required=True)
    p.add_argument('--steps', type=int, default=5)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    try:
        args.func(args)
    except Error as e:
        log.error('%s', e)
        return e.exit_code
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == '__main__':
    sys.exit(main())
