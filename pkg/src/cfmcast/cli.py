"""Command-line interface: ``cfmcast {run,sweep,check,export}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

import argparse
import csv
import json
import os
import sys

from . import __version__
from ._linalg import NumericalError
from .harness import (ALL_ALGORITHMS, FIGURE_FAMILIES, ExperimentSpec, RunResult,
                      emit_figure_data, export_results, load_config, run_experiment)
from .scenario import ConfigurationError

__all__ = ['main', 'build_parser', 'FAMILY_SWEEPS']

# figure family -> (sweep variable, default values, spec overrides)
FAMILY_SWEEPS = {
    'rate_vs_iter': (None, (), {}),
    'effrate_vs_iter': (None, (), {}),
    'effrate_vs_rt': ('r_t', (200, 500, 1000, 2000, 5000), {}),
    'effrate_vs_groupsize': ('group_size', (1, 2, 3, 4), {}),
    'effrate_vs_M': ('M', (2, 4, 8), {}),
    'lowsnr': ('r_t', (200, 500, 1000, 2000, 5000), {'noise_dbm': -75.0}),
    'mse_objective': ('rho_bs_dbm', (10, 20, 30, 40),
                      {'algorithms': ('Centralized', 'CentralizedSG'), 'csi_mode': 'perfect'}),
}


class UsageError(Exception):
    pass


def _algo_list(text):
    algos = tuple(a.strip() for a in text.split(',') if a.strip())
    bad = [a for a in algos if a not in ALL_ALGORITHMS]
    if bad or not algos:
        raise argparse.ArgumentTypeError(
            f'unknown algorithm(s) {bad}; choose from {",".join(ALL_ALGORITHMS)}')
    return algos


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError('must be a positive integer')
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError('seed must be an unsigned 64-bit integer')
    return v


def _float_list(text):
    try:
        return tuple(float(x) for x in text.split(',') if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_experiment_flags(p):
    p.add_argument('--config', metavar='PATH',
                   help="JSON experiment file, or a profile name ('desk', 'full')")
    p.add_argument('--seed', type=_seed, help='master seed (unsigned 64-bit)')
    p.add_argument('--drops', type=_positive_int, help='number of Monte Carlo drops')
    p.add_argument('--iters', type=_positive_int, help='bi-directional training iterations')
    p.add_argument('--algo', type=_algo_list, help='comma-separated algorithm list')
    p.add_argument('--csi', choices=('perfect', 'pilot'), help='CSI mode')
    p.add_argument('--r-t', dest='r_t', type=float, help='resource block size in symbols')
    p.add_argument('--workers', type=_positive_int, help='parallel worker processes')
    p.add_argument('--save-drops', action='store_true', help='keep per-drop traces in JSON')
    p.add_argument('--out', metavar='DIR', default='results', help='output directory')
    p.add_argument('--format', choices=('csv', 'json'), default='csv', help='output format')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='cfmcast', description='Distributed multi-group multicast precoding simulator.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help='run an experiment from a config file plus overrides')
    _add_experiment_flags(p)
    p.add_argument('--sweep-var', help='sweep variable')
    p.add_argument('--values', type=_float_list, help='comma-separated sweep values')

    p = sub.add_parser('sweep', help='run the experiment behind one figure family')
    p.add_argument('family', choices=FIGURE_FAMILIES)
    _add_experiment_flags(p)
    p.add_argument('--values', type=_float_list, help='override the default sweep values')

    p = sub.add_parser('check', help='run the fast invariant suite')
    p.add_argument('--seed', type=_seed, default=0)

    p = sub.add_parser('export', help='convert a saved JSON result to CSV or JSON')
    p.add_argument('input', help='JSON result written by run or sweep')
    p.add_argument('--out', metavar='DIR', default='.')
    p.add_argument('--format', choices=('csv', 'json'), default='csv')
    p.add_argument('--family', choices=FIGURE_FAMILIES, help='emit a figure table instead')
    return parser


def _base_spec(config):
    if config is None or config in ('desk', 'base'):
        return {}
    if config == 'full':
        return {'scenario': 'full', 'drops': 1000}
    if not os.path.exists(config):
        raise UsageError(f'config file not found: {config}')
    return load_config(config).to_dict()


def _spec_from_args(args, family=None):
    d = _base_spec(args.config)
    for key, flag in (('seed', 'seed'), ('drops', 'drops'), ('iterations', 'iters'),
                      ('algorithms', 'algo'), ('csi_mode', 'csi'), ('r_t', 'r_t'),
                      ('workers', 'workers')):
        value = getattr(args, flag)
        if value is not None:
            d[key] = value
    if args.save_drops:
        d['save_drops'] = True
    d['output'] = args.out
    if family is not None:
        var, values, overrides = FAMILY_SWEEPS[family]
        if var is None and args.values:
            raise UsageError(f'{family} has no sweep axis; --values does not apply')
        overrides = dict(overrides)
        noise = overrides.pop('noise_dbm', None)
        if 'algorithms' in overrides and args.algo is not None:
            raise UsageError(f'{family} fixes the algorithm list; drop --algo')
        if args.csi is not None:
            overrides.pop('csi_mode', None)
        d.update(overrides)
        d['sweep_var'] = var
        d['sweep_values'] = list(args.values or values)
        spec = ExperimentSpec.from_dict(d)
        if noise is not None:
            spec.scenario = spec.scenario.with_updates(sigma_bs_dbm=noise, sigma_ue_dbm=noise)
        return spec
    if args.values and not args.sweep_var:
        raise UsageError('--values needs --sweep-var')
    if args.sweep_var:
        d['sweep_var'] = args.sweep_var
        d['sweep_values'] = list(args.values or ())
    return ExperimentSpec.from_dict(d)


def _write_table(table, path, fmt):
    if fmt == 'json':
        with open(path, 'w') as fh:
            json.dump(table, fh, indent=1, sort_keys=True)
        return
    with open(path, 'w', newline='') as fh:
        w = csv.DictWriter(fh, fieldnames=table['columns'], lineterminator='\n')
        w.writeheader()
        for row in table['rows']:
            w.writerow({k: ('' if row[k] is None else row[k]) for k in table['columns']})


def _summary(result, out):
    out(f'{"algorithm":<14}{"sweep":>10}{"best R":>10}{"max Reff":>10}{"at i":>6}')
    for s in result.series:
        it, val = s.best_Reff
        sv = '' if s.sweep_value is None else f'{s.sweep_value:g}'
        out(f'{s.algorithm:<14}{sv:>10}{max(s.mean_R):>10.3f}{val:>10.3f}{it:>6d}')
    n = result.metadata['n_failures']
    if n:
        out(f'warning: {n} drop(s) excluded after solver failures')


def _cmd_run(args, out):
    spec = _spec_from_args(args)
    result = run_experiment(spec)
    out(f'wrote {export_results(result, args.out, args.format)}')
    if args.format == 'csv':
        export_results(result, args.out, 'json')
    _summary(result, out)
    return 0


def _cmd_sweep(args, out):
    spec = _spec_from_args(args, args.family)
    result = run_experiment(spec)
    export_results(result, args.out, 'json', stem=args.family + '_results')
    table = emit_figure_data(result, args.family)
    path = os.path.join(args.out, f'{args.family}.{args.format}')
    _write_table(table, path, args.format)
    out(f'wrote {path}')
    if args.family in ('effrate_vs_rt', 'lowsnr'):
        # one table per resource block size
        for v in spec.sweep_values:
            sub = {'columns': table['columns'],
                   'rows': [r for r in table['rows'] if r['r_t'] == v]}
            p = os.path.join(args.out, f'{args.family}_rt{v:g}.{args.format}')
            _write_table(sub, p, args.format)
            out(f'wrote {p}')
    _summary(result, out)
    return 0


def _cmd_check(args, out):
    from .checks import run_all
    return 0 if run_all(args.seed, out) else 1


def _cmd_export(args, out):
    try:
        with open(args.input) as fh:
            result = RunResult.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f'not a result file: {args.input} ({exc})') from exc
    if args.family:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f'{args.family}.{args.format}')
        _write_table(emit_figure_data(result, args.family), path, args.format)
    else:
        path = export_results(result, args.out, args.format)
    out(f'wrote {path}')
    return 0


def main(argv=None, out=print):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {'run': _cmd_run, 'sweep': _cmd_sweep, 'check': _cmd_check,
               'export': _cmd_export}[args.command]
    try:
        return handler(args, out)
    except (UsageError, ConfigurationError) as exc:
        print(f'cfmcast: usage error: {exc}', file=sys.stderr)
        return 2
    except (NumericalError, OSError, RuntimeError) as exc:
        print(f'cfmcast: error: {exc}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
