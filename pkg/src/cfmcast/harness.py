"""Monte Carlo experiments: drops, algorithm sweeps, aggregation and export.

Every random draw is derived from the master seed through
:class:`numpy.random.SeedSequence` spawn keys::

    (drop, 0)               topology
    (drop, 1)               channels
    (drop, 2)               initial combiners
    (drop, 3 + a)           noise of algorithm ``a`` (index in ``ALL_ALGORITHMS``)

so every algorithm in a drop sees the same channels and initial combiners,
and results do not depend on the worker count.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import csv
import json
import os
import warnings

import numpy as np

from . import __version__
from ._linalg import NumericalError
from .airlink import make_pilot_book
from .centralized import run_centralized, run_centralized_pilot
from .distributed import StepConfig, run_bidirectional
from .metrics import ALGORITHMS, effective_rate, pilot_overhead
from .scenario import (ConfigurationError, ScenarioConfig, generate_channels,
                       generate_topology)

__all__ = ['ExperimentSpec', 'RunResult', 'SeriesStats', 'run_experiment', 'export_results',
           'emit_figure_data', 'load_config', 'ALL_ALGORITHMS', 'SWEEP_VARS', 'FIGURE_FAMILIES',
           'CSV_COLUMNS']

ALL_ALGORITHMS = ALGORITHMS + ('CentralizedSG',)
SWEEP_VARS = ('iterations', 'r_t', 'group_size', 'M', 'noise_dbm', 'rho_bs_dbm')
FIGURE_FAMILIES = ('rate_vs_iter', 'effrate_vs_iter', 'effrate_vs_rt', 'effrate_vs_groupsize',
                   'effrate_vs_M', 'lowsnr', 'mse_objective')
CSV_COLUMNS = ('algorithm', 'csi_mode', 'sweep_var', 'sweep_value', 'iteration', 'mean_R',
               'se_R', 'mean_Reff', 'se_Reff', 'r_ce')
# sweep axes that only change post-processing, not the simulated drops
_POSTPROCESS_AXES = ('iterations', 'r_t')


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig.desk)
    algorithms: tuple = ('GB', 'BR', 'BR-GS', 'LocalMMSE', 'LocalMF')
    csi_mode: str = 'pilot'
    iterations: int = 30
    drops: int = 100
    r_t: float = 1000.0
    sweep_var: str = None
    sweep_values: tuple = ()
    seed: int = 0
    steps: StepConfig = field(default_factory=StepConfig)
    pilot_lengths: dict = None
    workers: int = 1
    save_drops: bool = False
    output: str = None

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.sweep_values = tuple(self.sweep_values)
        self.validate()

    def validate(self):
        if self.drops < 1:
            raise ConfigurationError('drops must be >= 1')
        if self.iterations < 1:
            raise ConfigurationError('iterations must be >= 1')
        if self.csi_mode not in ('perfect', 'pilot'):
            raise ConfigurationError(f'unknown CSI mode {self.csi_mode!r}')
        if not self.algorithms:
            raise ConfigurationError('no algorithms selected')
        for a in self.algorithms:
            if a not in ALL_ALGORITHMS:
                raise ConfigurationError(f'unknown algorithm {a!r}; choose from {ALL_ALGORITHMS}')
        if not self.r_t > 0:
            raise ConfigurationError('r_t must be positive')
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError('seed must be an unsigned 64-bit integer')
        if self.sweep_var is None:
            if self.sweep_values:
                raise ConfigurationError('sweep values given without a sweep variable')
            return
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigurationError(f'unknown sweep variable {self.sweep_var!r}')
        if not self.sweep_values:
            raise ConfigurationError(f'sweep over {self.sweep_var} needs values')
        for v in self.sweep_values:
            self.scenario_for(v)
            if self.sweep_var == 'iterations' and not 1 <= int(v) <= self.iterations:
                raise ConfigurationError('iteration sweep values must lie in [1, iterations]')
            if self.sweep_var == 'r_t' and not v > 0:
                raise ConfigurationError('r_t values must be positive')

    @property
    def points(self):
        """Sweep values, or a single ``None`` when nothing is swept."""
        return self.sweep_values if self.sweep_var else (None,)

    def scenario_for(self, value):
        s = self.scenario
        if value is None or self.sweep_var in _POSTPROCESS_AXES:
            return s
        if self.sweep_var == 'group_size':
            size = int(value)
            return s.with_updates(K=size * s.G, group_sizes=(size,) * s.G)
        if self.sweep_var == 'M':
            return s.with_updates(M=int(value))
        if self.sweep_var == 'noise_dbm':
            return s.with_updates(sigma_bs_dbm=float(value), sigma_ue_dbm=float(value))
        return s.with_updates(rho_bs_dbm=float(value))

    def to_dict(self):
        d = asdict(self)
        d.pop('output')          # keep exports independent of where they are written
        d['scenario'] = self.scenario.to_dict()
        d['algorithms'] = list(self.algorithms)
        d['sweep_values'] = list(self.sweep_values)
        d['steps'] = asdict(self.steps)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigurationError(f'unknown experiment keys: {sorted(unknown)}')
        if 'scenario' in d:
            sc = d['scenario']
            if isinstance(sc, str):
                profiles = {'desk': ScenarioConfig.desk, 'full': ScenarioConfig.full}
                if sc not in profiles:
                    raise ConfigurationError(f'unknown scenario profile {sc!r}')
                d['scenario'] = profiles[sc]()
            elif isinstance(sc, dict):
                sc = dict(sc)
                base = sc.pop('profile', 'desk')
                if base not in ('desk', 'full'):
                    raise ConfigurationError(f'unknown scenario profile {base!r}')
                merged = getattr(ScenarioConfig, base)().to_dict()
                if 'group_sizes' not in sc and ('K' in sc or 'G' in sc):
                    K, G = sc.pop('K', merged['K']), sc.pop('G', merged['G'])
                    sc.update(K=K, G=G, group_sizes=[K // G + (g < K % G) for g in range(G)])
                merged.update(sc)
                try:
                    d['scenario'] = ScenarioConfig(**merged)
                except TypeError as exc:
                    raise ConfigurationError(f'bad scenario section: {exc}') from exc
        if 'steps' in d and isinstance(d['steps'], dict):
            try:
                d['steps'] = StepConfig(**d['steps'])
            except TypeError as exc:
                raise ConfigurationError(f'bad steps section: {exc}') from exc
        return cls(**d)


def load_config(path):
    """Read an experiment spec from a JSON document."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f'malformed config {path}: {exc}') from exc
    if not isinstance(raw, dict):
        raise ConfigurationError('config must be a JSON object')
    return ExperimentSpec.from_dict(raw)


# -- drops ------------------------------------------------------------------------

def _drop_rngs(seed, drop, algorithms):
    rngs = {name: np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(drop, i)))
            for name, i in (('topology', 0), ('channels', 1), ('combiners', 2))}
    for a in algorithms:
        key = (drop, 3 + ALL_ALGORITHMS.index(a))
        rngs[a] = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
    return rngs


def _pad(x, n):
    x = list(x)[:n]
    return np.array(x + [x[-1]] * (n - len(x)), dtype=float)


def _run_drop(args):
    """Simulate one drop for every algorithm; returns per-algorithm rate traces."""
    spec, value, drop = args
    sc = spec.scenario_for(value)
    rngs = _drop_rngs(spec.seed, drop, spec.algorithms)
    top = generate_topology(sc, rngs['topology'])
    ch = generate_channels(top, sc, rngs['channels'])
    V0 = rngs['combiners'].standard_normal((sc.K, sc.N)) \
        + 1j * rngs['combiners'].standard_normal((sc.K, sc.N))
    V0 /= np.linalg.norm(V0, axis=1, keepdims=True)
    pilots = make_pilot_book(sc.K, sc.N, sc.G, spec.pilot_lengths)
    out, failures = {}, {}
    for a in spec.algorithms:
        try:
            out[a] = _run_algorithm(a, spec, sc, ch.H, top.group_of_ue, V0, pilots, rngs[a])
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures[a] = str(exc)
    return out, failures


def _run_algorithm(a, spec, sc, H, groups, V0, pilots, rng):
    I = spec.iterations
    if a in ('Centralized', 'CentralizedSG'):
        mode = 'sum_group' if a == 'CentralizedSG' else 'sum_mse'
        if spec.csi_mode == 'pilot':
            res = run_centralized_pilot(H, groups, sc.rho_bs, sc.rho_ue, sc.sigma2_bs,
                                        sc.sigma2_ue, V0, rng, pilots, mode=mode)
        else:
            res = run_centralized(H, groups, sc.rho_bs, sc.sigma2_ue, V0, mode=mode,
                                  max_outer=I)
        tr = res.trace
        blocks = getattr(res, 'blocks', None)
        ue_tx = blocks['UL'].tx_power if blocks else 0.0
        bs_tx = blocks['DL'].tx_power if blocks else max(p.max() for p in tr.bs_power)
        return {'rate': _pad(tr.rate, I), 'sum_mse': _pad(tr.sum_mse, I),
                'max_power': _pad([p.max() for p in tr.bs_power], I),
                'max_ue_tx': np.full(I, ue_tx), 'max_bs_tx': np.full(I, bs_tx)}
    res = run_bidirectional(a, H, groups, sc.rho_bs, sc.rho_ue, sc.sigma2_bs, sc.sigma2_ue, V0,
                            I, spec.csi_mode, rng, pilots=pilots, steps=spec.steps)
    tr = res.trace
    return {'rate': np.asarray(tr.rate, dtype=float), 'sum_mse': np.asarray(tr.sum_mse),
            'max_power': np.array([p.max() for p in tr.bs_power]),
            'max_ue_tx': np.asarray(res.ue_tx_power, dtype=float),
            'max_bs_tx': np.asarray(res.bs_tx_power, dtype=float)}


# -- aggregation ----------------------------------------------------------------------

@dataclass
class SeriesStats:
    algorithm: str
    sweep_value: object
    r_t: float
    r_ce: int
    iterative: bool
    n_drops: int
    mean_R: list
    se_R: list
    mean_Reff: list
    se_Reff: list

    @property
    def best_Reff(self):
        i = int(np.argmax(self.mean_Reff))
        return i + 1, float(self.mean_Reff[i])


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        return mean.tolist(), [None] * x.shape[1]
    return mean.tolist(), (x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])).tolist()


@dataclass
class RunResult:
    spec: dict
    series: list
    metadata: dict
    per_drop: dict = None

    def get(self, algorithm, sweep_value=None):
        for s in self.series:
            if s.algorithm == algorithm and s.sweep_value == sweep_value:
                return s
        raise KeyError((algorithm, sweep_value))

    def to_dict(self):
        return {'spec': self.spec, 'series': [asdict(s) for s in self.series],
                'metadata': self.metadata, 'per_drop': self.per_drop}

    @classmethod
    def from_dict(cls, d):
        return cls(spec=d['spec'], series=[SeriesStats(**s) for s in d['series']],
                   metadata=d['metadata'], per_drop=d.get('per_drop'))


def run_experiment(spec):
    """Run every drop of ``spec`` and aggregate mean and standard error per iteration."""
    spec.validate()
    sim_points = (None,) if spec.sweep_var in _POSTPROCESS_AXES or not spec.sweep_var \
        else spec.points
    jobs = [(spec, v, d) for v in sim_points for d in range(spec.drops)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_drop, jobs))
    else:
        results = [_run_drop(j) for j in jobs]

    by_point = {v: results[i * spec.drops:(i + 1) * spec.drops] for i, v in enumerate(sim_points)}
    failures, feasibility = [], {'max_bs_power': 0.0, 'max_ue_pilot_power': 0.0,
                                 'max_bs_pilot_power': 0.0}
    series, per_drop = [], {}
    I = spec.iterations
    for value in spec.points:
        sim_value = None if spec.sweep_var in _POSTPROCESS_AXES or not spec.sweep_var else value
        sc = spec.scenario_for(sim_value)
        r_t = float(value) if spec.sweep_var == 'r_t' else spec.r_t
        n_it = int(value) if spec.sweep_var == 'iterations' else I
        lengths = make_pilot_book(sc.K, sc.N, sc.G, spec.pilot_lengths).lengths
        for a in spec.algorithms:
            ok = [(d, res[0][a]) for d, res in enumerate(by_point[sim_value]) if a in res[0]]
            for d, res in enumerate(by_point[sim_value]):
                if a in res[1]:
                    failures.append({'algorithm': a, 'sweep_value': value, 'drop': d,
                                     'error': res[1][a]})
            if not ok:
                raise NumericalError(f'{a}: every drop failed')
            rates = np.stack([r['rate'][:n_it] for _, r in ok])
            for _, r in ok:
                feasibility['max_bs_power'] = max(feasibility['max_bs_power'],
                                                  float(r['max_power'].max()))
                feasibility['max_ue_pilot_power'] = max(feasibility['max_ue_pilot_power'],
                                                        float(r['max_ue_tx'].max()))
                feasibility['max_bs_pilot_power'] = max(feasibility['max_bs_pilot_power'],
                                                        float(r['max_bs_tx'].max()))
            ov = pilot_overhead(a, sc.K, sc.G, sc.N, 1, lengths)
            # the centralized reference trains once, so its overhead does not grow with i
            i_axis = np.arange(1, n_it + 1) if ov.iterative else np.ones(n_it)
            eff = effective_rate(rates, ov.per_iteration, r_t, i_axis)
            mR, sR = _mean_se(rates)
            mE, sE = _mean_se(eff)
            series.append(SeriesStats(a, value, r_t, ov.per_iteration, ov.iterative, len(ok),
                                      mR, sR, mE, sE))
            if spec.save_drops:
                per_drop[f'{a}|{value}'] = {'drops': [d for d, _ in ok], 'rate': rates.tolist()}
    if failures:
        warnings.warn(f'{len(failures)} solver runs failed and were excluded', RuntimeWarning)
    metadata = {
        'version': __version__,
        'master_seed': int(spec.seed),
        'drop_seeds': [{'entropy': int(spec.seed), 'spawn_key': [d]} for d in range(spec.drops)],
        'failures': failures,
        'n_failures': len(failures),
        'feasibility': feasibility,
        'rho_bs': spec.scenario.rho_bs,
        'rho_ue': spec.scenario.rho_ue,
    }
    return RunResult(spec.to_dict(), series, metadata, per_drop if spec.save_drops else None)


# -- export -------------------------------------------------------------------------

def _fmt(x):
    return '' if x is None else repr(float(x))


def export_results(result, out_dir, fmt='csv', stem='results'):
    """Write ``result`` as CSV (one row per series and iteration) or JSON; returns the path."""
    if fmt not in ('csv', 'json'):
        raise ConfigurationError(f'unknown export format {fmt!r}')
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f'{stem}.{fmt}')
    if fmt == 'json':
        with open(path, 'w') as fh:
            json.dump(result.to_dict(), fh, indent=1, sort_keys=True)
        return path
    csi = result.spec['csi_mode']
    var = result.spec['sweep_var'] or ''
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(CSV_COLUMNS)
        for s in result.series:
            sv = '' if s.sweep_value is None else s.sweep_value
            for i in range(len(s.mean_R)):
                w.writerow([s.algorithm, csi, var, sv, i + 1, _fmt(s.mean_R[i]), _fmt(s.se_R[i]),
                            _fmt(s.mean_Reff[i]), _fmt(s.se_Reff[i]), s.r_ce])
    return path


# -- figure tables ----------------------------------------------------------------------

def _require(result, family, var):
    if result.spec['sweep_var'] != var:
        raise ConfigurationError(
            f'{family} needs a sweep over {var!r}; result sweeps {result.spec["sweep_var"]!r}')


def _best_table(result, axis_name):
    rows = []
    for s in result.series:
        it, val = s.best_Reff
        rows.append({'algorithm': s.algorithm, axis_name: s.sweep_value, 'max_Reff': val,
                     'best_iteration': it})
    return {'columns': ['algorithm', axis_name, 'max_Reff', 'best_iteration'], 'rows': rows}


def emit_figure_data(result, family):
    """Plot-ready table ``{'columns': [...], 'rows': [dict, ...]}`` for one figure family."""
    if family not in FIGURE_FAMILIES:
        raise ConfigurationError(f'unknown figure family {family!r}; choose from {FIGURE_FAMILIES}')
    if family == 'rate_vs_iter':
        rows = [{'algorithm': s.algorithm, 'sweep_value': s.sweep_value, 'iteration': i + 1,
                 'mean_R': s.mean_R[i], 'se_R': s.se_R[i]}
                for s in result.series for i in range(len(s.mean_R))]
        return {'columns': ['algorithm', 'sweep_value', 'iteration', 'mean_R', 'se_R'],
                'rows': rows}
    if family == 'effrate_vs_iter':
        rows = []
        for s in result.series:
            best, _ = s.best_Reff
            rows += [{'algorithm': s.algorithm, 'sweep_value': s.sweep_value, 'iteration': i + 1,
                      'mean_Reff': s.mean_Reff[i], 'se_Reff': s.se_Reff[i],
                      'is_max': i + 1 == best} for i in range(len(s.mean_Reff))]
        return {'columns': ['algorithm', 'sweep_value', 'iteration', 'mean_Reff', 'se_Reff',
                            'is_max'], 'rows': rows}
    if family == 'effrate_vs_rt':
        _require(result, family, 'r_t')
        return _best_table(result, 'r_t')
    if family == 'effrate_vs_groupsize':
        _require(result, family, 'group_size')
        return _best_table(result, 'group_size')
    if family == 'effrate_vs_M':
        _require(result, family, 'M')
        return _best_table(result, 'M')
    if family == 'lowsnr':
        _require(result, family, 'r_t')
        noise = result.spec['scenario']['sigma_bs_dbm']
        table = _best_table(result, 'r_t')
        for row in table['rows']:
            row['noise_dbm'] = noise
        table['columns'].append('noise_dbm')
        return table
    _require(result, family, 'rho_bs_dbm')
    rows = [{'algorithm': s.algorithm, 'rho_bs_dbm': s.sweep_value, 'iteration': i + 1,
             'mean_R': s.mean_R[i], 'se_R': s.se_R[i]}
            for s in result.series if s.algorithm in ('Centralized', 'CentralizedSG')
            for i in range(len(s.mean_R))]
    if not rows:
        raise ConfigurationError('mse_objective needs Centralized and CentralizedSG series')
    return {'columns': ['algorithm', 'rho_bs_dbm', 'iteration', 'mean_R', 'se_R'], 'rows': rows}
