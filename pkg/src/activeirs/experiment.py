"""Monte-Carlo sweeps over scenario parameters and their CSV/JSON output.

An :class:`ExperimentSpec` names one scenario parameter to sweep, the schemes
to run and how many channel realizations to average.  Trial ``t`` at every
sweep point uses channel seed ``seed + t`` so the schemes and the sweep points
share realizations.  Output of one run (``out`` directory):

* ``results.csv``   one row per (sweep value, scheme), column order ``CSV_COLUMNS``
* ``trials.csv``    one row per trial, column order ``TRIAL_COLUMNS``
* ``timings.csv``   mean wall time per (sweep value, scheme)
* ``manifest.json`` the full spec, seeds, tolerances and library version

Wall times are the only nondeterministic quantity and live in ``timings.csv``
so that ``results.csv`` and ``trials.csv`` replay bit-for-bit.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .benchmarks import passive_config, solve_identical_amplitudes, solve_passive
from .channels import Geometry, Scenario
from .conic import SolverSettings
from .errors import SolverError
from .report import AOSettings
from .sumpower import solve_sum_power
from .sumrate import solve_sum_rate
from .system import Instance, feasibility_report

FORMAT_VERSION = 1
FEAS_TOL = 1e-6
ABORT_FRACTION = 0.5
SCHEMES = ("proposed", "identical", "passive", "no-irs-iu-link")
PROBLEMS = ("P1", "P2")

CSV_COLUMNS = (
    "format_version", "sweep", "value", "scheme", "problem",
    "P_A_dbm", "P_I_dbm", "sigma_z2_dbm", "gamma_db", "E_uW",
    "unit", "mean", "std", "n", "failed", "mean_iterations", "max_residual",
)
TRIAL_COLUMNS = (
    "format_version", "sweep", "value", "scheme", "trial", "seed",
    "status", "objective", "iterations", "max_residual", "trace_drop", "error",
)
TIMING_COLUMNS = ("sweep", "value", "scheme", "n", "mean_runtime_s")


class ExperimentAborted(RuntimeError):
    """More than half of the trials of one scheme failed at one sweep point."""

    def __init__(self, msg, value=None, scheme=None, failed=0, trials=0):
        super().__init__(msg)
        self.value, self.scheme, self.failed, self.trials = value, scheme, failed, trials


# ---------------------------------------------------------------------------
# spec


def _settings_from_dict(doc) -> AOSettings:
    doc = dict(doc or {})
    conic = SolverSettings(**doc.pop("conic", {}))
    unknown = set(doc) - {f.name for f in fields(AOSettings)}
    if unknown:
        raise KeyError(f"unknown settings keys: {sorted(unknown)}")
    return AOSettings(conic=conic, **doc)


@dataclass
class ExperimentSpec:
    """One sweep.  ``tied`` parameters take the sweep value too (e.g. ``d_E`` tied to ``d_IRS``)."""

    name: str
    problem: str
    scenario: Scenario
    sweep: str
    values: Tuple[float, ...]
    trials: int = 20
    seed: int = 0
    schemes: Tuple[str, ...] = ("proposed", "passive")
    settings: AOSettings = field(default_factory=AOSettings)
    tied: Tuple[str, ...] = ()
    workers: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        self.problem = self.problem.upper()
        self.values = tuple(float(v) for v in self.values)
        self.schemes = tuple(self.schemes)
        self.tied = tuple(self.tied)
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        self.trials = int(self.trials)
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("sweep values must be finite")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ValueError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name in (self.sweep,) + self.tied:
            self.scenario.with_value(name, self.values[0] if self.values else 1.0)

    def point(self, value) -> Scenario:
        sc = self.scenario.with_value(self.sweep, value)
        for name in self.tied:
            sc = sc.with_value(name, value)
        return sc

    def seeds(self):
        return [self.seed + t for t in range(self.trials)]

    def to_dict(self):
        return {
            "name": self.name, "problem": self.problem, "scenario": self.scenario.to_dict(),
            "sweep": {"name": self.sweep, "values": list(self.values), "tied": list(self.tied)},
            "trials": self.trials, "seed": self.seed, "schemes": list(self.schemes),
            "settings": asdict(self.settings), "workers": self.workers, "out": self.out,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "spec" in doc:          # a run manifest
            doc = dict(doc["spec"])
        sweep = doc.pop("sweep")
        unknown = set(doc) - {"name", "problem", "scenario", "trials", "seed", "schemes", "settings", "workers", "out"}
        if unknown:
            raise KeyError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(
            name=doc.get("name", "experiment"), problem=doc.get("problem", "P1"),
            scenario=Scenario.from_dict(doc.get("scenario", {})),
            sweep=sweep["name"], values=sweep["values"], tied=sweep.get("tied", ()),
            trials=doc.get("trials", 20), seed=doc.get("seed", 0),
            schemes=doc.get("schemes", ("proposed", "passive")),
            settings=_settings_from_dict(doc.get("settings")),
            workers=doc.get("workers", 1), out=doc.get("out"),
        )


def load_spec(path) -> ExperimentSpec:
    """Read an experiment spec, or the spec stored in a run manifest."""
    with open(path) as fh:
        return ExperimentSpec.from_dict(json.load(fh))


# desk-scale presets of the simulation figures; N=16 and 20 trials
_DESK = dict(M=4, N=16)


def _preset_specs():
    wpt = Scenario(K_I=0, K_E=4, P_A_dbm=23, P_I_dbm=5, geometry=Geometry(d_E=12.0), **_DESK)
    # IUs at 50 m: with the desk-scale arrays the 20 dB SINR points are mostly unattainable at 100 m
    near = Geometry(d_I=50.0)
    p1 = Scenario(K_I=2, K_E=4, P_A_dbm=23, P_I_dbm=5, gamma_db=5, geometry=near, **_DESK)
    p2 = Scenario(K_I=2, K_E=2, P_A_dbm=30, P_I_dbm=10, E_uW=3.0, geometry=near, **_DESK)
    return {
        "fig3": ExperimentSpec("fig3", "P1", wpt, "d_IRS", (2, 4, 6, 8, 10, 12)),
        "fig4": ExperimentSpec("fig4", "P1", wpt, "d_E", (4, 8, 12, 16, 20), tied=("d_IRS",)),
        "fig5": ExperimentSpec("fig5", "P1", p1, "N", (8, 16, 24, 32),
                               schemes=("proposed", "identical", "passive")),
        "fig6": ExperimentSpec("fig6", "P1", replace(p1, P_A_dbm=30, P_I_dbm=10), "gamma_db", (0, 5, 10, 15, 20),
                               schemes=("proposed", "identical", "passive", "no-irs-iu-link")),
        "fig7": ExperimentSpec("fig7", "P2", p2, "E_uW", (0.5, 1, 2, 3)),
        "fig8": ExperimentSpec("fig8", "P2", p2, "alpha_Au", (2.6, 2.8, 3.0, 3.2, 3.4, 3.6)),
        "fig9": ExperimentSpec("fig9", "P2", p2, "sigma_z2_dbm", (-90, -80, -70, -60, -50)),
    }


PRESETS = tuple(_preset_specs())


def preset(name) -> ExperimentSpec:
    specs = _preset_specs()
    if name not in specs:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(specs)}")
    return specs[name]


def full_scale(spec: ExperimentSpec) -> ExperimentSpec:
    """N = 50 (unless N is swept) and 100 trials."""
    sc = spec.scenario if spec.sweep == "N" else replace(spec.scenario, N=50)
    return replace(spec, scenario=sc, trials=100)


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialRecord:
    value: float
    scheme: str
    trial: int
    seed: int
    status: str            # "ok" | "failed"
    objective: float = math.nan
    iterations: int = 0
    max_residual: float = math.nan
    runtime: float = 0.0
    trace_drop: float = 0.0   # largest relative decrease in any AO/SCA trace of the solve
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def run_scheme(scheme, problem, instance: Instance, settings: AOSettings):
    """Solve one instance with one scheme; returns ``(solution, config it is judged against)``."""
    cfg = instance.config
    if scheme == "no-irs-iu-link":
        instance = Instance(cfg, instance.channels.without_irs_iu_link())
        scheme = "proposed"
    if scheme == "proposed":
        sol = (solve_sum_power if problem == "P1" else solve_sum_rate)(instance, settings)
        return sol, cfg, instance.channels
    if scheme == "identical":
        return solve_identical_amplitudes(instance, problem, settings), cfg, instance.channels
    if scheme == "passive":
        return solve_passive(instance, problem, settings), passive_config(cfg), instance.channels
    raise ValueError(f"unknown scheme {scheme!r}")


def solution_traces(sol):
    """Every objective trace a solver result carries (outer and inner loops)."""
    out = []
    for name in ("trace", "sdr_trace"):
        t = getattr(sol, name, None)
        if t:
            out.append([float(x) for x in t])
    out += [[float(x) for x in t] for t in (getattr(sol, "inner_traces", None) or []) if t]
    return out


def worst_drop(traces):
    """Largest relative decrease between consecutive entries of any trace (0 if none)."""
    worst = 0.0
    for t in traces:
        for prev, cur in zip(t, t[1:]):
            if math.isfinite(prev) and math.isfinite(cur):
                worst = max(worst, (prev - cur) / max(abs(prev), 1e-300))
    return worst


def _run_trial(job):
    spec_doc, value, scheme, trial, seed = job
    spec = ExperimentSpec.from_dict(spec_doc)
    rec = TrialRecord(value, scheme, trial, seed, "failed")
    t0 = time.perf_counter()
    try:
        sc = spec.point(value)
        inst = Instance(sc.system_config(), sc.channels(seed))
        settings = replace(spec.settings, seed=seed)
        sol, cfg, ch = run_scheme(scheme, spec.problem, inst, settings)
        feas = feasibility_report(spec.problem, sol.precoder, sol.refl, ch, cfg, unit_modulus=scheme == "passive")
        rec.objective = float(sol.objective)
        rec.iterations = int(sol.iterations)
        rec.max_residual = float(max(feas.max_residual, 0.0))
        rec.trace_drop = worst_drop(solution_traces(sol))
        if feas.feasible(FEAS_TOL) and math.isfinite(rec.objective):
            rec.status = "ok"
        else:
            rec.error = f"infeasible: max residual {feas.max_residual:.3g}"
    except (SolverError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}".splitlines()[0][:200]
    except Exception as exc:  # noqa: BLE001  -- recorded per trial, never fatal
        rec.error = f"{type(exc).__name__}: {exc}".splitlines()[0][:200]
        rec.error += " | " + traceback.format_exc(limit=1).strip().splitlines()[-1][:100]
    rec.runtime = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class ResultRow:
    sweep: str
    value: float
    scheme: str
    problem: str
    P_A_dbm: float
    P_I_dbm: float
    sigma_z2_dbm: Optional[float]
    gamma_db: float
    E_uW: float
    unit: str
    mean: float
    std: float
    n: int
    failed: int
    mean_iterations: float
    max_residual: float

    def key(self):
        return (self.value, SCHEMES.index(self.scheme) if self.scheme in SCHEMES else len(SCHEMES), self.scheme)


@dataclass
class ResultTable:
    spec: Optional[ExperimentSpec]
    rows: List[ResultRow] = field(default_factory=list)
    trials: List[TrialRecord] = field(default_factory=list)

    def sorted(self):
        self.rows.sort(key=ResultRow.key)
        self.trials.sort(key=lambda r: (r.value, SCHEMES.index(r.scheme), r.trial))
        return self

    def row(self, value, scheme) -> ResultRow:
        for r in self.rows:
            if r.value == value and r.scheme == scheme:
                return r
        raise KeyError((value, scheme))

    def series(self, scheme):
        rows = sorted((r for r in self.rows if r.scheme == scheme), key=ResultRow.key)
        return np.array([r.value for r in rows]), np.array([r.mean for r in rows])

    def objectives(self, value, scheme):
        """Per-trial objectives (NaN for failed trials), ordered by trial index."""
        recs = sorted((t for t in self.trials if t.value == value and t.scheme == scheme), key=lambda t: t.trial)
        return np.array([t.objective if t.ok else math.nan for t in recs])

    def timings(self):
        out = {}
        for t in self.trials:
            out.setdefault((t.value, t.scheme), []).append(t.runtime)
        return {k: float(np.mean(v)) for k, v in sorted(out.items(), key=lambda kv: (kv[0][0], SCHEMES.index(kv[0][1])))}


def aggregate(spec: ExperimentSpec, records: Sequence[TrialRecord]) -> List[ResultRow]:
    groups: Dict[Tuple[float, str], List[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.value, r.scheme), []).append(r)
    rows = []
    for (value, scheme), recs in groups.items():
        recs = sorted(recs, key=lambda r: r.trial)
        good = [r for r in recs if r.ok]
        obj = np.array([r.objective for r in good])
        sc = spec.point(value)
        rows.append(ResultRow(
            sweep=spec.sweep, value=value, scheme=scheme, problem=spec.problem,
            P_A_dbm=float(sc.P_A_dbm), P_I_dbm=float(sc.P_I_dbm), sigma_z2_dbm=sc.sigma_z2_dbm,
            gamma_db=float(sc.gamma_db), E_uW=float(sc.E_uW),
            unit="W" if spec.problem == "P1" else "bps/Hz",
            mean=float(obj.mean()) if good else math.nan,
            std=float(obj.std(ddof=1)) if len(good) > 1 else 0.0 if good else math.nan,
            n=len(good), failed=len(recs) - len(good),
            mean_iterations=float(np.mean([r.iterations for r in good])) if good else math.nan,
            max_residual=float(max(r.max_residual for r in good)) if good else math.nan,
        ))
    rows.sort(key=ResultRow.key)
    return rows


def _check_abort(spec, value, records):
    for scheme in spec.schemes:
        failed = sum(1 for r in records if r.scheme == scheme and not r.ok)
        if failed > ABORT_FRACTION * spec.trials:
            sample = next(r.error for r in records if r.scheme == scheme and not r.ok)
            raise ExperimentAborted(
                f"{failed}/{spec.trials} trials of {scheme!r} failed at {spec.sweep}={value:g} (e.g. {sample})",
                value=value, scheme=scheme, failed=failed, trials=spec.trials)


def run_experiment(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Run every (sweep value, scheme, trial); deterministic for a fixed spec.

    Trials run in a process pool of ``spec.workers`` workers.  ``progress``, if
    given, is called with each finished :class:`TrialRecord`.
    """
    doc = spec.to_dict()
    table = ResultTable(spec)
    pool = ProcessPoolExecutor(max_workers=spec.workers) if spec.workers > 1 else None
    try:
        for value in spec.values:
            jobs = [(doc, value, s, t, seed) for s in spec.schemes for t, seed in enumerate(spec.seeds())]
            recs = []
            for rec in (pool.map(_run_trial, jobs) if pool else map(_run_trial, jobs)):
                recs.append(rec)
                if progress:
                    progress(rec)
            table.trials.extend(recs)
            _check_abort(spec, value, recs)
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)
    table.rows = aggregate(spec, table.trials)
    return table.sorted()


# ---------------------------------------------------------------------------
# files


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _parse_float(s):
    return None if s == "" else float(s)


def results_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(table.rows, key=ResultRow.key):
        d = asdict(r)
        w.writerow([FORMAT_VERSION] + [_fmt(d[c]) for c in CSV_COLUMNS[1:]])
    return buf.getvalue()


def trials_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    sweep = table.spec.sweep if table.spec else ""
    for t in sorted(table.trials, key=lambda r: (r.value, SCHEMES.index(r.scheme), r.trial)):
        w.writerow([FORMAT_VERSION, sweep, _fmt(t.value), t.scheme, t.trial, t.seed, t.status,
                    _fmt(t.objective), t.iterations, _fmt(t.max_residual), _fmt(t.trace_drop), t.error])
    return buf.getvalue()


def timings_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    counts = {(r.value, r.scheme): r.n + r.failed for r in table.rows}
    sweep = table.spec.sweep if table.spec else ""
    for (value, scheme), t in table.timings().items():
        w.writerow([sweep, _fmt(value), scheme, counts.get((value, scheme), 0), _fmt(t)])
    return buf.getvalue()


def read_results_csv(path_or_text) -> List[ResultRow]:
    """Parse ``results.csv`` back into rows; rejects other format versions."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        d = dict(zip(CSV_COLUMNS, rec))
        if int(d.pop("format_version")) != FORMAT_VERSION:
            raise ValueError("unsupported results format version")
        for k in ("value", "P_A_dbm", "P_I_dbm", "gamma_db", "E_uW", "mean", "std", "mean_iterations", "max_residual"):
            d[k] = float(d[k])
        d["sigma_z2_dbm"] = _parse_float(d["sigma_z2_dbm"])
        d["n"], d["failed"] = int(d["n"]), int(d["failed"])
        rows.append(ResultRow(**d))
    return rows


def _library_version():
    from . import __version__
    return __version__


def manifest(table: ResultTable) -> dict:
    spec = table.spec
    return {
        "format_version": FORMAT_VERSION,
        "library_version": _library_version(),
        "numpy_version": np.__version__,
        "spec": spec.to_dict() if spec else None,
        "seeds": spec.seeds() if spec else [],
        "tolerances": {
            "feasibility": FEAS_TOL,
            "abort_fraction": ABORT_FRACTION,
            "conic": asdict(spec.settings.conic) if spec else None,
            "ao_outer_tol": spec.settings.outer_tol if spec else None,
            "ao_inner_tol": spec.settings.inner_tol if spec else None,
        },
        "files": {"results": "results.csv", "trials": "trials.csv", "timings": "timings.csv"},
    }


def emit_results(table: ResultTable, out=None, fmt="csv") -> Dict[str, str]:
    """Write the CSV files and the JSON manifest into ``out``; returns their paths."""
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r}")
    out = out or (table.spec.out if table.spec else None)
    if not out:
        raise ValueError("no output directory given")
    os.makedirs(out, exist_ok=True)
    paths = {}
    for key, text in (("results", results_csv(table)), ("trials", trials_csv(table)),
                      ("timings", timings_csv(table))):
        paths[key] = os.path.join(out, f"{key}.csv")
        with open(paths[key], "w", newline="") as fh:
            fh.write(text)
    paths["manifest"] = os.path.join(out, "manifest.json")
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest(table), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def replay(manifest_path, out) -> ResultTable:
    """Re-run the experiment recorded in a manifest and write it to ``out``."""
    spec = load_spec(manifest_path)
    table = run_experiment(spec)
    emit_results(table, out)
    return table


__all__ = [
    "ExperimentSpec", "ExperimentAborted", "ResultRow", "ResultTable", "TrialRecord",
    "CSV_COLUMNS", "TRIAL_COLUMNS", "FORMAT_VERSION", "PRESETS",
    "aggregate", "emit_results", "full_scale", "load_spec", "manifest", "preset",
    "read_results_csv", "replay", "results_csv", "run_experiment", "run_scheme", "solution_traces",
    "worst_drop",
]
