"""Comparison schemes: identical amplitudes and a passive surface.

Identical amplitudes: every element uses the same gain ``beta``; each AO
round runs (a) the transmit step, (b) a phase step at fixed ``beta`` and (c)
a 1-D search over ``beta`` against the true objective.

Passive: unit-modulus elements, no IRS noise, no amplification budget, and
the AP gets ``P_A + P_I`` so both systems spend the same total power.  The
reflect block is the lifted SDR with unit diagonal followed by Gaussian
randomization with entrywise unit-modulus projection.

A step that would lower the objective is discarded, so every trace is
non-decreasing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from . import conic
from .channels import make_rng
from .conic import (Constraint, ConicProgram, Exp, FixedEntry, HermitianBlock, Scalar, ScalarBlock, Trace,
                    require_optimal)
from .errors import Infeasible, NoFeasibleCandidate, SolverError
from .report import AOSettings, SolveReport, relative_gain
from .sdr import common_modulus, gaussian_randomize_u, unit_modulus
from .sumpower import _Ops as _P1Ops, amp_kernel, ao_step_U, ao_step_W, extract_beams, p1_evaluator, \
    restore_feasibility, w_step_program
from .sumrate import (LN2, STEP_MARGIN, FeasibleStart, _Ops as _P2Ops, _reflect_kernels, _slacks, harvested_sdr,
                      maxmin_transmit, sdr_feasible, sdr_rate, solve_sum_rate)
from .system import Instance, Precoder, ReflectionState, feasibility_report, weighted_sum_power
from .wpt import energy_subproblem, reflect_kernels

BETA_POINTS = 64
BETA_FLOOR = 1e-3     # lower end of the log grid, relative to beta_max
GOLDEN_ITERS = 30


def passive_config(cfg):
    """Unit-modulus surface: no IRS noise or amplification budget, AP budget ``P_A + P_I``."""
    extra = cfg.P_I if math.isfinite(cfg.P_I) else 0.0
    return replace(cfg, sigma_z2=0.0, P_I=math.inf, P_A=cfg.P_A + extra)


@dataclass
class SchemeSolution:
    scheme: str
    kind: str
    precoder: Precoder
    refl: ReflectionState
    objective: float
    trace: List[float]
    iterations: int
    status: str
    beta: Optional[float] = None
    report: Optional[SolveReport] = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# common pieces


def beta_search(f: Callable[[float], Optional[float]], beta_max, beta0=None, points=BETA_POINTS):
    """Maximize ``f`` over ``[0, beta_max]``; ``f`` returns None where infeasible.

    A log grid of ``points`` values is refined once by golden-section search
    around its best point.  ``beta0`` (the incumbent) is scored too and wins
    ties.  Returns ``(beta, value)`` or ``(None, -inf)`` if nothing is feasible.
    """
    def score(b):
        v = f(b)
        return -math.inf if v is None else v

    if not beta_max > 0:
        return (beta0, score(beta0)) if beta0 is not None else (None, -math.inf)
    grid = np.geomspace(BETA_FLOOR * beta_max, beta_max, points)
    vals = np.array([score(b) for b in grid])
    best_b, best_v = (beta0, score(beta0)) if beta0 is not None else (None, -math.inf)
    k = int(np.argmax(vals))
    if vals[k] > best_v:
        best_b, best_v = float(grid[k]), float(vals[k])
    if np.isfinite(vals[k]):
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, points - 1)]
        r = (math.sqrt(5) - 1) / 2
        a, b = lo + (1 - r) * (hi - lo), lo + r * (hi - lo)
        fa, fb = score(a), score(b)
        for _ in range(GOLDEN_ITERS):
            if fa >= fb:
                hi, b, fb = b, a, fa
                a = lo + (1 - r) * (hi - lo)
                fa = score(a)
            else:
                lo, a, fa = a, b, fb
                b = lo + r * (hi - lo)
                fb = score(b)
        for cand, v in ((a, fa), (b, fb)):
            if v > best_v:
                best_b, best_v = float(cand), float(v)
    return best_b, best_v


def beta_max(channels, beams, cfg):
    """Largest common gain meeting the amplification budget for ``beams`` (rows)."""
    if not math.isfinite(cfg.P_I):
        return math.inf
    beams = np.atleast_2d(beams)
    incident = float(np.sum(np.abs(channels.F @ beams.T) ** 2)) if beams.size else 0.0
    per_unit = incident + cfg.sigma_z2 * channels.N
    return math.sqrt(cfg.P_I / per_unit) if per_unit > 0 else math.inf


def with_beta(u_bar, beta):
    """Same phases, common modulus ``beta``."""
    return np.append(beta * unit_modulus(u_bar[:-1]), 1.0)


def unit_start(channels, seed):
    rng = make_rng(seed, 1000)
    return ReflectionState.from_polar(np.ones(channels.N), 2 * np.pi * rng.random(channels.N))


def lifted_phase_sdr(B, N, diag, extra=(), settings=None):
    """``max tr(B U)`` over PSD ``U`` with ``U_nn = diag`` (n <= N) and ``U_{N+1,N+1} = 1``."""
    fixed = [FixedEntry("U", (n, n), float(diag), f"diag_{n}") for n in range(N)]
    fixed.append(FixedEntry("U", (N, N), 1.0, "fixed"))
    prog = ConicProgram([HermitianBlock("U", N + 1)], [Trace("U", B)], list(extra), fixed, name="phase-sdr")
    return require_optimal(conic.solve(prog, settings), "phase SDR")["U"]


# ---------------------------------------------------------------------------
# WPT (no information users)


def _wpt_value(ch, cfg, v0, u_bar):
    prec = Precoder(np.zeros((0, ch.M), dtype=complex), v0[None, :])
    return weighted_sum_power(prec, ReflectionState.from_u_bar(u_bar), ch, cfg)


def _wpt_identical(instance, settings):
    cfg, ch = instance.config, instance.channels
    from .wpt import initial_reflection
    refl = initial_reflection(ch, cfg, settings.seed, settings.init_fraction)
    u_bar = refl.u_bar
    beta = float(refl.beta[0]) if ch.N else 0.0
    trace, status, v0 = [], "max_iterations", None
    value = -math.inf
    for it in range(settings.outer_max):
        step = energy_subproblem(ch, ReflectionState.from_u_bar(u_bar), cfg, settings.conic)
        v_new = step.v0
        val = _wpt_value(ch, cfg, v_new, u_bar)
        if v0 is None or val >= value:
            v0, value = v_new, val
        A, _ = reflect_kernels(ch, v0, cfg)
        # (b) phases at fixed beta by repeated closed-form minorizer maximization
        for _ in range(settings.inner_max):
            cand = np.append(beta * np.exp(1j * _arg((A @ u_bar)[:-1], u_bar[:-1])), 1.0)
            val = float(np.real(np.vdot(cand, A @ cand)))
            if val < value:
                break
            gain = relative_gain(val, value)
            u_bar, value = cand, val
            if gain < settings.inner_tol:
                break
        # (c) common gain
        bmax = beta_max(ch, v0, cfg)
        b, val = beta_search(lambda x: float(np.real(np.vdot(with_beta(u_bar, x), A @ with_beta(u_bar, x)))),
                             bmax, beta)
        if b is not None and val >= value:
            beta, u_bar, value = b, with_beta(u_bar, b), val
        trace.append(value)
        if it > 0 and relative_gain(trace[-1], trace[-2]) < settings.outer_tol:
            status = "converged"
            break
    return _finish("identical", "wpt", instance, Precoder(np.zeros((0, ch.M)), v0[None, :]), u_bar, trace,
                   status, beta)


def _arg(a, fallback):
    """Phases of ``a``; entries that vanish keep the phase of ``fallback``."""
    return np.where(np.abs(a) > 0, np.angle(a), np.angle(fallback))


def _wpt_passive(instance, settings):
    cfg = passive_config(instance.config)
    ch = instance.channels
    u_bar = unit_start(ch, settings.seed).u_bar
    rng = make_rng(settings.seed, 2001)
    trace, status, v0, value = [], "max_iterations", None, -math.inf
    for it in range(settings.outer_max):
        step = energy_subproblem(ch, ReflectionState.from_u_bar(u_bar), cfg, settings.conic)
        val = _wpt_value(ch, cfg, step.v0, u_bar)
        if v0 is None or val >= value:
            v0, value = step.v0, val
        A, _ = reflect_kernels(ch, v0, cfg)
        U = lifted_phase_sdr(A, ch.N, 1.0, settings=settings.conic)
        gr = gaussian_randomize_u(U, lambda ub: (True, float(np.real(np.vdot(ub, A @ ub)))), settings.draws,
                                  rng=rng, project=unit_modulus)
        if gr.objective >= value:
            u_bar, value = gr.u_bar, gr.objective
        trace.append(value)
        if it > 0 and relative_gain(trace[-1], trace[-2]) < settings.outer_tol:
            status = "converged"
            break
    return _finish("passive", "wpt", Instance(cfg, ch), Precoder(np.zeros((0, ch.M)), v0[None, :]), u_bar,
                   trace, status, 1.0)


# ---------------------------------------------------------------------------
# P1


def _p1_transmit(ops, cfg, u_bar, settings):
    U = np.outer(u_bar, u_bar.conj())
    Ws, _ = ao_step_W(ops.ch, U, cfg, settings.conic, ops)
    _, rows, obj = w_step_program(ops, U, cfg)
    w, _, _ = extract_beams(Ws, rows, obj)
    return w


def _p1_value(ch, cfg, w, u_bar, tol=1e-7):
    prec, refl = Precoder(w), ReflectionState.from_u_bar(u_bar)
    if not feasibility_report("P1", prec, refl, ch, cfg).feasible(tol):
        return None
    return weighted_sum_power(prec, refl, ch, cfg)


def _p1_ao(instance, settings, u_bar, phase_step, beta_step=None, beta=None, scheme="", project=None):
    cfg, ch = instance.config, instance.channels
    ops = _P1Ops(ch, cfg)
    try:
        ao_step_W(ch, np.outer(u_bar, u_bar.conj()), cfg, settings.conic, ops)
    except Infeasible:
        u_bar = restore_feasibility(ch, cfg, u_bar, settings, project=project,
                                    diag=None if beta is None else beta ** 2, ops=ops)
        if beta is not None:
            beta = float(np.abs(u_bar[0]))
    trace, status, w, value = [], "max_iterations", None, -math.inf
    for it in range(settings.outer_max):
        w_new = _p1_transmit(ops, cfg, u_bar, settings)
        val = _p1_value(ch, cfg, w_new, u_bar)
        if val is not None and (w is None or val >= value):
            w, value = w_new, val
        if w is None:
            raise Infeasible("no feasible transmit beams at the starting reflection state")
        try:
            cand = phase_step(ops, w, u_bar, beta)
        except NoFeasibleCandidate:
            cand = None
        if cand is not None:
            val = _p1_value(ch, cfg, w, cand)
            if val is not None and val >= value:
                u_bar, value = cand, val
        if beta_step is not None:
            b, val = beta_step(w, u_bar, beta)
            if b is not None and val >= value:
                beta, u_bar, value = b, with_beta(u_bar, b), val
        trace.append(value)
        if it > 0 and relative_gain(trace[-1], trace[-2]) < settings.outer_tol:
            status = "converged"
            break
    return _finish(scheme, "P1", instance, Precoder(w), u_bar, trace, status, beta)


def _p1_passive(instance, settings):
    cfg = passive_config(instance.config)
    ch = instance.channels
    rng = make_rng(settings.seed, 2001)

    def phase_step(ops, w, u_bar, beta):
        Ws = [np.outer(b, b.conj()) for b in w]
        U, _ = ao_step_U(ch, Ws, cfg, settings.conic, ops, diag=1.0)
        return gaussian_randomize_u(U, p1_evaluator(ch, cfg, w), settings.draws, rng=rng,
                                    project=unit_modulus).u_bar

    return _p1_ao(Instance(cfg, ch), settings, unit_start(ch, settings.seed).u_bar, phase_step, beta=1.0,
                  scheme="passive", project=unit_modulus)


def _p1_identical(instance, settings):
    from .wpt import initial_reflection
    cfg, ch = instance.config, instance.channels
    refl = initial_reflection(ch, cfg, settings.seed, settings.init_fraction)
    rng = make_rng(settings.seed, 2001)

    def phase_step(ops, w, u_bar, beta):
        Ws = [np.outer(b, b.conj()) for b in w]
        U, _ = ao_step_U(ch, Ws, cfg, settings.conic, ops, diag=beta ** 2)
        U = U / U[-1, -1].real
        return gaussian_randomize_u(U, p1_evaluator(ch, cfg, w), settings.draws, rng=rng,
                                    amp_kernel=amp_kernel(ops, w, cfg), amp_budget=cfg.P_I,
                                    project=common_modulus(beta)).u_bar

    def beta_step(w, u_bar, beta):
        return beta_search(lambda b: _p1_value(ch, cfg, w, with_beta(u_bar, b)), beta_max(ch, w, cfg), beta)

    beta0 = float(refl.beta[0])
    return _p1_ao(instance, settings, refl.u_bar, phase_step, beta_step, beta0, "identical",
                  project=common_modulus(beta0))


# ---------------------------------------------------------------------------
# P2


def _p2_phase_step(ops, cfg, Ws, u_bar, tau, diag, rng, settings):
    """Lifted reflect SDR with fixed diagonal, then randomization onto modulus ``sqrt(diag)``."""
    signal, interference, energy, amp = _reflect_kernels(ops, Ws, cfg)
    N, K = ops.ch.N, cfg.K_I
    cons = []
    for i in range(K):
        cons.append(Constraint([Exp(f"rho{i}"), Trace("U", -signal[i])], "<=", cfg.sigma_i2[i], f"signal_{i}"))
        et = math.exp(tau[i])
        cons.append(Constraint([Trace("U", interference[i]), Scalar(f"tau{i}", -et)], "<=",
                               et * (1 - tau[i]) - cfg.sigma_i2[i], f"interference_{i}"))
    for j in range(cfg.K_E):
        if cfg.E[j] > 0:
            cons.append(Constraint([Trace("U", energy[j])], ">=", cfg.E[j] * (1 + STEP_MARGIN), f"eh_{j}"))
    fixed = [FixedEntry("U", (n, n), float(diag), f"diag_{n}") for n in range(N)]
    fixed.append(FixedEntry("U", (N, N), 1.0, "fixed"))
    blocks = [HermitianBlock("U", N + 1)] + [ScalarBlock(f"rho{i}") for i in range(K)] + \
             [ScalarBlock(f"tau{i}") for i in range(K)]
    obj = [Scalar(f"rho{i}", cfg.mu[i] / LN2) for i in range(K)] + \
          [Scalar(f"tau{i}", -cfg.mu[i] / LN2) for i in range(K)]
    sol = conic.solve(ConicProgram(blocks, obj, cons, fixed, name="p2-phase-sdr"), settings.conic, retry=False)
    if sol.status not in (conic.OPTIMAL, conic.NUMERICAL_FAILURE):
        return u_bar
    U = sol["U"]
    U = U / U[-1, -1].real

    def evaluate(ub):
        return sdr_feasible(ops, Ws, ub), sdr_rate(ops, Ws, ub)

    kernel = amp if math.isfinite(cfg.P_I) else None
    try:
        return gaussian_randomize_u(U, evaluate, settings.draws, rng=rng, amp_kernel=kernel, amp_budget=cfg.P_I,
                                    project=common_modulus(math.sqrt(diag))).u_bar
    except NoFeasibleCandidate:
        return u_bar


def _p2_start(instance, settings, p1_solver, u_fixed):
    """Seed from the matching P1 scheme; fall back to max-min EH beams at that scheme's reflection state."""
    cfg, ch = instance.config, instance.channels
    ops = _P2Ops(ch, cfg)
    p1 = replace(cfg, gamma=(0.1,) * cfg.K_I, alpha=(1.0,) * cfg.K_E)
    try:
        sol = p1_solver(Instance(p1, ch), settings)
        Ws = [np.outer(w, w.conj()) for w in sol.precoder.w]
        u_bar = sol.refl.u_bar
    except (Infeasible, SolverError):
        Ws, u_bar = None, u_fixed
    ratio = -math.inf
    if Ws is not None:
        q = harvested_sdr(ops, Ws, u_bar)
        ratio = min([qj / ej for qj, ej in zip(q, cfg.E) if ej > 0] or [math.inf])
    if ratio < 1.0:
        t, W = maxmin_transmit(ops, u_bar, cfg, settings.conic)
        if t >= ratio:
            ratio, Ws = t, [W / cfg.K_I] * cfg.K_I
    if ratio < 1.0 - 1e-6:
        raise Infeasible(f"EH targets unattainable for this scheme: best min_j Q_j/E_j = {ratio:.4g}", ratio=ratio)
    rho, tau = _slacks(ops, Ws, u_bar)
    return FeasibleStart(Ws, u_bar, rho, tau, ratio)


def _p2_passive(instance, settings):
    cfg = passive_config(instance.config)
    ch = instance.channels
    inst = Instance(cfg, ch)
    ops = _P2Ops(ch, cfg)
    rng = make_rng(settings.seed, 2002)
    start = _p2_start(inst, settings, _p1_passive, unit_start(ch, settings.seed).u_bar)

    def reflect(Ws, u_bar, tau):
        return _p2_phase_step(ops, cfg, Ws, u_bar, tau, 1.0, rng, settings)

    sol = solve_sum_rate(inst, settings, start, reflect=reflect)
    return _from_sum_rate("passive", inst, sol, 1.0)


def _p2_identical(instance, settings):
    cfg, ch = instance.config, instance.channels
    ops = _P2Ops(ch, cfg)
    rng = make_rng(settings.seed, 2002)
    from .wpt import initial_reflection
    start = _p2_start(instance, settings, _p1_identical,
                      initial_reflection(ch, cfg, settings.seed, settings.init_fraction).u_bar)
    state = {"beta": float(np.abs(start.u_bar[0]))}

    def reflect(Ws, u_bar, tau):
        beta = state["beta"]
        u_bar = _p2_phase_step(ops, cfg, Ws, u_bar, tau, beta ** 2, rng, settings)
        per_unit = sum(float(np.real(np.trace(ops.Q(W)))) for W in Ws) + cfg.sigma_z2 * ch.N
        bmax = math.sqrt(cfg.P_I / per_unit) if per_unit > 0 else math.inf

        def f(b):
            ub = with_beta(u_bar, b)
            return sdr_rate(ops, Ws, ub) if sdr_feasible(ops, Ws, ub) else None

        b, _ = beta_search(f, bmax, beta)
        if b is not None:
            state["beta"] = b
            u_bar = with_beta(u_bar, b)
        return u_bar

    sol = solve_sum_rate(instance, settings, start, reflect=reflect)
    return _from_sum_rate("identical", instance, sol, float(np.abs(sol.refl.u[0])) if ch.N else 0.0)


def _from_sum_rate(scheme, instance, sol, beta):
    return SchemeSolution(scheme=scheme, kind="P2", precoder=sol.precoder, refl=sol.refl, objective=sol.objective,
                          trace=sol.trace, iterations=sol.iterations, status=sol.status, beta=beta,
                          report=sol.report, extra={"recovery": sol.recovery})


# ---------------------------------------------------------------------------
# entry points


def _finish(scheme, kind, instance, prec, u_bar, trace, status, beta):
    cfg, ch = instance.config, instance.channels
    refl = ReflectionState.from_u_bar(u_bar)
    feas = feasibility_report("P1", prec, refl, ch, cfg, unit_modulus=scheme == "passive")
    rep = SolveReport(f"{kind}-{scheme}", status, trace[-1], trace, len(trace), [], feas.residuals)
    return SchemeSolution(scheme=scheme, kind=kind, precoder=prec, refl=refl, objective=trace[-1], trace=trace,
                          iterations=len(trace), status=status, beta=beta, report=rep)


def solve_identical_amplitudes(instance: Instance, problem="P1", settings: Optional[AOSettings] = None):
    """Common-gain benchmark for ``problem`` ("P1": weighted sum-power, "P2": weighted sum-rate)."""
    settings = settings or AOSettings()
    if problem not in ("P1", "P2"):
        raise ValueError(f"unknown problem {problem!r}")
    if problem == "P2":
        return _p2_identical(instance, settings)
    if instance.config.K_I == 0:
        return _wpt_identical(instance, settings)
    return _p1_identical(instance, settings)


def solve_passive(instance: Instance, problem="P1", settings: Optional[AOSettings] = None):
    """Passive-surface benchmark with the matched total power budget."""
    settings = settings or AOSettings()
    if problem not in ("P1", "P2"):
        raise ValueError(f"unknown problem {problem!r}")
    if problem == "P2":
        return _p2_passive(instance, settings)
    if instance.config.K_I == 0:
        return _wpt_passive(instance, settings)
    return _p1_passive(instance, settings)
