"""Weighted sum-power maximization with SINR targets.

Energy beams are dropped (they are never needed at the SDR level when every
SINR target is positive), and the relaxed problem over ``{W_i}`` and the
lifted reflection matrix ``U`` is solved by alternating between the two SDP
blocks.  The converged ``{W_i}`` are purified to rank one and ``U`` is turned
into a reflection vector by Gaussian randomization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import conic
from .conic import Constraint, ConicProgram, FixedEntry, HermitianBlock, Scalar, ScalarBlock, Trace, require_optimal
from .errors import BudgetExhausted, HypothesisViolated, Infeasible, NoFeasibleCandidate, RankTooHigh
from .report import AOSettings, SolveReport, relative_gain
from .sdr import gaussian_randomize_u, principal, rank_one_extract, rank_reduce
from .system import (Instance, Precoder, ReflectionState, amplification_power, feasibility_report,
                     lift_G, lift_H, lift_P, lift_T, lift_Z, sinrs, weighted_sum_power)
from .wpt import initial_reflection, solve_wpt

FEAS_TOL = 1e-6
U_STEP_VIOLATION = 1e-6   # solver defect accepted in the U step; the recovered point is checked exactly


def build_simplified_instance(instance: Instance) -> Instance:
    """Check the hypotheses under which energy beams can be dropped and return the instance.

    The simplified problem is the original with ``v_j = 0``; nothing else changes.
    """
    cfg = instance.config
    if cfg.K_I == 0:
        raise ValueError("no information users: use the WPT solver")
    bad = [i for i, g in enumerate(cfg.gamma) if g <= 0]
    if bad:
        raise HypothesisViolated(f"SINR targets must be positive, IUs {bad} are not")
    if not (cfg.P_A > 0 and cfg.P_I > 0):
        raise HypothesisViolated("power budgets must be positive")
    return instance


class _Ops:
    """Lifted channel operators reused across AO iterations."""

    def __init__(self, channels, cfg):
        self.ch, self.cfg = channels, cfg
        self.G, self.H = lift_G(channels), lift_H(channels)
        self.Z, self.T = lift_Z(channels), lift_T(channels)
        self.P = lift_P(channels.N)
        self.Zsum = np.einsum("j,jab->ab", cfg.alpha_arr, self.Z)

    def noise_objective(self, U):
        return float(self.cfg.sigma_z2 * np.real(np.trace(self.Zsum @ U)))

    def B(self, Ws):
        Wsum = sum(Ws)
        return np.einsum("j,jam,mn,jbn->ab", self.cfg.alpha_arr, self.G, Wsum, self.G.conj()) \
            + self.cfg.sigma_z2 * self.Zsum

    def Q(self, W):
        diag = np.real(np.einsum("nm,mk,nk->n", self.ch.F, W, self.ch.F.conj()))
        return np.diag(np.append(diag, 0.0)).astype(complex)

    def sdr_objective(self, Ws, U):
        return float(np.real(np.trace(self.B(Ws) @ U)))


def w_step_program(ops: _Ops, U, cfg):
    ch = ops.ch
    K, M = cfg.K_I, ch.M
    S_U = np.einsum("j,jam,ab,jbn->mn", cfg.alpha_arr, ops.G.conj(), U, ops.G)
    R = [ops.H[i].conj().T @ U @ ops.H[i] for i in range(K)]
    blocks = [HermitianBlock(f"W{i}", M) for i in range(K)]
    cons, rows = [], []
    for i in range(K):
        g = cfg.gamma[i]
        terms = [Trace(f"W{i}", R[i])] + [Trace(f"W{k}", -g * R[i]) for k in range(K) if k != i]
        rhs = g * (cfg.sigma_z2 * float(np.real(np.trace(ops.T[i] @ U))) + cfg.sigma_i2[i])
        cons.append(Constraint(terms, ">=", rhs, f"sinr_{i}"))
        rows.append([R[i] if k == i else -g * R[i] for k in range(K)])
    cons.append(Constraint([Trace(f"W{i}", np.eye(M)) for i in range(K)], "<=", cfg.P_A, "ap"))
    rows.append([np.eye(M)] * K)
    if math.isfinite(cfg.P_I):
        budget = cfg.P_I - cfg.sigma_z2 * float(np.real(np.trace(ops.P @ U)))
        if budget <= 0:
            raise BudgetExhausted("IRS noise alone exhausts the amplification budget")
        Fd = ch.F * np.sqrt(np.clip(np.real(np.diag(U))[:-1], 0, None))[:, None]
        C_U = Fd.conj().T @ Fd
        cons.append(Constraint([Trace(f"W{i}", C_U) for i in range(K)], "<=", budget, "amp"))
        rows.append([C_U] * K)
    prog = ConicProgram(blocks, [Trace(f"W{i}", S_U) for i in range(K)], cons,
                        objective_constant=ops.noise_objective(U), name="p1-w-step")
    return prog, rows, [S_U] * K


def ao_step_W(channels, U, cfg, settings=None, ops=None):
    """Optimal ``{W_i}`` for fixed ``U``; raises :class:`Infeasible` naming the binding IUs."""
    ops = ops or _Ops(channels, cfg)
    prog, _, _ = w_step_program(ops, U, cfg)
    sol = conic.solve(prog, settings)
    if sol.status == conic.INFEASIBLE:
        binding = [int(n.split("_")[1]) for n in sol.diagnosis if n.startswith("sinr_")]
        raise Infeasible(f"SINR targets unattainable at this reflection state ({', '.join(sol.diagnosis)})",
                         binding=binding)
    require_optimal(sol, "W step")
    return [sol[f"W{i}"] for i in range(cfg.K_I)], sol


def u_step_program(ops: _Ops, Ws, cfg, diag=None):
    """Program for ``U`` with ``{W_i}`` fixed; ``diag`` pins ``U_nn`` (n <= N) to a common value."""
    N1 = ops.ch.N + 1
    K = cfg.K_I
    cons = []
    for i in range(K):
        g = cfg.gamma[i]
        Hi = ops.H[i]
        D = Hi @ Ws[i] @ Hi.conj().T
        for k in range(K):
            if k != i:
                D = D - g * (Hi @ Ws[k] @ Hi.conj().T)
        D = D - g * cfg.sigma_z2 * ops.T[i]
        off = D.copy()
        off[-1, -1] = 0.0
        if not np.any(off) and D[-1, -1].real >= g * cfg.sigma_i2[i]:
            continue   # no reflected path to this IU: the row is a satisfied constant
        cons.append(Constraint([Trace("U", D)], ">=", g * cfg.sigma_i2[i], f"sinr_{i}"))
    fixed = [FixedEntry("U", (N1 - 1, N1 - 1), 1.0, "fixed")]
    if diag is None:
        if math.isfinite(cfg.P_I):
            Kmat = sum(ops.Q(W) for W in Ws) + cfg.sigma_z2 * ops.P
            cons.append(Constraint([Trace("U", Kmat)], "<=", cfg.P_I, "amp"))
    else:
        fixed += [FixedEntry("U", (n, n), float(diag), f"diag_{n}") for n in range(N1 - 1)]
    return ConicProgram([HermitianBlock("U", N1)], [Trace("U", ops.B(Ws))], cons, fixed, name="p1-u-step")


def ao_step_U(channels, Ws, cfg, settings=None, ops=None, diag=None):
    ops = ops or _Ops(channels, cfg)
    sol = require_optimal(conic.solve(u_step_program(ops, Ws, cfg, diag), settings), "U step", U_STEP_VIOLATION)
    U = sol["U"]
    return U / U[-1, -1].real if diag is None else U, sol


def u_rows(ops: _Ops, Ws, cfg):
    """Constraint matrices of the U step (for rank reduction)."""
    prog = u_step_program(ops, Ws, cfg)
    rows = [[c.terms[0].C] for c in prog.constraints]
    E = np.zeros((ops.ch.N + 1,) * 2, dtype=complex)
    E[-1, -1] = 1.0
    return rows + [[E]], [ops.B(Ws)]


def extract_beams(Ws, rows=None, objective=None):
    """Purify the blocks jointly, then take rank-one factors (principal fallback)."""
    if rows is not None:
        Ws = rank_reduce(Ws, rows, objective)
    beams, fallback = [], False
    for W in Ws:
        try:
            beams.append(rank_one_extract(W))
        except RankTooHigh:
            fallback = True
            v = principal(W)
            beams.append(v / max(np.linalg.norm(v), 1e-300) * math.sqrt(max(np.trace(W).real, 0.0)))
    return np.array(beams), Ws, fallback


def p1_evaluator(channels, cfg, w, tol=FEAS_TOL):
    """Scores a lifted candidate: feasible for SINR and budgets, objective = weighted sum-power."""
    prec = Precoder(w)

    def evaluate(u_bar):
        refl = ReflectionState.from_u_bar(u_bar)
        rep = feasibility_report("P1", prec, refl, channels, cfg)
        return rep.feasible(tol), weighted_sum_power(prec, refl, channels, cfg)
    return evaluate


def amp_kernel(ops, w, cfg):
    if not math.isfinite(cfg.P_I):
        return None
    return sum(ops.Q(np.outer(b, b.conj())) for b in w) + cfg.sigma_z2 * ops.P


def _min_power_beams(ops, U, cfg, settings):
    """Least AP power meeting every SINR target at ``U`` (no budgets); rank-one beams."""
    K, M = cfg.K_I, ops.ch.M
    R = [ops.H[i].conj().T @ U @ ops.H[i] for i in range(K)]
    cons = []
    for i in range(K):
        g = cfg.gamma[i]
        terms = [Trace(f"W{i}", R[i])] + [Trace(f"W{k}", -g * R[i]) for k in range(K) if k != i]
        rhs = g * (cfg.sigma_z2 * float(np.real(np.trace(ops.T[i] @ U))) + cfg.sigma_i2[i])
        cons.append(Constraint(terms, ">=", rhs, f"sinr_{i}"))
    prog = ConicProgram([HermitianBlock(f"W{i}", M) for i in range(K)],
                        [Trace(f"W{i}", -np.eye(M)) for i in range(K)], cons, name="p1-min-power")
    sol = conic.solve(prog, settings)
    if sol.status == conic.INFEASIBLE:
        raise Infeasible("SINR targets unattainable at any AP power for this reflection state")
    require_optimal(sol, "min-power step", 1e-6)
    w, _, _ = extract_beams([sol[f"W{i}"] for i in range(K)])
    return w


def _sinr_margin(channels, cfg, w, u_bar):
    """``min_i SINR_i / gamma_i`` for beams ``w``."""
    return float(np.min(sinrs(Precoder(w), ReflectionState.from_u_bar(u_bar), channels, cfg) / cfg.gamma_arr))


def restore_feasibility(channels, cfg, u_bar, settings: Optional[AOSettings] = None, project=None, diag=None,
                        ops=None):
    """Move ``u_bar`` until the transmit step is feasible.

    Alternates least-power beams (scaled to the AP budget) with a reflect step
    that maximizes the common SINR margin ``t`` (``SINR_i >= t gamma_i`` on the
    receiver-noise part) under the amplification budget, or with the diagonal
    pinned to ``diag``.  Randomization recovers ``u_bar`` (projected by
    ``project``).  Returns the first ``u_bar`` at which scaled beams meet every
    target; raises :class:`Infeasible` when the margin stops improving.
    """
    settings = settings or AOSettings()
    ops = ops or _Ops(channels, cfg)
    n = channels.N + 1
    rng = _gr_rng(settings)
    best = -math.inf
    for _ in range(settings.outer_max):
        w = _min_power_beams(ops, np.outer(u_bar, u_bar.conj()), cfg, settings.conic)
        w = w * math.sqrt(cfg.P_A / max(float(np.sum(np.abs(w) ** 2)), 1e-300))
        Ws = [np.outer(b, b.conj()) for b in w]
        K = amp_kernel(ops, w, cfg)
        cons = []
        for i in range(cfg.K_I):
            g = cfg.gamma[i]
            Hi = ops.H[i]
            D = Hi @ Ws[i] @ Hi.conj().T - g * cfg.sigma_z2 * ops.T[i]
            for k in range(cfg.K_I):
                if k != i:
                    D = D - g * (Hi @ Ws[k] @ Hi.conj().T)
            cons.append(Constraint([Trace("U", D), Scalar("t", -g * cfg.sigma_i2[i])], ">=", 0.0, f"sinr_{i}"))
        fixed = [FixedEntry("U", (n - 1, n - 1), 1.0, "fixed")]
        if diag is None:
            if K is not None:
                cons.append(Constraint([Trace("U", K)], "<=", cfg.P_I, "amp"))
        else:
            fixed += [FixedEntry("U", (k, k), float(diag), f"diag_{k}") for k in range(n - 1)]
        sol = conic.solve(ConicProgram([HermitianBlock("U", n), ScalarBlock("t")], [Scalar("t")], cons, fixed,
                                       name="p1-margin"), settings.conic, retry=False)
        if sol.status not in (conic.OPTIMAL, conic.NUMERICAL_FAILURE):
            break
        U = sol["U"] / sol["U"][-1, -1].real

        def evaluate(ub):
            if K is not None and float(np.real(np.vdot(ub, K @ ub))) > cfg.P_I * (1 + 1e-9):
                return False, 0.0
            return True, _sinr_margin(channels, cfg, w, ub)

        try:
            gr = gaussian_randomize_u(U, evaluate, settings.draws, rng=rng, amp_kernel=K, amp_budget=cfg.P_I,
                                      project=project)
        except NoFeasibleCandidate:
            break
        current = _sinr_margin(channels, cfg, w, u_bar)
        if gr.objective > current:
            u_bar = gr.u_bar
        margin = max(gr.objective, current)
        if margin >= 1.0:
            return u_bar
        if margin <= best * (1 + 1e-4):
            break
        best = margin
    raise Infeasible(f"SINR targets unattainable: best common margin {best:.4g}", ratio=best)


@dataclass
class SumPowerSolution:
    precoder: Precoder
    refl: ReflectionState
    sdr_trace: List[float]
    sdr_objective: float
    objective: float
    iterations: int
    status: str
    W: List[np.ndarray] = field(default_factory=list)
    U: Optional[np.ndarray] = None
    gr_source: str = ""
    rank_fallback: bool = False
    report: Optional[SolveReport] = None


def solve_sum_power(instance: Instance, settings: Optional[AOSettings] = None,
                    refl0: Optional[ReflectionState] = None):
    """AO over the two SDR blocks, then rank-one recovery and randomization.

    With ``K_I = 0`` the WPT solver is used instead.
    """
    settings = settings or AOSettings()
    cfg, ch = instance.config, instance.channels
    if cfg.K_I == 0:
        return solve_wpt(instance, settings, refl0)
    build_simplified_instance(instance)
    ops = _Ops(ch, cfg)
    refl = refl0 or initial_reflection(ch, cfg, settings.seed, settings.init_fraction)
    try:
        ao_step_W(ch, np.outer(refl.u_bar, refl.u_bar.conj()), cfg, settings.conic, ops)
    except Infeasible:
        refl = ReflectionState.from_u_bar(restore_feasibility(ch, cfg, refl.u_bar, settings, ops=ops))
    U = np.outer(refl.u_bar, refl.u_bar.conj())
    trace = []
    status = "max_iterations"
    Ws = None
    for it in range(1, settings.outer_max + 1):
        Ws, _ = ao_step_W(ch, U, cfg, settings.conic, ops)
        U, _ = ao_step_U(ch, Ws, cfg, settings.conic, ops)
        trace.append(ops.sdr_objective(Ws, U))
        if it > 1 and relative_gain(trace[-1], trace[-2]) < settings.outer_tol:
            status = "converged"
            break

    prog, wrows, wobj = w_step_program(ops, U, cfg)
    w, Ws_r, fallback = extract_beams(Ws, wrows, wobj)
    urows, uobj = u_rows(ops, Ws, cfg)
    U_r = rank_reduce([U], urows, uobj)[0]
    gr = gaussian_randomize_u(U_r, p1_evaluator(ch, cfg, w), settings.draws, rng=_gr_rng(settings),
                              amp_kernel=amp_kernel(ops, w, cfg), amp_budget=cfg.P_I)
    refl = ReflectionState.from_u_bar(gr.u_bar)
    prec = Precoder(w)
    feas = feasibility_report("P1", prec, refl, ch, cfg)
    rep = SolveReport("P1", status, gr.objective, trace, len(trace), [], feas.residuals,
                      {"sdr_objective": trace[-1], "gr_source": gr.source, "gr_feasible": gr.feasible_count})
    return SumPowerSolution(precoder=prec, refl=refl, sdr_trace=trace, sdr_objective=trace[-1],
                            objective=gr.objective, iterations=len(trace), status=status, W=Ws_r, U=U_r,
                            gr_source=gr.source, rank_fallback=fallback, report=rep)


def _gr_rng(settings):
    from .channels import make_rng
    return make_rng(settings.seed, 2000)
