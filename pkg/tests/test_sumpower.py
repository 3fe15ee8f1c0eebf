import math
from dataclasses import replace

import numpy as np
import pytest

from activeirs.channels import Scenario
from activeirs.errors import HypothesisViolated, Infeasible
from activeirs.report import AOSettings, is_monotone
from activeirs.sumpower import (_Ops, ao_step_U, ao_step_W, build_simplified_instance, restore_feasibility,
                                solve_sum_power, u_step_program, w_step_program)
from activeirs.system import (Instance, Precoder, ReflectionState, SystemConfig, feasibility_report, sinrs,
                              weighted_sum_power)
from activeirs.wpt import initial_reflection


def _U(refl):
    return np.outer(refl.u_bar, refl.u_bar.conj())


def zf_point(inst, refl):
    """Zero-forcing beams meeting every SINR target with equality, or None."""
    cfg, ch = inst.config, inst.channels
    from activeirs.system import effective_channels
    h, _ = effective_channels(ch, refl)
    Hm = h.conj()                      # rows h_i^H
    Wzf = np.linalg.pinv(Hm)           # columns with h_i^H w_k = delta_ik
    noise = cfg.sigma_z2 * np.sum(np.abs(ch.h_r.conj() * refl.u) ** 2, axis=1) + cfg.sigma_i2_arr
    p = cfg.gamma_arr * noise
    w = (Wzf * np.sqrt(p)).T
    prec = Precoder(w)
    return prec if feasibility_report("P1", prec, refl, ch, cfg).feasible(1e-9) else None


def test_w_step_feasible_and_beats_zero_forcing(desk_p1):
    cfg, ch = desk_p1.config, desk_p1.channels
    refl = initial_reflection(ch, cfg, seed=0, fraction=0.5)
    Ws, sol = ao_step_W(ch, _U(refl), cfg)
    assert sol.violation <= 1e-7
    zf = zf_point(desk_p1, refl)
    assert zf is not None
    assert sol.objective >= weighted_sum_power(zf, refl, ch, cfg) * (1 - 1e-7)
    for W in Ws:
        assert np.linalg.eigvalsh(W)[0] >= -1e-9 * np.abs(W).max()


def test_u_step_does_not_decrease(desk_p1):
    cfg, ch = desk_p1.config, desk_p1.channels
    ops = _Ops(ch, cfg)
    refl = initial_reflection(ch, cfg, seed=0)
    U0 = _U(refl)
    Ws, _ = ao_step_W(ch, U0, cfg, ops=ops)
    U1, _ = ao_step_U(ch, Ws, cfg, ops=ops)
    assert U1[-1, -1].real == pytest.approx(1.0)
    assert ops.sdr_objective(Ws, U1) >= ops.sdr_objective(Ws, U0) * (1 - 1e-7)


def test_u_step_diag_pins_amplitudes(desk_p1):
    cfg, ch = desk_p1.config, desk_p1.channels
    refl = initial_reflection(ch, cfg, seed=0)
    Ws, _ = ao_step_W(ch, _U(refl), cfg)
    b2 = float(refl.beta[0] ** 2)
    U, _ = ao_step_U(ch, Ws, cfg, diag=b2)
    assert np.allclose(np.real(np.diag(U))[:-1], b2, rtol=1e-7)


def test_constant_sinr_rows_dropped_without_iu_link(desk_p1):
    inst = Instance(desk_p1.config, desk_p1.channels.without_irs_iu_link())
    ops = _Ops(inst.channels, inst.config)
    # IU 0 is served without interference (satisfied constant row), IU 1 gets nothing (violated, kept)
    Ws = [np.eye(inst.config.M), np.zeros((inst.config.M, inst.config.M))]
    prog = u_step_program(ops, Ws, inst.config)
    assert [c.name for c in prog.constraints if c.name.startswith("sinr")] == ["sinr_1"]


def test_w_step_infeasible_names_binding(desk_p1):
    cfg = replace(desk_p1.config, gamma=(1e9, 1e9))
    refl = initial_reflection(desk_p1.channels, cfg, seed=0)
    with pytest.raises(Infeasible):
        ao_step_W(desk_p1.channels, _U(refl), cfg)


def test_simplified_instance_hypotheses(desk_p1):
    bad = Instance(replace(desk_p1.config, gamma=(1.0, 0.0)), desk_p1.channels)
    with pytest.raises(HypothesisViolated):
        build_simplified_instance(bad)


def test_solve_sum_power(desk_p1):
    sol = solve_sum_power(desk_p1, AOSettings())
    cfg, ch = desk_p1.config, desk_p1.channels
    assert is_monotone(sol.sdr_trace)
    assert feasibility_report("P1", sol.precoder, sol.refl, ch, cfg).feasible(1e-6)
    assert sol.objective == pytest.approx(weighted_sum_power(sol.precoder, sol.refl, ch, cfg), rel=1e-9)
    # recovery cannot beat the relaxation
    assert sol.objective <= sol.sdr_objective * (1 + 1e-6)
    assert sol.objective >= 0.8 * sol.sdr_objective
    assert sol.report.kind == "P1" and sol.iterations == len(sol.sdr_trace)


def test_solve_sum_power_is_deterministic(desk_p1):
    a = solve_sum_power(desk_p1, AOSettings(seed=3))
    b = solve_sum_power(desk_p1, AOSettings(seed=3))
    assert a.objective == b.objective and np.array_equal(a.refl.u, b.refl.u)


def test_restore_feasibility_reaches_targets():
    sc = Scenario(M=4, N=16, K_I=2, K_E=4, P_A_dbm=30, P_I_dbm=10, gamma_db=20)
    inst = Instance(sc.system_config(), sc.channels(1))
    cfg, ch = inst.config, inst.channels
    refl = initial_reflection(ch, cfg, seed=0)
    ub = restore_feasibility(ch, cfg, refl.u_bar)
    Ws, sol = ao_step_W(ch, np.outer(ub, ub.conj()), cfg)
    assert sol.optimal


def test_restore_feasibility_reports_margin(desk_p1):
    cfg = replace(desk_p1.config, gamma=(1e6, 1e6))
    refl = initial_reflection(desk_p1.channels, cfg, seed=0)
    with pytest.raises(Infeasible) as exc:
        restore_feasibility(desk_p1.channels, cfg, refl.u_bar, AOSettings(outer_max=5, draws=50))
    assert exc.value.ratio is not None and exc.value.ratio < 1


def test_wpt_dispatch(desk_wpt):
    sol = solve_sum_power(desk_wpt)
    assert sol.objective > 0 and hasattr(sol, "v0")
