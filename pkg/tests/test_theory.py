import numpy as np
import pytest

from activeirs.errors import VerificationFailed
from activeirs.sumrate import solve_sum_rate
from activeirs.system import ReflectionState
from activeirs.theory import perturbed_blocks, verify_theorem1, verify_theorem2_construction
from activeirs.wpt import initial_reflection

from conftest import random_u


def test_theorem1_at_initial_reflection(desk_p1):
    refl = initial_reflection(desk_p1.channels, desk_p1.config, seed=0, fraction=0.5)
    rep = verify_theorem1(desk_p1, refl=refl)
    assert rep.passed and rep.gap <= 1e-4
    assert set(rep.merged_residual) == {0, 1}
    assert max(rep.merged_residual.values()) <= 1e-7
    # the merge moves the energy covariance into block m: that IU's slack can only grow
    for m in rep.slack_after:
        assert rep.slack_after[m] >= rep.slack_before[m] - 1e-12 * max(1.0, abs(rep.slack_before[m]))


def test_theorem1_at_ao_output(desk_p1):
    rep = verify_theorem1(desk_p1)
    assert rep.passed


def test_theorem1_reports_gap(desk_p1):
    with pytest.raises(VerificationFailed):
        verify_theorem1(desk_p1, tol=-1.0, refl=ReflectionState(np.zeros(desk_p1.channels.N)))


def test_theorem2_on_random_blocks(rng, desk_p2):
    M = desk_p2.config.M
    refl = ReflectionState(0.3 * random_u(rng, desk_p2.channels.N))
    for _ in range(5):
        Ws = []
        for _ in range(desk_p2.config.K_I):
            V = random_u(rng, M * 3).reshape(M, 3) * 0.05
            Ws.append(V @ V.conj().T)
        rep = verify_theorem2_construction(Ws, desk_p2, refl)
        assert rep.passed
        assert rep.rank_one_count >= desk_p2.config.K_I - 1
        assert rep.sum_error <= 1e-8
        assert rep.rate_after >= rep.rate_before - 1e-8


def test_theorem2_on_perturbed_solution(desk_p2):
    sol = solve_sum_rate(desk_p2)
    for s in range(3):
        Ws = perturbed_blocks(sol.W, rng=s)
        assert min(np.linalg.matrix_rank(W, tol=1e-9 * np.abs(W).max()) for W in Ws) >= 2
        rep = verify_theorem2_construction(Ws, desk_p2, sol.refl)
        assert rep.passed


def test_theorem2_failure_is_reported(rng, desk_p2):
    M = desk_p2.config.M
    refl = ReflectionState(0.3 * random_u(rng, desk_p2.channels.N))
    Ws = [np.eye(M) * 0.01 for _ in range(desk_p2.config.K_I)]
    rep = verify_theorem2_construction(Ws, desk_p2, refl, tol=-1.0, raise_on_failure=False)
    assert not rep.passed
    with pytest.raises(VerificationFailed):
        verify_theorem2_construction(Ws, desk_p2, refl, tol=-1.0)
