import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from activeirs import conic
from activeirs.conic import (Constraint, ConicProgram, Exp, FixedEntry, HermitianBlock, Linear, Quad, Scalar,
                             ScalarBlock, SolverSettings, Trace, VectorBlock, require_optimal)
from activeirs.errors import Infeasible


def rand_herm(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T if psd else (A + A.conj().T) / 2


BACKENDS = ["ipm", "clarabel"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_trace_budget_gives_top_eigenvalue(rng, backend):
    C = rand_herm(rng, 4)
    prog = ConicProgram([HermitianBlock("X", 4)], [Trace("X", C)],
                        [Constraint([Trace("X", np.eye(4))], "<=", 1.0, "budget")])
    sol = conic.solve(prog, SolverSettings(backend=backend))
    assert sol.optimal and sol.backend == backend
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[-1], rel=1e-6)
    assert np.linalg.eigvalsh(sol["X"])[0] >= -1e-9
    assert sol.violation <= 1e-7


@hsettings(max_examples=10)
@given(st.integers(0, 10_000))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = 3
    C, A = rand_herm(rng, n, psd=True), rand_herm(rng, n, psd=True)
    prog = ConicProgram([HermitianBlock("X", n), HermitianBlock("Y", n)],
                        [Trace("X", C), Trace("Y", 0.5 * C)],
                        [Constraint([Trace("X", np.eye(n)), Trace("Y", np.eye(n))], "<=", 1.0, "sum"),
                         Constraint([Trace("X", A)], "<=", 0.3 * np.trace(A).real / n, "shape")])
    a = conic.solve(prog, SolverSettings(backend="ipm"))
    b = conic.solve(prog, SolverSettings(backend="clarabel"))
    assert a.optimal and b.optimal
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


def test_linear_over_ball(rng):
    c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    prog = ConicProgram([VectorBlock("x", 5)], [Linear("x", c)],
                        [Constraint([Quad("x", np.eye(5))], "<=", 1.0, "ball")])
    sol = conic.solve(prog)
    assert sol.objective == pytest.approx(np.linalg.norm(c), rel=1e-7)
    assert np.allclose(sol["x"], c / np.linalg.norm(c), atol=1e-6)


def test_linear_over_ellipsoid(rng):
    c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    A = rand_herm(rng, 3, psd=True) + np.eye(3)
    prog = ConicProgram([VectorBlock("x", 3)], [Linear("x", c)],
                        [Constraint([Quad("x", A)], "<=", 2.0, "ell")])
    expect = math.sqrt(2.0 * np.real(c.conj() @ np.linalg.solve(A, c)))
    assert conic.solve(prog).objective == pytest.approx(expect, rel=1e-7)


def test_nonnegative_real_block():
    prog = ConicProgram([VectorBlock("b", 4, real=True, nonneg=True)], [Linear("b", np.array([1, 1, -1, 1.0]))],
                        [Constraint([Quad("b", np.eye(4))], "<=", 1.0)])
    sol = conic.solve(prog)
    assert sol.objective == pytest.approx(math.sqrt(3), rel=1e-7)
    assert sol["b"][2] == pytest.approx(0, abs=1e-7)


def test_exponential_row():
    prog = ConicProgram([ScalarBlock("s")], [Scalar("s")], [Constraint([Exp("s", 2.0)], "<=", 10.0)])
    sol = conic.solve(prog)
    assert sol.objective == pytest.approx(math.log(5.0), rel=1e-7)


def test_fixed_entry_and_constant():
    prog = ConicProgram([HermitianBlock("X", 2)], [Trace("X", np.array([[0, 0.5], [0.5, 0]]))],
                        [Constraint([Trace("X", np.diag([1.0, 0]))], "<=", 4.0)],
                        [FixedEntry("X", (1, 1), 1.0)], objective_constant=3.0)
    sol = conic.solve(prog)
    # |X01| <= sqrt(X00 X11) = 2
    assert sol.objective == pytest.approx(5.0, rel=1e-7)
    assert sol["X"][1, 1] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_detected(backend):
    prog = ConicProgram([HermitianBlock("X", 2)], [Trace("X", np.eye(2))],
                        [Constraint([Trace("X", np.eye(2))], "<=", -1.0, "negative_trace")])
    sol = conic.solve(prog, SolverSettings(backend=backend))
    assert sol.status == conic.INFEASIBLE
    with pytest.raises(Infeasible):
        require_optimal(sol)


def test_equality_rows(rng):
    C = rand_herm(rng, 3)
    prog = ConicProgram([HermitianBlock("X", 3)], [Trace("X", C)],
                        [Constraint([Trace("X", np.eye(3))], "==", 2.0)])
    sol = conic.solve(prog)
    assert sol.objective == pytest.approx(2 * np.linalg.eigvalsh(C)[-1], rel=1e-6)
    assert np.trace(sol["X"]).real == pytest.approx(2.0, rel=1e-8)


def test_bad_inputs():
    with pytest.raises(ValueError):
        Constraint([], "<")
    prog = ConicProgram([VectorBlock("x", 2)], [Linear("x", np.ones(2))], [Constraint([Quad("x", np.eye(2))], "<=", 1)])
    with pytest.raises(ValueError):
        conic.solve(prog, SolverSettings(backend="nope"))
    with pytest.raises(ValueError):
        conic.solve(prog, SolverSettings(backend="ipm"))


def test_dump_lists_rows():
    prog = ConicProgram([HermitianBlock("X", 2)], [Trace("X", np.eye(2))],
                        [Constraint([Trace("X", np.eye(2))], "<=", 1.0, "budget")], name="demo")
    text = conic.dump(prog)
    assert "demo" in text and "budget" in text
