"""Solver-agnostic convex programs over Hermitian PSD blocks and complex vectors.

A :class:`ConicProgram` is a list of variable blocks, a real-linear objective
(maximized) and constraints built from a handful of term types.  Each row may
carry at most one non-linear term: a convex quadratic ``x^H A x`` on one vector
block or ``c * exp(s)`` of one scalar.  :func:`solve` lowers the program to the
real conic form accepted by Clarabel (interior point):

* a Hermitian ``n x n`` block becomes ``n^2`` reals (diagonal, real and
  imaginary parts of the strict upper triangle) constrained through the
  ``2n x 2n`` real embedding ``[[Re X, -Im X], [Im X, Re X]]``;
* quadratic rows become second-order cones, exponential rows exponential
  cones;
* every row is divided by its largest coefficient so that the data handed to
  the solver is of unit scale.

Feasibility of the returned point is re-evaluated in the original units, so
``ConicSolution.violation`` does not depend on solver internals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import clarabel
import numpy as np
import scipy.sparse as sp

from . import ipm
from .errors import Infeasible, IterationLimit, NumericalFailure

# ---------------------------------------------------------------------------
# program description


@dataclass(frozen=True)
class HermitianBlock:
    name: str
    dim: int


@dataclass(frozen=True)
class VectorBlock:
    name: str
    dim: int
    real: bool = False
    nonneg: bool = False


@dataclass(frozen=True)
class ScalarBlock:
    name: str


Block = Union[HermitianBlock, VectorBlock, ScalarBlock]


@dataclass(frozen=True, eq=False)
class Trace:
    """``Re tr(C X)`` for a Hermitian block."""

    block: str
    C: np.ndarray


@dataclass(frozen=True, eq=False)
class Linear:
    """``Re(c^H x)`` for a vector block."""

    block: str
    c: np.ndarray


@dataclass(frozen=True)
class Scalar:
    block: str
    coef: float = 1.0


@dataclass(frozen=True, eq=False)
class Quad:
    """``x^H A x`` with ``A`` Hermitian PSD."""

    block: str
    A: np.ndarray


@dataclass(frozen=True)
class Exp:
    """``coef * exp(s)``."""

    block: str
    coef: float = 1.0


Term = Union[Trace, Linear, Scalar, Quad, Exp]


@dataclass(eq=False)
class Constraint:
    terms: Sequence[Term]
    sense: str
    rhs: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("<=", ">=", "=="):
            raise ValueError(f"bad constraint sense {self.sense!r}")


@dataclass(eq=False)
class FixedEntry:
    block: str
    index: tuple
    value: complex
    name: str = ""


@dataclass(eq=False)
class ConicProgram:
    blocks: List[Block]
    objective: List[Term]
    constraints: List[Constraint] = field(default_factory=list)
    fixed: List[FixedEntry] = field(default_factory=list)
    objective_constant: float = 0.0
    name: str = "program"

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


@dataclass
class SolverSettings:
    eps_feas: float = 1e-8
    eps_gap: float = 1e-8
    max_iter: int = 200
    verbose: bool = False
    backend: str = "auto"   # "auto" | "ipm" | "clarabel"


OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
ITERATION_LIMIT = "IterationLimit"
NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class ConicSolution:
    status: str
    values: Dict[str, object]
    objective: float
    violation: float
    iterations: int
    solver_status: str = ""
    dual_bound: float = math.inf
    backend: str = ""
    diagnosis: List[str] = field(default_factory=list)

    @property
    def optimal(self):
        return self.status == OPTIMAL

    def __getitem__(self, name):
        return self.values[name]


# ---------------------------------------------------------------------------
# lowering helpers


class _Layout:
    def __init__(self, blocks):
        self.offset = {}
        self.blocks = {}
        n = 0
        for b in blocks:
            if b.name in self.blocks:
                raise ValueError(f"duplicate block {b.name!r}")
            self.blocks[b.name] = b
            self.offset[b.name] = n
            n += self.size(b)
        self.n = n

    @staticmethod
    def size(b):
        if isinstance(b, HermitianBlock):
            return b.dim * b.dim
        if isinstance(b, VectorBlock):
            return b.dim if b.real else 2 * b.dim
        return 1

    def slice(self, name):
        o = self.offset[name]
        return slice(o, o + self.size(self.blocks[name]))


def _herm_index(n):
    iu = np.triu_indices(n, 1)
    return iu, len(iu[0])


def _trace_coef(C, n):
    """Coefficients of ``Re tr(C X)`` in the real parameterization of ``X``."""
    C = np.asarray(C, dtype=complex)
    (p, q), m = _herm_index(n)
    out = np.empty(n + 2 * m)
    out[:n] = np.real(np.diag(C))
    out[n:n + m] = np.real(C[p, q] + C[q, p])
    out[n + m:] = np.imag(C[p, q]) - np.imag(C[q, p])
    return out


def herm_from_params(x, n):
    (p, q), m = _herm_index(n)
    X = np.zeros((n, n), dtype=complex)
    X[np.arange(n), np.arange(n)] = x[:n]
    X[p, q] = x[n:n + m] + 1j * x[n + m:]
    X[q, p] = x[n:n + m] - 1j * x[n + m:]
    return X


def _embedding_map(n):
    """Sparse map from the Hermitian parameters to svec of the real embedding."""
    (p, q), m = _herm_index(n)
    re_idx = -np.ones((n, n), dtype=int)
    im_idx = -np.ones((n, n), dtype=int)
    im_sign = np.zeros((n, n))
    re_idx[np.arange(n), np.arange(n)] = np.arange(n)
    re_idx[p, q] = n + np.arange(m)
    re_idx[q, p] = n + np.arange(m)
    im_idx[p, q] = n + m + np.arange(m)
    im_idx[q, p] = n + m + np.arange(m)
    im_sign[p, q] = 1.0
    im_sign[q, p] = -1.0
    rows, cols, vals = [], [], []
    r = 0
    two_n = 2 * n
    sq2 = math.sqrt(2.0)
    for b in range(two_n):
        for a in range(b + 1):
            scale = 1.0 if a == b else sq2
            ia, ib = a % n, b % n
            if (a < n) == (b < n):
                # Re X block
                rows.append(r); cols.append(re_idx[ia, ib]); vals.append(scale)
            elif a < n <= b:
                # top-right: -Im X[ia, ib]
                if im_idx[ia, ib] >= 0:
                    rows.append(r); cols.append(im_idx[ia, ib]); vals.append(-scale * im_sign[ia, ib])
            else:  # pragma: no cover - a <= b never puts a in the lower block alone
                if im_idx[ia, ib] >= 0:
                    rows.append(r); cols.append(im_idx[ia, ib]); vals.append(scale * im_sign[ia, ib])
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, n * n))


class _Row:
    """Affine part of a normalized row ``a.x + nonlinear <= rhs``."""

    def __init__(self, n):
        self.a = np.zeros(n)
        self.quad = None   # (block, A)
        self.exp = None    # (block, coef)


def _add_linear(row_a, layout, term, sign):
    sl = layout.slice(term.block)
    b = layout.blocks[term.block]
    if isinstance(term, Trace):
        if not isinstance(b, HermitianBlock):
            raise TypeError("Trace term needs a Hermitian block")
        row_a[sl] += sign * _trace_coef(term.C, b.dim)
    elif isinstance(term, Linear):
        if not isinstance(b, VectorBlock):
            raise TypeError("Linear term needs a vector block")
        c = np.asarray(term.c, dtype=complex).reshape(-1)
        if b.real:
            row_a[sl] += sign * np.real(c)
        else:
            row_a[sl] += sign * np.concatenate([np.real(c), np.imag(c)])
    elif isinstance(term, Scalar):
        if not isinstance(b, ScalarBlock):
            raise TypeError("Scalar term needs a scalar block")
        row_a[sl] += sign * term.coef
    else:  # pragma: no cover
        raise TypeError(term)


def _lower_row(con, layout):
    sign = -1.0 if con.sense == ">=" else 1.0
    row = _Row(layout.n)
    for t in con.terms:
        if isinstance(t, Quad):
            if sign < 0 or con.sense == "==":
                raise ValueError(f"constraint {con.name!r}: quadratic term on the wrong side")
            if row.exp is not None or (row.quad is not None and row.quad[0] != t.block):
                raise ValueError(f"constraint {con.name!r}: one non-linear block per row")
            A = np.asarray(t.A, dtype=complex)
            row.quad = (t.block, A if row.quad is None else row.quad[1] + A)
        elif isinstance(t, Exp):
            coef = sign * t.coef
            if coef <= 0 or con.sense == "==":
                raise ValueError(f"constraint {con.name!r}: exponential term must be bounded above")
            if row.exp is not None or row.quad is not None:
                raise ValueError(f"constraint {con.name!r}: one non-linear term per row")
            row.exp = (t.block, coef)
        else:
            _add_linear(row.a, layout, t, sign)
    return row, sign * con.rhs


def _quad_rows(block, A, scale, layout):
    """Rows of ``y`` with ``x^H (A/scale) x = |y|^2`` as a real linear map of x."""
    A = (A + A.conj().T) / 2 / scale
    lam, V = np.linalg.eigh(A)
    if lam.size and lam.min() < -1e-9 * max(lam.max(), 1e-300):
        raise ValueError("quadratic form is not PSD")
    keep = lam > 1e-14 * max(lam.max(), 1e-300)
    Lh = (V[:, keep] * np.sqrt(lam[keep])).conj().T  # y = Lh x
    b = layout.blocks[block]
    k = Lh.shape[0]
    out = np.zeros((2 * k, layout.n))
    sl = layout.slice(block)
    if b.real:
        out[:k, sl] = np.real(Lh)
        out[k:, sl] = np.imag(Lh)
    else:
        out[:k, sl] = np.hstack([np.real(Lh), -np.imag(Lh)])
        out[k:, sl] = np.hstack([np.imag(Lh), np.real(Lh)])
    return out


def _row_scale(a, extra=0.0):
    s = max(float(np.max(np.abs(a))) if a.size else 0.0, extra)
    return s if s > 0 else 1.0


def _lower(program: ConicProgram):
    layout = _Layout(program.blocks)
    n = layout.n
    parts = []  # (A rows, b, cone, name)

    for f in program.fixed:
        b = layout.blocks[f.block]
        sl = layout.slice(f.block)
        value = complex(f.value)
        if isinstance(b, HermitianBlock):
            i, j = f.index
            rows = []
            ei = np.zeros(n)
            if i == j:
                ei[sl.start + i] = 1.0
                rows.append((ei, value.real))
            else:
                if i > j:
                    i, j, value = j, i, value.conjugate()
                (p, q), m = _herm_index(b.dim)
                k = int(np.flatnonzero((p == i) & (q == j))[0])
                er = np.zeros(n); er[sl.start + b.dim + k] = 1.0
                ej = np.zeros(n); ej[sl.start + b.dim + m + k] = 1.0
                rows += [(er, value.real), (ej, value.imag)]
        elif isinstance(b, VectorBlock):
            (i,) = f.index if isinstance(f.index, tuple) else (f.index,)
            rows = []
            er = np.zeros(n); er[sl.start + i] = 1.0
            rows.append((er, value.real))
            if not b.real:
                ej = np.zeros(n); ej[sl.start + b.dim + i] = 1.0
                rows.append((ej, value.imag))
        else:
            er = np.zeros(n); er[sl.start] = 1.0
            rows = [(er, value.real)]
        A = np.array([r[0] for r in rows])
        bb = np.array([r[1] for r in rows])
        parts.append((A, bb, clarabel.ZeroConeT(len(rows)), f.name or f"fixed:{f.block}"))

    row_scales = []
    for con in program.constraints:
        row, rhs = _lower_row(con, layout)
        if row.quad is not None:
            block, A = row.quad
            qscale = float(np.max(np.abs(A))) if A.size else 0.0
            scale = _row_scale(row.a, max(qscale, abs(rhs)))
            Y = _quad_rows(block, A, scale, layout)
            a, r = row.a / scale, rhs / scale
            # ||(2y, t-1)|| <= t+1 with t = r - a.x
            Arows = np.vstack([a, -2.0 * Y, a])
            bb = np.concatenate([[r + 1.0], np.zeros(Y.shape[0]), [r - 1.0]])
            parts.append((Arows, bb, clarabel.SecondOrderConeT(Arows.shape[0]), con.name))
        elif row.exp is not None:
            block, coef = row.exp
            scale = _row_scale(row.a, abs(rhs))
            a, r = row.a / scale, rhs / scale
            es = np.zeros(n); es[layout.offset[block]] = -1.0
            Arows = np.vstack([es, np.zeros(n), a])
            bb = np.array([math.log(coef / scale), 1.0, r])
            parts.append((Arows, bb, clarabel.ExponentialConeT(), con.name))
        else:
            scale = _row_scale(row.a, abs(rhs))
            a, r = row.a / scale, rhs / scale
            cone = clarabel.ZeroConeT(1) if con.sense == "==" else clarabel.NonnegativeConeT(1)
            parts.append((a[None, :], np.array([r]), cone, con.name))
        row_scales.append(scale)

    for b in program.blocks:
        sl = layout.slice(b.name)
        if isinstance(b, HermitianBlock):
            T = _embedding_map(b.dim)
            A = sp.hstack([sp.csr_matrix((T.shape[0], sl.start)), -T,
                           sp.csr_matrix((T.shape[0], n - sl.stop))]).tocsr()
            parts.append((A, np.zeros(T.shape[0]), clarabel.PSDTriangleConeT(2 * b.dim), f"psd:{b.name}"))
        elif isinstance(b, VectorBlock) and b.nonneg:
            if not b.real:
                raise ValueError("non-negativity needs a real vector block")
            A = np.zeros((b.dim, n))
            A[:, sl] = -np.eye(b.dim)
            parts.append((A, np.zeros(b.dim), clarabel.NonnegativeConeT(b.dim), f"nonneg:{b.name}"))

    q = np.zeros(n)
    for t in program.objective:
        if isinstance(t, (Quad, Exp)):
            raise ValueError("objective must be real-linear")
        _add_linear(q, layout, t, 1.0)
    obj_scale = _row_scale(q)
    return layout, parts, -q / obj_scale, obj_scale, row_scales


# ---------------------------------------------------------------------------
# evaluation in original units


def unpack(layout: _Layout, x):
    values = {}
    for name, b in layout.blocks.items():
        xs = x[layout.slice(name)]
        if isinstance(b, HermitianBlock):
            values[name] = herm_from_params(xs, b.dim)
        elif isinstance(b, VectorBlock):
            values[name] = xs.copy() if b.real else xs[:b.dim] + 1j * xs[b.dim:]
        else:
            values[name] = float(xs[0])
    return values


def evaluate_term(term, values):
    x = values[term.block]
    if isinstance(term, Trace):
        return float(np.real(np.trace(np.asarray(term.C) @ x)))
    if isinstance(term, Linear):
        return float(np.real(np.vdot(np.asarray(term.c).reshape(-1), x)))
    if isinstance(term, Scalar):
        return term.coef * x
    if isinstance(term, Quad):
        return float(np.real(np.vdot(x, np.asarray(term.A) @ x)))
    if isinstance(term, Exp):
        return term.coef * math.exp(x)
    raise TypeError(term)  # pragma: no cover


def evaluate_objective(program, values):
    return sum(evaluate_term(t, values) for t in program.objective) + program.objective_constant


def constraint_violations(program: ConicProgram, values, row_scales=None):
    """Normalized violation of every constraint (0 when satisfied)."""
    out = {}
    for k, con in enumerate(program.constraints):
        lhs = sum(evaluate_term(t, values) for t in con.terms)
        if row_scales is not None:
            scale = row_scales[k]
        else:
            scale = max([abs(con.rhs)] + [1e-300])
        if con.sense == "<=":
            v = lhs - con.rhs
        elif con.sense == ">=":
            v = con.rhs - lhs
        else:
            v = abs(lhs - con.rhs)
        out[con.name or f"c{k}"] = max(v, 0.0) / scale
    for f in program.fixed:
        x = values[f.block]
        got = x if np.isscalar(x) else x[f.index]
        out[f.name or f"fixed:{f.block}"] = abs(got - f.value) / max(abs(f.value), 1.0)
    for b in program.blocks:
        x = values[b.name]
        if isinstance(b, HermitianBlock):
            lam = np.linalg.eigvalsh(x)
            top = max(abs(lam).max(), 1e-300)
            out[f"psd:{b.name}"] = max(-lam.min(), 0.0) / top
        elif isinstance(b, VectorBlock) and b.nonneg:
            out[f"nonneg:{b.name}"] = max(-float(np.min(x)), 0.0) if b.dim else 0.0
    return out


# ---------------------------------------------------------------------------
# solve


def _status_name(status):
    return str(status).split(".")[-1]


def _sdp_eligible(program: ConicProgram):
    if not all(isinstance(b, HermitianBlock) for b in program.blocks):
        return False
    terms = list(program.objective) + [t for c in program.constraints for t in c.terms]
    return all(isinstance(t, Trace) for t in terms)


def _finish(program, settings, values, row_scales, iterations, name, backend, dual_bound, ok_solver,
            limit=False, infeasible=None):
    viol = constraint_violations(program, values, row_scales)
    max_viol = max(viol.values()) if viol else 0.0
    diagnosis = []
    if infeasible is not None:
        status = INFEASIBLE
        diagnosis = infeasible
    elif ok_solver and max_viol <= settings.eps_feas:
        status = OPTIMAL
    elif limit:
        status = ITERATION_LIMIT
    else:
        status = NUMERICAL_FAILURE
        diagnosis.append(f"{backend} stopped with {name}, violation {max_viol:.3e}")
    return ConicSolution(
        status=status, values=values, objective=evaluate_objective(program, values),
        violation=max_viol, iterations=int(iterations), solver_status=name,
        dual_bound=dual_bound, backend=backend, diagnosis=diagnosis,
    )


def _solve_ipm(program, settings):
    """Embedded interior point for programs with Hermitian blocks and trace rows only."""
    names = [b.name for b in program.blocks]
    dims = [b.dim for b in program.blocks]
    pos = {nm: k for k, nm in enumerate(names)}
    rows = []  # (per-block matrices, slack sign, rhs, name)
    for k, con in enumerate(program.constraints):
        mats = [np.zeros((d, d), dtype=complex) for d in dims]
        for t in con.terms:
            C = np.asarray(t.C, dtype=complex)
            mats[pos[t.block]] += (C + C.conj().T) / 2
        slack = {"<=": 1.0, ">=": -1.0, "==": 0.0}[con.sense]
        rows.append((mats, slack, float(con.rhs), con.name or f"c{k}"))
    for f in program.fixed:
        b = pos[f.block]
        i, j = f.index
        v = complex(f.value)
        if i == j:
            mats = [np.zeros((d, d), dtype=complex) for d in dims]
            mats[b][i, i] = 1.0
            rows.append((mats, 0.0, v.real, f.name or f"fixed:{f.block}"))
        else:
            for part, (aij, rhs) in (("re", (0.5, v.real)), ("im", (0.5j, v.imag))):
                mats = [np.zeros((d, d), dtype=complex) for d in dims]
                mats[b][i, j] = aij
                mats[b][j, i] = np.conj(aij)
                rows.append((mats, 0.0, rhs, f"{f.name or 'fixed:' + f.block}:{part}"))
    # rows without coefficients are either trivially true or prove infeasibility
    kept = []
    for row in rows:
        mats, slack, rhs, name = row
        if any(np.any(M != 0) for M in mats):
            kept.append(row)
        elif (slack > 0 and rhs < 0) or (slack < 0 and rhs > 0) or (slack == 0 and rhs != 0):
            return None, {nm: np.zeros((d, d), dtype=complex) for nm, d in zip(names, dims)}, math.inf, [name]
    rows = kept
    m = len(rows)
    slack_rows = [r for r in range(m) if rows[r][1] != 0.0]
    A_lp = np.zeros((m, len(slack_rows)))
    A_blocks = [np.zeros((m, d, d), dtype=complex) for d in dims]
    bvec = np.zeros(m)
    for r, (mats, slack, rhs, _) in enumerate(rows):
        scale = max([float(np.max(np.abs(M))) for M in mats if M.size] + [abs(rhs)])
        scale = scale if scale > 0 else 1.0
        for bi, M in enumerate(mats):
            A_blocks[bi][r] = M / scale
        if slack:
            A_lp[r, slack_rows.index(r)] = slack / scale
        bvec[r] = rhs / scale
    Cs = [np.zeros((d, d), dtype=complex) for d in dims]
    for t in program.objective:
        C = np.asarray(t.C, dtype=complex)
        Cs[pos[t.block]] -= (C + C.conj().T) / 2
    obj_scale = max([float(np.max(np.abs(C))) for C in Cs if C.size] + [0.0]) or 1.0
    Cs = [C / obj_scale for C in Cs]
    data = ipm.SdpData(C=Cs, A=A_blocks, c_lp=np.zeros(len(slack_rows)), A_lp=A_lp, b=bvec)
    # one decade of margin below the acceptance thresholds
    res = ipm.solve_sdp(data, eps_feas=settings.eps_feas / 10, eps_gap=settings.eps_gap / 10,
                        max_iter=settings.max_iter)
    values = dict(zip(names, res.X))
    dual_bound = -res.dobj * obj_scale + program.objective_constant
    infeasible = None
    if res.status == "infeasible":
        w = np.abs(res.certificate)
        infeasible = [rows[r][3] for r in range(m) if w[r] > 1e-6 * w.max()] or ["primal infeasibility certificate"]
    return res, values, dual_bound, infeasible


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None, retry=True) -> ConicSolution:
    """Solve ``program`` to the tolerances in ``settings``.

    Programs made only of Hermitian blocks and trace rows go to the embedded
    interior-point method (:mod:`activeirs.ipm`); everything else, and any
    embedded solve that does not certify optimality or infeasibility, goes to
    Clarabel.  ``retry=False`` skips the fallback option sets (for programs
    whose output is only a candidate that gets checked exactly).  Never raises for infeasible or failed solves; inspect
    ``status`` or call :func:`require_optimal`.
    """
    settings = settings or SolverSettings()
    if settings.backend not in ("auto", "ipm", "clarabel"):
        raise ValueError(f"unknown backend {settings.backend!r}")
    row_scales = None
    if settings.backend != "clarabel" and _sdp_eligible(program):
        res, values, dual_bound, infeasible = _solve_ipm(program, settings)
        row_scales = _row_scales(program)
        if res is None:
            return _finish(program, settings, values, row_scales, 0, "trivially infeasible", "ipm",
                           dual_bound, False, infeasible=infeasible)
        sol = _finish(program, settings, values, row_scales, res.iterations, res.status, "ipm",
                      dual_bound, res.status == "optimal", limit=res.status == "max_iter",
                      infeasible=infeasible)
        if sol.status in (OPTIMAL, INFEASIBLE) or settings.backend == "ipm":
            return sol
    elif settings.backend == "ipm":
        raise ValueError("program needs cones the embedded solver does not handle")
    return _solve_clarabel(program, settings, retry)


def _row_scales(program):
    layout = _Layout(program.blocks)
    out = []
    for con in program.constraints:
        row, rhs = _lower_row(con, layout)
        extra = abs(rhs)
        if row.quad is not None:
            extra = max(extra, float(np.max(np.abs(row.quad[1]))))
        out.append(_row_scale(row.a, extra))
    return out


# fallback option sets tried in order when a Clarabel run stalls short of the tolerances
_RETRIES = (
    {},
    {"max_step_fraction": 0.9},
    {"direct_solve_method": "qdldl"},
    {"iterative_refinement_reltol": 1e-14, "iterative_refinement_abstol": 1e-14,
     "iterative_refinement_max_iter": 50},
    {"direct_solve_method": "qdldl", "iterative_refinement_reltol": 1e-14,
     "iterative_refinement_abstol": 1e-14, "iterative_refinement_max_iter": 50},
)


def _solve_clarabel(program, settings, retry=True):
    layout, parts, q, obj_scale, row_scales = _lower(program)
    n = layout.n
    A = sp.vstack([sp.csr_matrix(p[0]) for p in parts]).tocsc() if parts else sp.csc_matrix((0, n))
    b = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    cones = [p[2] for p in parts]
    P = sp.csc_matrix((n, n))
    best = None
    for extra in (_RETRIES if retry else _RETRIES[:1]):
        sol = _clarabel_run(program, settings, layout, parts, P, q, A, b, cones, row_scales, obj_scale, extra)
        if sol.status in (OPTIMAL, INFEASIBLE):
            return sol
        if best is None or sol.violation < best.violation:
            best = sol
    return best


def _clarabel_run(program, settings, layout, parts, P, q, A, b, cones, row_scales, obj_scale, extra):
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    # interior tolerances sit one decade below the acceptance thresholds
    opts.tol_feas = settings.eps_feas / 10
    opts.tol_gap_abs = settings.eps_gap / 10
    opts.tol_gap_rel = settings.eps_gap / 10
    opts.tol_infeas_abs = settings.eps_feas / 10
    opts.tol_infeas_rel = settings.eps_feas / 10
    opts.tol_ktratio = 1e-7
    opts.presolve_enable = False
    opts.direct_solve_method = "faer"
    opts.max_threads = 1
    for key, value in extra.items():
        setattr(opts, key, value)

    raw = clarabel.DefaultSolver(P, q, A, b, cones, opts).solve()
    name = _status_name(raw.status)
    values = _psd_clip(program, unpack(layout, np.asarray(raw.x, dtype=float)))
    dual_bound = -raw.obj_val_dual * obj_scale + program.objective_constant
    infeasible = _certificate_rows(raw, parts) if name in ("PrimalInfeasible", "AlmostPrimalInfeasible") else None
    gap = abs(raw.obj_val - raw.obj_val_dual) / max(1.0, abs(raw.obj_val))
    ok = name == "Solved" or (name in ("AlmostSolved", "InsufficientProgress") and gap <= settings.eps_gap * 10)
    return _finish(program, settings, values, row_scales, raw.iterations, name, "clarabel", dual_bound,
                   ok, limit=name in ("MaxIterations", "MaxTime"), infeasible=infeasible)


def _psd_clip(program, values):
    """Drop the tiny negative eigenvalues an interior-point iterate leaves in Hermitian blocks."""
    for b in program.blocks:
        if isinstance(b, HermitianBlock) and b.dim:
            X = values[b.name]
            lam, V = np.linalg.eigh((X + X.conj().T) / 2)
            if lam[0] < 0:
                values[b.name] = (V * np.clip(lam, 0.0, None)) @ V.conj().T
    return values


def _certificate_rows(raw, parts):
    """Names of constraints carrying weight in the primal infeasibility certificate."""
    z = np.abs(np.asarray(raw.z, dtype=float))
    if not z.size or not np.isfinite(z).all() or z.max() == 0:
        return ["primal infeasibility certificate (no row attribution)"]
    names, k = [], 0
    for Arows, bb, cone, name in parts:
        m = len(bb)
        if z[k:k + m].max() > 1e-6 * z.max() and not name.startswith(("psd:", "nonneg:")):
            names.append(name)
        k += m
    return names or ["primal infeasibility certificate"]


def require_optimal(sol: ConicSolution, what="subproblem", accept_violation=0.0):
    """Return ``sol`` if optimal, else raise the matching error.

    ``accept_violation`` also admits a solve the backend reported (almost)
    solved whose only defect is a violation up to that level.
    """
    if sol.status == OPTIMAL:
        return sol
    if (accept_violation and sol.status == NUMERICAL_FAILURE and sol.violation <= accept_violation
            and sol.solver_status in ("Solved", "AlmostSolved", "InsufficientProgress")):
        return sol
    detail = "; ".join(sol.diagnosis)
    if sol.status == INFEASIBLE:
        raise Infeasible(f"{what} is infeasible ({detail})", binding=sol.diagnosis)
    if sol.status == ITERATION_LIMIT:
        raise IterationLimit(f"{what}: iteration limit reached")
    raise NumericalFailure(f"{what}: {detail or sol.solver_status}")


# ---------------------------------------------------------------------------
# debug dump


def _fmt_array(a):
    a = np.atleast_1d(np.asarray(a))
    flat = " ".join(f"{complex(v).real:.17g}{complex(v).imag:+.17g}j" for v in a.reshape(-1))
    return f"shape={a.shape} [{flat}]"


def _fmt_term(t):
    if isinstance(t, Trace):
        return f"trace {t.block} C={_fmt_array(t.C)}"
    if isinstance(t, Linear):
        return f"linear {t.block} c={_fmt_array(t.c)}"
    if isinstance(t, Scalar):
        return f"scalar {t.block} coef={t.coef:.17g}"
    if isinstance(t, Quad):
        return f"quad {t.block} A={_fmt_array(t.A)}"
    return f"exp {t.block} coef={t.coef:.17g}"


def dump(program: ConicProgram) -> str:
    """Line-oriented text dump of a program for offline inspection.

    Format::

        program <name>
        block hermitian|vector|vector-real|vector-nonneg|scalar <name> <dim>
        maximize constant=<c>
          term ...
        constraint <name> <sense> <rhs>
          term ...
        fixed <block> <index> <value>
    """
    lines = [f"program {program.name}"]
    for b in program.blocks:
        if isinstance(b, HermitianBlock):
            lines.append(f"block hermitian {b.name} {b.dim}")
        elif isinstance(b, VectorBlock):
            kind = "vector-nonneg" if b.nonneg else ("vector-real" if b.real else "vector")
            lines.append(f"block {kind} {b.name} {b.dim}")
        else:
            lines.append(f"block scalar {b.name} 1")
    lines.append(f"maximize constant={program.objective_constant:.17g}")
    lines += ["  " + _fmt_term(t) for t in program.objective]
    for k, c in enumerate(program.constraints):
        lines.append(f"constraint {c.name or 'c%d' % k} {c.sense} {c.rhs:.17g}")
        lines += ["  " + _fmt_term(t) for t in c.terms]
    for f in program.fixed:
        lines.append(f"fixed {f.block} {tuple(np.atleast_1d(f.index).tolist())} {complex(f.value)}")
    return "\n".join(lines) + "\n"
