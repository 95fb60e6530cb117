"""Averaged functions g_i and the y_i recurrence.

The order-i averaged function of a T-periodic standard-form system is

    g_i(z) = Y(T,z)^{-1} y_i(T,z) / i!

where y_i solves a linear Cauchy problem along the unperturbed orbit:

    y_i' = A(t) y_i + B_i(t),   y_i(0) = 0,   A(t) = dF_0/dx(t, x(t,z,0)),

and B_i collects derivative tensors of F_0..F_i applied to symmetric products
of the lower-order y_j, with partition coefficients.  The whole chain
(x, Y, y_1..y_k) is integrated as one augmented ODE, which avoids quadrature
against interpolated dense output; the iterated-integral form is kept as an
independent cross-check path (`y_functions_quadrature`).

Two encodings of B_i exist on purpose: `partition_y_integrand` generates the
terms from the partition tables, while `explicit_y_integrand` holds the
explicit order-by-order expansions as literal tables.  Tests require the two
to agree to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .flow import DenseTrajectory, IntegratorConfig, _error_estimate, _run_solver
from .tensor import partitions_S, partitions_Sprime

__all__ = [
    "AveragedSeries", "y_functions", "averaged_functions",
    "partition_y_integrand", "explicit_y_integrand", "y_functions_quadrature",
    "is_effectively_zero", "ZERO_DETECTION_RELATIVE",
]

MAX_K = 5

# a function sampled on a grid counts as identically zero below this fraction
# of the dominating scale
ZERO_DETECTION_RELATIVE = 1e-8


def is_effectively_zero(values, scale):
    values = np.asarray(values, dtype=float)
    scale = max(float(scale), 1e-300)
    return float(np.max(np.abs(values), initial=0.0)) <= ZERO_DETECTION_RELATIVE * scale


# ---------------------------------------------------------------------------
# term plans
#
# A term is (field_index, deriv_order, ((j, mult), ...), float_coefficient);
# the integrand of y_i is the sum of coefficient * d^L F_field (x) applied to
# the product of y_j^mult factors.  Coefficients carry the i! prefactor.

def _partition_plan(i):
    terms = [(i, 0, (), float(factorial(i)))]
    for l in range(1, i):
        for term in partitions_S(l):
            terms.append((i - l, term.order, term.factors,
                          float(factorial(i) * term.coefficient)))
    if i >= 2:
        for term in partitions_Sprime(i):
            terms.append((0, term.order, term.factors,
                          float(factorial(i) * term.coefficient)))
    return terms


_PARTITION_PLANS = {i: _partition_plan(i) for i in range(1, MAX_K + 1)}

# Explicit expansions, one literal table per order: (coeff, field, L, y-factors).
# Hand-expanded from the recurrence and kept as integers; the test suite
# cross-validates every coefficient against the partition-generated path and
# against eps-derivatives of the actual flow.
_EXPLICIT_Y_TERMS = {
    1: [(1, 1, 0, ())],
    2: [(2, 2, 0, ()), (2, 1, 1, ((1, 1),)), (1, 0, 2, ((1, 2),))],
    3: [(6, 3, 0, ()), (6, 2, 1, ((1, 1),)), (3, 1, 2, ((1, 2),)),
        (3, 1, 1, ((2, 1),)), (3, 0, 2, ((1, 1), (2, 1))), (1, 0, 3, ((1, 3),))],
    4: [(24, 4, 0, ()), (24, 3, 1, ((1, 1),)), (12, 2, 2, ((1, 2),)),
        (12, 2, 1, ((2, 1),)), (12, 1, 2, ((1, 1), (2, 1))), (4, 1, 3, ((1, 3),)),
        (4, 1, 1, ((3, 1),)), (3, 0, 2, ((2, 2),)), (4, 0, 2, ((1, 1), (3, 1))),
        (6, 0, 3, ((1, 2), (2, 1))), (1, 0, 4, ((1, 4),))],
    5: [(120, 5, 0, ()), (120, 4, 1, ((1, 1),)), (60, 3, 2, ((1, 2),)),
        (60, 3, 1, ((2, 1),)), (60, 2, 2, ((1, 1), (2, 1))), (20, 2, 3, ((1, 3),)),
        (20, 2, 1, ((3, 1),)), (20, 1, 2, ((1, 1), (3, 1))), (15, 1, 2, ((2, 2),)),
        (30, 1, 3, ((1, 2), (2, 1))), (5, 1, 4, ((1, 4),)), (5, 1, 1, ((4, 1),)),
        (10, 0, 2, ((2, 1), (3, 1))), (5, 0, 2, ((1, 1), (4, 1))),
        (15, 0, 3, ((1, 1), (2, 2))), (10, 0, 3, ((1, 2), (3, 1))),
        (10, 0, 4, ((1, 3), (2, 1))), (1, 0, 5, ((1, 5),))],
}


def _eval_terms(terms, tensors, yvals, dim=None):
    """Sum coefficient * tensor(field, L) applied to y-factors.

    ``tensors[(field, L)]`` holds SymTensor objects; identically zero ones may
    be omitted from the dict.  ``yvals[j]`` holds the y_j vectors.
    """
    out = None
    for field_idx, L, factors, coeff in terms:
        tens = tensors.get((field_idx, L))
        if tens is None:
            continue
        contrib = coeff * tens.apply([(yvals[j], m) for j, m in factors])
        out = contrib if out is None else out + contrib
    if out is None:
        if dim is None and tensors:
            dim = next(iter(tensors.values())).codomain_dim
        if dim is None:
            raise ValueError("no ingredient tensors supplied")
        out = np.zeros(dim)
    return out


def partition_y_integrand(i, tensors, yvals, dim=None):
    """B_i(t) assembled from the partition tables (the production path)."""
    if not 1 <= i <= MAX_K:
        raise ValueError(f"order must be in 1..{MAX_K}")
    return _eval_terms(_PARTITION_PLANS[i], tensors, yvals, dim)


def explicit_y_integrand(i, tensors, yvals, dim=None):
    """B_i(t) from the literal order-by-order tables (the oracle path)."""
    if not 1 <= i <= MAX_K:
        raise ValueError(f"order must be in 1..{MAX_K}")
    terms = [(f, L, fac, float(c)) for c, f, L, fac in _EXPLICIT_Y_TERMS[i]]
    return _eval_terms(terms, tensors, yvals, dim)


# ---------------------------------------------------------------------------
# augmented integration

def _stack_table(series, k):
    """Compiled tensor stacks and the orders each field needs: F_0 up to k,
    F_m up to k - m."""
    stacks = {}
    for m in range(0, k + 1):
        max_l = k if m == 0 else k - m
        stacks[m] = series.tensor_stack(m, max_l)
    return stacks


def _tensor_dict(stacks, flats, k):
    tensors = {}
    for m, stack in stacks.items():
        top = k if m == 0 else k - m
        for L in range(0, top + 1):
            if stack.order_is_zero.get(L, False):
                continue
            tensors[(m, L)] = stack.tensor(L, flats[m])
    return tensors


@dataclass
class AugmentedResult:
    """Dense (x, Y, y_1..y_k) over one period plus endpoint values."""

    traj: DenseTrajectory
    k: int

    def y(self, i, t):
        n = self.traj.dim
        if not 1 <= i <= self.k:
            raise ValueError("order out of range")
        u = self.traj.augmented(t)
        off = n + n * n + (i - 1) * n
        return u[off:off + n]

    def y0(self, t):
        """y_0(t,z) = x(t,z,0) - z."""
        return self.traj.x(t) - self.traj.z

    @property
    def yT(self):
        return [self.y(i, self.traj.period) for i in range(1, self.k + 1)]


class _RhsPlan:
    """Precompiled right-hand side of the augmented (x, Y, y_1..y_k) system.

    Works on raw packed-entry arrays with precomputed index tables so the
    integrator loop allocates no tensor objects.
    """

    def __init__(self, series, k):
        from .tensor import _apply_tables
        self.n = n = series.dim
        self.k = k
        self.p = series.param_tuple
        self.stacks = _stack_table(series, k)
        self.a_zero = self.stacks[0].order_is_zero.get(1, False)
        self.layout = {}
        for m, stack in self.stacks.items():
            top = k if m == 0 else k - m
            for L in range(0, top + 1):
                if stack.order_is_zero.get(L, False):
                    continue
                start, rows = stack._layout[L]
                tup, idx = (None, None) if L == 0 else _apply_tables(n, L)
                self.layout[(m, L)] = (start, rows, tup, idx)
        self.plans = {
            i: [t for t in _PARTITION_PLANS[i] if (t[0], t[1]) in self.layout]
            for i in range(1, k + 1)
        }

    def _entries(self, flats, m, L):
        start, rows, _, _ = self.layout[(m, L)]
        return flats[m][start:start + rows * self.stacks[m].q].reshape(rows, self.stacks[m].q)

    def rhs(self, t, u):
        n, k = self.n, self.k
        x = u[:n]
        flats = {m: np.asarray(stack.eval_all(t, x, self.p))
                 for m, stack in self.stacks.items()}
        du = np.empty_like(u)
        du[:n] = flats[0][:n]
        if self.a_zero:
            A = None
            du[n:n + n * n] = 0.0
        else:
            A = self._entries(flats, 0, 1).T
            Y = u[n:n + n * n].reshape(n, n)
            du[n:n + n * n] = (A @ Y).ravel()
        base = n + n * n
        yvals = [u[base + j * n: base + (j + 1) * n] for j in range(k)]
        for i in range(1, k + 1):
            B = np.zeros(n)
            for m, L, factors, coeff in self.plans[i]:
                start, rows, tup, idx = self.layout[(m, L)]
                entries = self._entries(flats, m, L)
                if L == 0:
                    B += coeff * entries[0]
                    continue
                vecs = []
                for j, mult in factors:
                    vecs.extend([yvals[j - 1]] * mult)
                prods = vecs[0][tup[:, 0]]
                for s in range(1, L):
                    prods = prods * vecs[s][tup[:, s]]
                agg = np.bincount(idx, weights=prods, minlength=rows)
                B += coeff * (agg @ entries)
            off = base + (i - 1) * n
            du[off:off + n] = B if A is None else A @ yvals[i - 1] + B
        return du


def y_functions(series, z, k, config=None, integrand=partition_y_integrand):
    """Integrate x, Y and y_1..y_k in one pass from initial condition z.

    ``integrand`` selects the B_i encoding (partition-generated by default;
    the literal table oracle can be swapped in for cross-checks).  The
    default encoding runs through a precompiled plan.
    """
    config = config or IntegratorConfig()
    if not 1 <= k <= MAX_K:
        raise ValueError(f"order k must be in 1..{MAX_K}")
    if k > series.order:
        raise ValueError(f"series only carries fields up to order {series.order}")
    z = np.asarray(z, dtype=float)
    n = series.dim
    if integrand is partition_y_integrand:
        cache = getattr(series, "_rhs_plans", None)
        if cache is None:
            cache = series._rhs_plans = {}
        plan = cache.get(k)
        if plan is None:
            plan = cache[k] = _RhsPlan(series, k)
        rhs = plan.rhs
    else:
        p = series.param_tuple
        stacks = _stack_table(series, k)
        a_zero = stacks[0].order_is_zero.get(1, False)

        def rhs(t, u):
            x = u[:n]
            flats = {m: stacks[m].eval_all(t, x, p) for m in range(k + 1)}
            tensors = _tensor_dict(stacks, flats, k)
            du = np.empty_like(u)
            du[:n] = flats[0][:n]
            if a_zero:
                A = None
                du[n:n + n * n] = 0.0
            else:
                A = tensors[(0, 1)].to_dense()
                Y = u[n:n + n * n].reshape(n, n)
                du[n:n + n * n] = (A @ Y).ravel()
            yvals = {j: u[n + n * n + (j - 1) * n: n + n * n + j * n]
                     for j in range(1, k + 1)}
            for i in range(1, k + 1):
                off = n + n * n + (i - 1) * n
                B = integrand(i, tensors, yvals, dim=n)
                du[off:off + n] = B if A is None else A @ yvals[i] + B
            return du

    u0 = np.concatenate([z, np.eye(n).ravel(), np.zeros(k * n)])
    sol = _run_solver(rhs, u0, series.period, config)
    traj = DenseTrajectory(z=z, period=series.period, config=config,
                           _sol=sol.sol, dim=n, has_Y=True, extra=k * n)
    traj.periodicity_defect = float(np.linalg.norm(traj.xT - z))
    traj.error_estimate = _error_estimate(config, float(np.max(np.abs(sol.y))))
    return AugmentedResult(traj=traj, k=k)


@dataclass
class AveragedSeries:
    """g_0..g_k at one base point, with the endpoint data they came from."""

    z: np.ndarray
    k: int
    g: list                      # g[i] in R^n, i = 0..k
    yT: list                     # y_i(T, z), i = 1..k
    Y0_inv: np.ndarray
    YT_inv: np.ndarray
    Dg0: np.ndarray              # exact Jacobian of g_0: Y(0)^-1 - Y(T)^-1
    error_estimate: float
    source: AugmentedResult = None

    def __post_init__(self):
        # construction identity: g_i = Y(T)^-1 y_i/i!
        for i in range(1, self.k + 1):
            assert np.allclose(self.g[i],
                               self.YT_inv @ self.yT[i - 1] / factorial(i),
                               rtol=1e-12, atol=1e-12)


def averaged_functions(series, z, k, config=None, integrand=partition_y_integrand):
    """Averaged functions g_1..g_k at z, plus g_0 and its exact Jacobian."""
    aug = y_functions(series, z, k, config, integrand=integrand)
    traj = aug.traj
    n = series.dim
    YT = traj.YT
    cond = np.linalg.cond(YT)
    if not np.isfinite(cond) or cond > 1e12:
        raise ArithmeticError(
            f"fundamental matrix at T is numerically singular (cond={cond:.2e})")
    YT_inv = np.linalg.inv(YT)
    g = [YT_inv @ (traj.xT - traj.z)]
    yT = aug.yT
    for i in range(1, k + 1):
        g.append(YT_inv @ yT[i - 1] / factorial(i))
    return AveragedSeries(z=np.asarray(z, dtype=float), k=k, g=g, yT=yT,
                          Y0_inv=np.eye(n), YT_inv=YT_inv,
                          Dg0=np.eye(n) - YT_inv,
                          error_estimate=traj.error_estimate, source=aug)


def y_functions_quadrature(series, z, k, config=None, n_nodes=400,
                           integrand=partition_y_integrand):
    """Cross-check path: y_i(T) = Y(T) * quadrature of Y(s)^-1 B_i(s).

    Consumes the dense augmented solution (so lower-order y_j come from the
    ODE) and re-derives each y_i(T) by Gauss-Legendre quadrature of the
    iterated-integral form.  Reduced accuracy by construction; used to check
    the augmented path, not to replace it.
    """
    aug = y_functions(series, z, k, config, integrand=integrand)
    traj = aug.traj
    n = series.dim
    p = series.param_tuple
    stacks = _stack_table(series, k)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    half = series.period / 2.0
    ts = half * (nodes + 1.0)
    acc = np.zeros((k, n))
    for t, wgt in zip(ts, weights):
        x = traj.x(t)
        flats = {m: stacks[m].eval_all(t, x, p) for m in range(k + 1)}
        tensors = _tensor_dict(stacks, flats, k)
        Yinv = np.linalg.inv(traj.Y(t))
        yvals = {j: aug.y(j, t) for j in range(1, k + 1)}
        for i in range(1, k + 1):
            acc[i - 1] += wgt * (Yinv @ integrand(i, tensors, yvals, dim=n))
    acc *= half
    YT = traj.YT
    return [YT @ acc[i - 1] for i in range(1, k + 1)]
