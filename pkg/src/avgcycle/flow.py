"""Integration of the unperturbed, variational and full perturbed systems.

Everything downstream consumes one of three integrations over [0, T]:

* ``integrate_unperturbed`` - x' = F_0(t, x);
* ``fundamental_matrix``    - the same system augmented with
  Y' = dF_0/dx(t, x) Y, Y(0) = Id;
* ``integrate_full``        - x' = sum_i eps^i F_i(t, x), optionally with its
  own variational matrix (used by the displacement Jacobian).

The actual stepping is delegated to scipy's explicit Runge-Kutta DOP853 with
dense output; tolerances default to 1e-10/1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

__all__ = ["IntegratorConfig", "DenseTrajectory", "IntegrationError",
           "integrate_unperturbed", "fundamental_matrix", "integrate_full"]


class IntegrationError(RuntimeError):
    """Integration failed: blow-up, step exhaustion or solver breakdown."""

    def __init__(self, message, t_fail=None):
        super().__init__(message)
        self.t_fail = t_fail


@dataclass(frozen=True)
class IntegratorConfig:
    """Runge-Kutta settings; ``method`` must be an explicit RK of order >= 5
    with dense output (DOP853 or RK45)."""

    method: str = "DOP853"
    rtol: float = 1e-10
    atol: float = 1e-10
    max_steps: int = 100_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method not in ("DOP853", "RK45"):
            raise ValueError("method must be DOP853 or RK45")

    def tighter(self, factor):
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


@dataclass
class DenseTrajectory:
    """Dense solution over [0, T], optionally with the fundamental matrix.

    ``x(t)`` interpolates the state; when the variational block was
    integrated, ``Y(t)`` interpolates the fundamental matrix normalised to
    the identity at t = 0.
    """

    z: np.ndarray
    period: float
    config: IntegratorConfig
    _sol: object
    dim: int
    has_Y: bool = False
    extra: int = 0                      # trailing augmented components
    periodicity_defect: float = field(default=np.nan)
    error_estimate: float = field(default=np.nan)

    def x(self, t):
        return self._sol(t)[: self.dim]

    def Y(self, t):
        if not self.has_Y:
            raise ValueError("trajectory carries no fundamental matrix")
        n = self.dim
        flat = self._sol(t)[n:n + n * n]
        return flat.reshape(n, n)

    def augmented(self, t):
        """Full augmented state vector at time t."""
        return self._sol(t)

    @property
    def xT(self):
        return self.x(self.period)

    @property
    def YT(self):
        return self.Y(self.period)


def _run_solver(rhs, y0, period, config, dense=True):
    sol = solve_ivp(rhs, (0.0, period), y0, method=config.method,
                    rtol=config.rtol, atol=config.atol, dense_output=dense)
    if not sol.success:
        raise IntegrationError(f"integrator failed: {sol.message}",
                               t_fail=sol.t[-1] if sol.t.size else 0.0)
    if sol.t.size > config.max_steps:
        raise IntegrationError(
            f"step budget exceeded ({sol.t.size} > {config.max_steps})")
    if not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationError("non-finite state (blow-up)", t_fail=sol.t[-1])
    return sol


def _error_estimate(config, scale):
    # order-of-magnitude bound used by downstream reports
    return 10.0 * (config.rtol * scale + config.atol)


def integrate_unperturbed(series, z, config=None):
    """Integrate x' = F_0(t, x) from z over one period with dense output."""
    config = config or IntegratorConfig()
    z = np.asarray(z, dtype=float)
    n = series.dim
    stack = series.tensor_stack(0, 0)
    p = series.param_tuple

    def rhs(t, x):
        return stack.eval_all(t, x, p)[:n]

    sol = _run_solver(rhs, z, series.period, config)
    traj = DenseTrajectory(z=z, period=series.period, config=config,
                           _sol=sol.sol, dim=n)
    traj.periodicity_defect = float(np.linalg.norm(traj.xT - z))
    traj.error_estimate = _error_estimate(config, float(np.max(np.abs(sol.y))))
    return traj


def fundamental_matrix(series, traj_or_z, config=None):
    """Integrate x and the variational matrix Y jointly; Y(0) = Id.

    Accepts either an initial condition or an existing trajectory (whose
    initial condition is reused); returns a new DenseTrajectory carrying Y.
    """
    config = config or IntegratorConfig()
    z = traj_or_z.z if isinstance(traj_or_z, DenseTrajectory) else \
        np.asarray(traj_or_z, dtype=float)
    n = series.dim
    stack = series.tensor_stack(0, 1)
    p = series.param_tuple
    a_zero = stack.order_is_zero.get(1, False)

    def rhs(t, u):
        x = u[:n]
        flat = stack.eval_all(t, x, p)
        dx = flat[:n]
        if a_zero:
            return np.concatenate([dx, np.zeros(n * n)])
        A = stack.tensor(1, flat).to_dense()
        Y = u[n:].reshape(n, n)
        return np.concatenate([dx, (A @ Y).ravel()])

    y0 = np.concatenate([z, np.eye(n).ravel()])
    sol = _run_solver(rhs, y0, series.period, config)
    traj = DenseTrajectory(z=z, period=series.period, config=config,
                           _sol=sol.sol, dim=n, has_Y=True)
    traj.periodicity_defect = float(np.linalg.norm(traj.xT - z))
    traj.error_estimate = _error_estimate(config, float(np.max(np.abs(sol.y))))
    return traj


def liouville_defect(series, traj, n_nodes=200):
    """|log det Y(T) - integral of trace dF_0/dx along the orbit|.

    Quadrature of the trace against the dense interpolant; a cheap
    independent consistency check on the variational integration.
    """
    n = series.dim
    stack = series.tensor_stack(0, 1)
    p = series.param_tuple
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    half = series.period / 2.0
    ts = half * (nodes + 1.0)
    total = 0.0
    for t, wgt in zip(ts, weights):
        x = traj.x(t)
        flat = stack.eval_all(t, x, p)
        A = stack.tensor(1, flat).to_dense()
        total += wgt * np.trace(A)
    total *= half
    sign, logdet = np.linalg.slogdet(traj.YT)
    if sign <= 0:
        raise IntegrationError("fundamental matrix lost orientation")
    return abs(logdet - total)


def integrate_full(series, z, eps, config=None, variational=False):
    """Integrate the full system x' = sum_i eps^i F_i(t, x) over one period.

    With ``variational=True`` the fundamental matrix of the *full* field is
    integrated alongside (initialised to the identity), which gives the
    displacement Jacobian downstream.
    """
    config = config or IntegratorConfig()
    z = np.asarray(z, dtype=float)
    n = series.dim
    k = series.order
    eps = float(eps)
    order_needed = 1 if variational else 0
    stacks = [series.tensor_stack(i, order_needed) for i in range(k + 1)]
    p = series.param_tuple
    powers = np.array([eps ** i for i in range(k + 1)])

    if variational:
        def rhs(t, u):
            x = u[:n]
            dx = np.zeros(n)
            A = np.zeros((n, n))
            for i in range(k + 1):
                if powers[i] == 0.0 and i > 0:
                    continue
                flat = stacks[i].eval_all(t, x, p)
                dx += powers[i] * np.asarray(flat[:n])
                if not stacks[i].order_is_zero.get(1, False):
                    A += powers[i] * stacks[i].tensor(1, flat).to_dense()
            Y = u[n:].reshape(n, n)
            return np.concatenate([dx, (A @ Y).ravel()])

        y0 = np.concatenate([z, np.eye(n).ravel()])
    else:
        def rhs(t, x):
            dx = np.zeros(n)
            for i in range(k + 1):
                if powers[i] == 0.0 and i > 0:
                    continue
                dx += powers[i] * np.asarray(stacks[i].eval_all(t, x, p)[:n])
            return dx

        y0 = z

    sol = _run_solver(rhs, y0, series.period, config)
    traj = DenseTrajectory(z=z, period=series.period, config=config,
                           _sol=sol.sol, dim=n, has_Y=variational)
    traj.periodicity_defect = float(np.linalg.norm(traj.xT - z))
    traj.error_estimate = _error_estimate(config, float(np.max(np.abs(sol.y))))
    return traj
