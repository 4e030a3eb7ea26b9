"""Entropic optimal transport between test features and label features.

Convention: the regularized objective is ``<C, P> - (1/epsilon) * H(P)``,
so the Gibbs kernel is ``exp(-epsilon * C)`` and *larger* epsilon means a
*sharper* (less entropic) coupling. All solver arithmetic is float64; at
epsilon = 90 with costs in [0, 2] the kernel spans exp(-180), so the
iterations run entirely in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featstore import FeatureMatrix

COSINE = "cosine"
L2 = "l2"

# After this many scaling iterations without convergence the solver switches
# to damped Newton steps on the dual potentials. Matrix-scaling converges
# linearly and can stall near degenerate instances; Newton reaches the same
# fixed point in a handful of steps.
_NEWTON_TRIGGER = 100
_NEWTON_MAX_STEPS = 50
_LINESEARCH_MAX_HALVINGS = 60


class SinkhornConvergenceError(RuntimeError):
    """Solver failed to reach the marginal tolerance within max_iter."""

    def __init__(self, iterations: int, marginal_error: float, tol: float):
        self.iterations = iterations
        self.marginal_error = marginal_error
        self.tol = tol
        super().__init__(
            f"no convergence after {iterations} iterations: "
            f"marginal error {marginal_error:.3e} >= tol {tol:.3e}"
        )


@dataclass(frozen=True)
class DiscreteMeasure:
    """Strictly positive mass vector summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError(f"weights must be a nonempty vector, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("weights contain NaN or infinite entries")
        if (w <= 0.0).any():
            raise ValueError("all weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum():.12f}, expected 1 +/- 1e-9")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteMeasure":
        if n < 1:
            raise ValueError("measure needs at least one atom")
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class CostMatrix:
    """Dense |X| x K transport-cost matrix with its metric tag."""

    values: np.ndarray
    metric_tag: str = COSINE

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("cost matrix contains NaN or infinite entries")
        if self.metric_tag not in (COSINE, L2):
            raise ValueError(f"unknown metric tag {self.metric_tag!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_pair(test: FeatureMatrix, text: FeatureMatrix) -> None:
    if test.dim != text.dim:
        raise ValueError(f"dimension mismatch: test dim {test.dim} vs text dim {text.dim}")
    if not test.normalized or not text.normalized:
        raise ValueError("cosine costs require unit-normalized inputs")


def cosine_cost(test: FeatureMatrix, text: FeatureMatrix) -> CostMatrix:
    """C[i, j] = 1 - <test_i, text_j> for unit-normalized rows."""
    _check_pair(test, text)
    sims = test.data.astype(np.float64) @ text.data.astype(np.float64).T
    # unit inputs bound the entries to [0, 2]; clip float dust at the ends
    return CostMatrix(np.clip(1.0 - sims, 0.0, 2.0), metric_tag=COSINE)


def l2_cost(test: FeatureMatrix, text: FeatureMatrix) -> CostMatrix:
    """Euclidean distance between unit rows: sqrt(2 - 2 cos)."""
    _check_pair(test, text)
    sims = test.data.astype(np.float64) @ text.data.astype(np.float64).T
    return CostMatrix(np.sqrt(np.clip(2.0 - 2.0 * sims, 0.0, 4.0)), metric_tag=L2)


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling with its convergence report.

    ``log_scalings`` holds the two dual scaling vectors in log form, i.e.
    ``coupling = exp(-epsilon * C + log_a[:, None] + log_b[None, :])``.
    ``iterations`` counts every update step taken (scaling and Newton).
    """

    coupling: np.ndarray
    epsilon: float
    iterations: int
    marginal_error: float
    log_scalings: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        p = np.ascontiguousarray(self.coupling, dtype=np.float64)
        p.flags.writeable = False
        object.__setattr__(self, "coupling", p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coupling.shape


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _lse_cols(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m[None, :]).sum(axis=0))


def _marginal_error(plan: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> float:
    return float(
        np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum()
    )


def _newton_phase(logK, u, v, mu, nu, tol, budget):
    """Damped Newton on the dual potentials; returns (u, v, steps_taken).

    The dual of the entropic problem is smooth and concave with Hessian
    [[diag(P1), P], [P^T, diag(P^T 1)]]; the constant-shift null direction
    is removed by pinning the last column potential.
    """
    n, m = logK.shape
    eye = np.eye(n + m - 1)
    steps = 0
    while steps < min(budget, _NEWTON_MAX_STEPS):
        plan = np.exp(logK + u[:, None] + v[None, :])
        r = plan.sum(axis=1)
        c = plan.sum(axis=0)
        err = float(np.abs(r - mu).sum() + np.abs(c - nu).sum())
        if err < tol:
            break
        g = np.concatenate([r - mu, c - nu])
        H = np.zeros((n + m, n + m))
        H[:n, :n] = np.diag(r)
        H[n:, n:] = np.diag(c)
        H[:n, n:] = plan
        H[n:, :n] = plan.T
        # sharp epsilon leaves many plan entries underflowed, so the
        # Hessian can be numerically singular; damp it until it solves
        ridge = 1e-14 * max(float(r.max()), float(c.max()), 1e-300)
        step = None
        for _ in range(6):
            try:
                step = np.linalg.solve(H[:-1, :-1] + ridge * eye, g[:-1])
                break
            except np.linalg.LinAlgError:
                ridge *= 100.0
        if step is None:
            break
        du = step[:n]
        dv = np.concatenate([step[n:], [0.0]])
        # backtracking line search on the marginal error
        t = 1.0
        improved = False
        for _ in range(_LINESEARCH_MAX_HALVINGS):
            log_try = logK + (u - t * du)[:, None] + (v - t * dv)[None, :]
            # a sane step keeps total mass near one; reject exploding ones
            if log_try.max() < 5.0:
                trial = np.exp(log_try)
                if _marginal_error(trial, mu, nu) < err:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
        u = u - t * du
        v = v - t * dv
        steps += 1
    return u, v, steps


def sinkhorn(
    cost: CostMatrix,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    epsilon: float,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> TransportPlan:
    """Solve the entropic OT problem by log-domain matrix scaling.

    Stops once the summed L1 deviation of both marginals drops below
    ``tol``; raises :class:`SinkhornConvergenceError` otherwise. The result
    is a pure function of the inputs (fixed reduction order, no RNG).
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    n, m = cost.shape
    if len(mu) != n or len(nu) != m:
        raise ValueError(
            f"measure sizes ({len(mu)}, {len(nu)}) do not match cost shape {cost.shape}"
        )

    logK = -epsilon * cost.values
    log_mu = np.log(mu.weights)
    log_nu = np.log(nu.weights)
    u = np.zeros(n)
    v = np.zeros(m)

    def assemble(u, v):
        return np.exp(logK + u[:, None] + v[None, :])

    iterations = 0
    err = np.inf
    next_newton = _NEWTON_TRIGGER
    while iterations < max_iter:
        u = log_mu - _lse_rows(logK + v[None, :])
        v = log_nu - _lse_cols(logK + u[:, None])
        iterations += 1
        err = _marginal_error(assemble(u, v), mu.weights, nu.weights)
        if err < tol:
            break
        if iterations >= next_newton:
            u, v, steps = _newton_phase(
                logK, u, v, mu.weights, nu.weights, tol, max_iter - iterations
            )
            iterations += steps
            # if Newton stalled, retry once the scaling phase has moved on
            next_newton = iterations + 2 * _NEWTON_TRIGGER
            err = _marginal_error(assemble(u, v), mu.weights, nu.weights)
            if err < tol:
                break

    plan = assemble(u, v)
    err = _marginal_error(plan, mu.weights, nu.weights)
    if err >= tol:
        raise SinkhornConvergenceError(iterations, err, tol)
    return TransportPlan(
        coupling=plan,
        epsilon=float(epsilon),
        iterations=iterations,
        marginal_error=err,
        log_scalings=(u, v),
    )


def plan_row_costs(plan: TransportPlan, cost: CostMatrix) -> np.ndarray:
    """Per-sample transported cost: row i of sum_j P[i,j] * C[i,j]."""
    if plan.shape != cost.shape:
        raise ValueError(f"plan shape {plan.shape} does not match cost shape {cost.shape}")
    return (plan.coupling * cost.values).sum(axis=1)


def plan_row_max(plan: TransportPlan) -> np.ndarray:
    """Largest transport mass per sample: max_j P[i,j]."""
    return plan.coupling.max(axis=1)
