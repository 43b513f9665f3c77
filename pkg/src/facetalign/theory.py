"""Numerical checks of the two-objective gradient-conflict analysis.

Two equal-norm gradients with inner product -rho*G^2 model conflicting
objectives.  Uniform averaging then has squared gradient norm
G^2(1-rho)/2, which vanishes as the conflict grows, while reweighting the
violated objective by (1+lambda) keeps the norm at least
lambda^2 G^2 (1-rho^2).  The functions here construct such pairs exactly,
evaluate both closed forms against explicit vectors, and check the
smooth-descent progress inequality on a quadratic test loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Verification grids and tolerances, fixed in one place for reproducibility.
GRID_G = (0.5, 1.0, 2.0)
GRID_RHO = tuple(round(0.1 * i, 1) for i in range(10))          # 0.0 .. 0.9
GRID_RHO_BOUND = tuple(round(0.1 * i, 1) for i in range(1, 10))  # 0.1 .. 0.9
GRID_LAMBDA = tuple(float(i) for i in range(10))                 # 0 .. 9
IDENTITY_TOL = 1e-12
#: The norm lower bound is asserted only once the multiplier has grown to
#: at least this value (the large-weight regime of the argument).
BOUND_LAMBDA_MIN = 1.0


@dataclass(frozen=True)
class ConflictPair:
    """Two equal-norm vectors with a prescribed conflict coefficient."""

    g1: np.ndarray
    g2: np.ndarray
    norm: float
    rho: float


def make_conflict_pair(norm: float, rho: float, n: int = 2) -> ConflictPair:
    """Construct g1 = G e1 and g2 = G(-rho e1 + sqrt(1-rho^2) e2)."""
    if norm <= 0:
        raise ValueError("norm must be > 0")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    if n < 2:
        raise ValueError("need dimension >= 2")
    g1 = np.zeros(n)
    g1[0] = norm
    g2 = np.zeros(n)
    g2[0] = -rho * norm
    g2[1] = np.sqrt(1.0 - rho * rho) * norm
    return ConflictPair(g1=g1, g2=g2, norm=norm, rho=rho)


def conflict_coefficient(g1, g2) -> float:
    """-<g1, g2> / (|g1| |g2|); positive when the gradients oppose."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    n1 = float(np.linalg.norm(g1))
    n2 = float(np.linalg.norm(g2))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("conflict coefficient undefined for a zero vector")
    return float(-(g1 @ g2) / (n1 * n2))


def uniform_grad_norm_sq(g1, g2) -> tuple[float, float]:
    """Squared norm of the uniform-average gradient.

    Returns (exact, closed_form): the exact value |(g1+g2)/2|^2 and the
    closed form G^2(1-rho)/2 evaluated from the measured mean norm and
    conflict coefficient.  The two agree when |g1| = |g2|; for unequal
    norms the exact quarter-expansion is the meaningful quantity.
    """
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    exact = float(np.sum(((g1 + g2) / 2.0) ** 2))
    g_mean = (float(np.linalg.norm(g1)) + float(np.linalg.norm(g2))) / 2.0
    rho = conflict_coefficient(g1, g2)
    closed = 0.5 * g_mean * g_mean * (1.0 - rho)
    return exact, closed


def lag_grad_norm_sq(
    g1, g2, lambda1: float, lambda2: float = 0.0
) -> tuple[float, float, float]:
    """Squared norm of the reweighted gradient (1+l1) g1 + (1+l2) g2.

    Returns (exact, expansion, lower_bound) where the expansion
    G^2[(1+l1)^2 + 1 - 2 rho (1+l1)] matches exactly when lambda2 = 0, and
    the bound lambda1^2 G^2 (1-rho^2) holds in the large-multiplier regime
    (asserted for lambda1 >= BOUND_LAMBDA_MIN).
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("multipliers must be >= 0")
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    combined = (1.0 + lambda1) * g1 + (1.0 + lambda2) * g2
    exact = float(combined @ combined)
    g_mean = (float(np.linalg.norm(g1)) + float(np.linalg.norm(g2))) / 2.0
    rho = conflict_coefficient(g1, g2)
    w = 1.0 + lambda1
    expansion = g_mean * g_mean * (w * w + 1.0 - 2.0 * rho * w)
    lower_bound = lambda1 * lambda1 * g_mean * g_mean * (1.0 - rho * rho)
    return exact, expansion, lower_bound


def smoothness_progress_check(
    l_const: float, theta, eta: float
) -> tuple[float, float]:
    """One descent step on the quadratic L(x) = l_const |x|^2 / 2.

    Returns (measured progress, guaranteed progress eta/2 |grad|^2); the
    smooth-descent inequality requires measured >= guaranteed whenever
    eta <= 1/l_const.
    """
    if l_const <= 0:
        raise ValueError("l_const must be > 0")
    if eta > 1.0 / l_const:
        raise ValueError("step size violates eta <= 1/l_const")
    theta = np.asarray(theta, dtype=float)

    def loss(x):
        return 0.5 * l_const * float(x @ x)

    grad = l_const * theta
    measured = loss(theta) - loss(theta - eta * grad)
    guaranteed = 0.5 * eta * float(grad @ grad)
    return measured, guaranteed


def speedup_indicator(rho: float, lambda1: float) -> float:
    """Per-step progress ratio of the reweighted vs uniform gradient norms.

    [(1+l1)^2 + 1 - 2 rho (1+l1)] / [2 (1-rho)]; equals 1 at lambda1 = 0
    and grows like 1/(1-rho) for fixed lambda1 as the conflict increases.
    An indicative scaling, not a convergence rate.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    if lambda1 < 0:
        raise ValueError("lambda1 must be >= 0")
    w = 1.0 + lambda1
    return (w * w + 1.0 - 2.0 * rho * w) / (2.0 * (1.0 - rho))


# ---------------------------------------------------------------------------
# Grid report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRow:
    norm: float
    rho: float
    lambda1: float
    uniform_exact: float
    uniform_closed: float
    lag_exact: float
    lag_expansion: float
    lag_bound: float
    asserted: bool
    passed: bool


def verify_grid(
    norms=GRID_G,
    rhos=GRID_RHO_BOUND,
    lambdas=GRID_LAMBDA,
    tol: float = IDENTITY_TOL,
) -> list[GridRow]:
    """Evaluate both identities over a grid of constructed pairs.

    Rows with lambda1 below BOUND_LAMBDA_MIN are report-only: their bound
    is not asserted.  A row passes when the closed forms agree with the
    exact values to ``tol`` and, where asserted, the lower bound holds.
    """
    rows = []
    for g in norms:
        for rho in rhos:
            pair = make_conflict_pair(g, rho)
            u_exact, u_closed = uniform_grad_norm_sq(pair.g1, pair.g2)
            for lam in lambdas:
                l_exact, l_exp, l_bound = lag_grad_norm_sq(
                    pair.g1, pair.g2, lam, 0.0
                )
                asserted = lam >= BOUND_LAMBDA_MIN
                scale = max(1.0, g * g)
                ok = (
                    abs(u_exact - u_closed) <= tol * scale
                    and abs(l_exact - l_exp) <= tol * scale * (1 + lam) ** 2
                )
                if asserted:
                    ok = ok and l_bound <= l_exact + tol
                rows.append(
                    GridRow(
                        norm=g,
                        rho=rho,
                        lambda1=lam,
                        uniform_exact=u_exact,
                        uniform_closed=u_closed,
                        lag_exact=l_exact,
                        lag_expansion=l_exp,
                        lag_bound=l_bound,
                        asserted=asserted,
                        passed=ok,
                    )
                )
    return rows
