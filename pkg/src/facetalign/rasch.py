"""Many-facet Rasch calibration of binary rubric ratings.

Per dimension, the log-odds of a positive score decompose additively as

    log P(y=1)/P(y=0) = theta[model, question] - gamma[judge]
                        - delta[rubric] - phi[question]

with zero-mean constraints on the nuisance facets anchoring everything to a
common logit scale.  Parameters are estimated jointly by full-batch gradient
descent on the l2-regularized Bernoulli negative log-likelihood, with
step-halving backtracking so the objective never increases, and a zero-mean
projection after every step.  Standard errors come from the observed Fisher
information plus a configurable prior curvature floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import (
    SE_CAP,
    FacetParams,
    log1pexp,
    project_zero_mean,
    sigmoid,
)

__all__ = [
    "FacetParams",
    "FitConfig",
    "FitError",
    "FitResult",
    "project_zero_mean",
    "log_odds",
    "predict_prob",
    "nll",
    "grad_nll",
    "fit",
    "fit_all_dimensions",
    "fisher_se",
]

_PROB_EPS = 1e-15


class FitError(RuntimeError):
    """Raised when the optimizer encounters a non-finite objective."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class FitConfig:
    """Fit hyperparameters; echoed verbatim into result files.

    The default fit is deterministic (zero initialization), so ``seed`` is
    only consumed by callers that build a random ``init`` for
    :func:`fit`.
    """

    l2_weight: float = 1e-4
    prior_curvature: float = 1.0
    step_size: float = 0.5
    max_iters: int = 2000
    grad_tol: float = 1e-6
    nll_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")
        if self.prior_curvature < 0:
            raise ValueError("prior_curvature must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.nll_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class FitResult:
    params: FacetParams
    ses: FacetParams
    nll_trace: tuple
    converged: bool
    iters_used: int
    config: FitConfig = field(default_factory=FitConfig)
    dimension: str = ""


# ---------------------------------------------------------------------------
# Pointwise model
# ---------------------------------------------------------------------------

def log_odds(params: FacetParams, model, question, judge, rubric) -> float:
    """theta - gamma - delta - phi for one (model, question, judge, rubric)."""
    return (
        params.theta_at(model, question)
        - float(params.gamma[params.judge_index(judge)])
        - float(params.delta[params.rubric_index(rubric)])
        - float(params.phi[params.question_index(question)])
    )


def predict_prob(params: FacetParams, model, question, judge, rubric) -> float:
    """Logistic link over log_odds, clipped strictly inside (0, 1)."""
    p = sigmoid(log_odds(params, model, question, judge, rubric))
    return float(np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS))


# ---------------------------------------------------------------------------
# Vectorized design
# ---------------------------------------------------------------------------

class _Design:
    """Integer index arrays for one dimension's observations."""

    def __init__(self, corpus, params: FacetParams):
        obs = corpus.observations
        if not obs:
            raise ValueError("empty corpus slice")
        dims = {o.dimension for o in obs}
        if len(dims) != 1:
            raise ValueError(f"expected a single-dimension slice, got {sorted(dims)}")
        self.dimension = dims.pop()
        self.mi = np.array([params.model_index(o.model_id) for o in obs])
        self.qi = np.array([params.question_index(o.question_id) for o in obs])
        self.ji = np.array([params.judge_index(o.judge_id) for o in obs])
        self.ri = np.array([params.rubric_index(o.rubric_id) for o in obs])
        self.y = np.array([o.score for o in obs], dtype=float)
        self.shape = (len(params.models), len(params.questions))
        self.n_judges = len(params.judges)
        self.n_rubrics = len(params.rubrics)
        self.cell_mask = np.zeros(self.shape, dtype=bool)
        self.cell_mask[self.mi, self.qi] = True

    def eta(self, params: FacetParams) -> np.ndarray:
        return (
            params.theta[self.mi, self.qi]
            - params.gamma[self.ji]
            - params.delta[self.ri]
            - params.phi[self.qi]
        )

    def curvature_bounds(self, l2_weight: float):
        """Per-coordinate upper bounds on the objective curvature.

        Bernoulli curvature per observation is at most 1/4, so
        0.25 * (observations touching the parameter) + 2 * l2 bounds the
        diagonal Hessian.  Used as a fixed diagonal step scaling: judge
        and rubric coordinates aggregate hundreds of observations while a
        cell aggregates a handful, and unscaled descent is stalled by that
        curvature ratio.
        """
        ones = np.ones(len(self.y))
        c_theta = np.zeros(self.shape)
        np.add.at(c_theta, (self.mi, self.qi), ones)
        c_gamma = np.bincount(self.ji, minlength=self.n_judges).astype(float)
        c_delta = np.bincount(self.ri, minlength=self.n_rubrics).astype(float)
        c_phi = np.bincount(self.qi, minlength=self.shape[1]).astype(float)
        reg = 2.0 * l2_weight
        return (
            0.25 * c_theta + reg,
            0.25 * c_gamma + reg,
            0.25 * c_delta + reg,
            0.25 * c_phi + reg,
        )


def _params_for_corpus(corpus) -> FacetParams:
    dim = corpus.dimensions[0]
    cell_mask = np.zeros((len(corpus.models), len(corpus.questions)), dtype=bool)
    midx = {m: i for i, m in enumerate(corpus.models)}
    qidx = {q: i for i, q in enumerate(corpus.questions)}
    for o in corpus.observations:
        cell_mask[midx[o.model_id], qidx[o.question_id]] = True
    return FacetParams.zeros(
        corpus.models,
        corpus.questions,
        corpus.judges,
        corpus.rubrics_by_dim[dim],
        cell_mask=cell_mask,
    )


def nll(params: FacetParams, corpus, l2_weight: float) -> float:
    """Negative Bernoulli log-likelihood plus l2_weight * squared norm."""
    design = _Design(corpus, params)
    return _nll_design(design, params, l2_weight)


def _nll_design(design: _Design, params: FacetParams, l2_weight: float) -> float:
    eta = design.eta(params)
    # softplus(eta) - y*eta equals -log p(y) for a Bernoulli-logit model
    data_term = float(np.sum(log1pexp(eta) - design.y * eta))
    theta_active = params.theta[design.cell_mask]
    penalty = l2_weight * (
        float(theta_active @ theta_active)
        + float(params.gamma @ params.gamma)
        + float(params.delta @ params.delta)
        + float(params.phi @ params.phi)
    )
    return data_term + penalty


def grad_nll(params: FacetParams, corpus, l2_weight: float) -> FacetParams:
    """Analytic gradient of :func:`nll`, in FacetParams shape.

    Missing theta cells carry NaN, mirroring the absent parameters.
    """
    design = _Design(corpus, params)
    return _grad_design(design, params, l2_weight)


def _grad_design(design: _Design, params: FacetParams, l2_weight: float) -> FacetParams:
    eta = design.eta(params)
    resid = sigmoid(eta) - design.y

    d_theta = np.zeros(design.shape)
    np.add.at(d_theta, (design.mi, design.qi), resid)
    d_theta += 2.0 * l2_weight * np.where(design.cell_mask, params.theta, 0.0)
    d_theta = np.where(design.cell_mask, d_theta, np.nan)

    d_gamma = np.zeros(len(params.judges))
    np.add.at(d_gamma, design.ji, -resid)
    d_gamma += 2.0 * l2_weight * params.gamma

    d_delta = np.zeros(len(params.rubrics))
    np.add.at(d_delta, design.ri, -resid)
    d_delta += 2.0 * l2_weight * params.delta

    d_phi = np.zeros(len(params.questions))
    np.add.at(d_phi, design.qi, -resid)
    d_phi += 2.0 * l2_weight * params.phi

    return params.replace(theta=d_theta, gamma=d_gamma, delta=d_delta, phi=d_phi)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _center(a: np.ndarray) -> np.ndarray:
    return a - a.mean() if a.size else a


def fit(corpus, config: FitConfig | None = None, init: FacetParams | None = None) -> FitResult:
    """Jointly estimate all facet parameters for one dimension slice.

    Projected gradient descent with a fixed diagonal curvature scaling:
    each iteration steps all parameters, re-centers the nuisance facets,
    and backtracks (halving up to 30 times) until the objective strictly
    decreases.  Converged when the projected-gradient max-abs and the
    relative objective change both fall below their tolerances, or when no
    step size yields a float-representable decrease (the numerical floor).
    The returned parameters have the flat theta/phi directions resolved to
    the penalty-optimal representative.
    """
    config = config or FitConfig()
    if not corpus.observations:
        raise ValueError("empty corpus slice")
    if len(corpus.dimensions) != 1:
        raise ValueError("fit expects a single-dimension slice")

    params = _params_for_corpus(corpus)
    design = _Design(corpus, params)
    mask = design.cell_mask

    if init is not None:
        params = project_zero_mean(
            params.replace(
                theta=np.where(mask, np.nan_to_num(init.theta), np.nan),
                gamma=init.gamma.copy(),
                delta=init.delta.copy(),
                phi=init.phi.copy(),
            )
        )

    current = _nll_design(design, params, config.l2_weight)
    if not np.isfinite(current):
        raise FitError(0, f"non-finite objective {current}")
    trace = [current]
    converged = False
    iters = 0
    step = config.step_size
    # fixed diagonal scaling by each coordinate's curvature bound keeps the
    # step well-conditioned across facets with very different data volume
    s_theta, s_gamma, s_delta, s_phi = design.curvature_bounds(config.l2_weight)

    for it in range(1, config.max_iters + 1):
        grad = _grad_design(design, params, config.l2_weight)
        g_theta = np.where(mask, grad.theta, 0.0)
        # convergence is measured on the projected gradient: the components
        # the zero-mean projection removes can never be descended
        pg_max = max(
            float(np.max(np.abs(g_theta))) if g_theta.size else 0.0,
            float(np.max(np.abs(_center(grad.gamma)))) if grad.gamma.size else 0.0,
            float(np.max(np.abs(_center(grad.delta)))) if grad.delta.size else 0.0,
            float(np.max(np.abs(_center(grad.phi)))) if grad.phi.size else 0.0,
        )
        if it > 1:
            rel_change = (trace[-2] - trace[-1]) / max(1.0, abs(trace[-2]))
            if pg_max <= config.grad_tol and rel_change <= config.nll_tol:
                converged = True
                break

        step = min(config.step_size, 2.0 * step)
        accepted = False
        for _ in range(31):
            candidate = project_zero_mean(
                params.replace(
                    theta=np.where(
                        mask, params.theta - step * g_theta / s_theta, np.nan
                    ),
                    gamma=params.gamma - step * grad.gamma / s_gamma,
                    delta=params.delta - step * grad.delta / s_delta,
                    phi=params.phi - step * grad.phi / s_phi,
                )
            )
            value = _nll_design(design, candidate, config.l2_weight)
            if not np.isfinite(value):
                raise FitError(it, f"non-finite objective {value}")
            if value < current:
                accepted = True
                break
            step *= 0.5
        iters = it
        if not accepted:
            # no step size yields a float-representable decrease: the
            # objective is at its numerical floor, report convergence
            converged = True
            trace.append(current)
            break
        params = candidate
        current = value
        trace.append(current)

    params = _canonicalize_gauge(params, mask)
    final = _nll_design(design, params, config.l2_weight)
    if final < trace[-1]:
        trace.append(final)

    ses = fisher_se(params, corpus, config.prior_curvature)
    return FitResult(
        params=params,
        ses=ses,
        nll_trace=tuple(trace),
        converged=converged,
        iters_used=iters,
        config=config,
        dimension=design.dimension,
    )


def _canonicalize_gauge(params: FacetParams, mask: np.ndarray) -> FacetParams:
    """Resolve the likelihood-invariant theta/phi split exactly.

    Shifting a question's theta cells and its phi by the same constant
    leaves every predicted probability unchanged; the l2 penalty picks the
    representative with sum(theta cells) + phi = 0 per question.  Descent
    approaches that split only slowly along the flat directions, so the
    final parameters are moved there in closed form, then phi is re-centered
    (with the global shift absorbed into theta) to restore the zero-mean
    constraint.  The objective can only decrease.
    """
    theta = params.theta.copy()
    phi = params.phi.copy()
    m_q = mask.sum(axis=0)
    theta_sums = np.where(mask, theta, 0.0).sum(axis=0)
    shift = -(theta_sums + phi) / (m_q + 1.0)
    theta = np.where(mask, theta + shift[None, :], np.nan)
    phi = phi + shift
    grand = phi.mean() if phi.size else 0.0
    phi -= grand
    theta = np.where(mask, theta - grand, np.nan)
    return params.replace(theta=theta, phi=phi)


def fisher_se(params: FacetParams, corpus, prior_curvature: float) -> FacetParams:
    """Per-parameter standard errors from observed Fisher information.

    SE = (sum of p(1-p) over the observations touching the parameter,
    plus ``prior_curvature``)^(-1/2).  Information sums too small to invert
    are reported as the SE_CAP sentinel.
    """
    design = _Design(corpus, params)
    eta = design.eta(params)
    p = sigmoid(eta)
    info = p * (1.0 - p)

    def se_of(total: np.ndarray) -> np.ndarray:
        total = total + prior_curvature
        out = np.full(total.shape, SE_CAP)
        ok = total > 1.0 / SE_CAP**2
        out[ok] = 1.0 / np.sqrt(total[ok])
        return out

    i_theta = np.zeros(design.shape)
    np.add.at(i_theta, (design.mi, design.qi), info)
    se_theta = np.where(design.cell_mask, se_of(i_theta), np.nan)

    i_gamma = np.zeros(len(params.judges))
    np.add.at(i_gamma, design.ji, info)
    i_delta = np.zeros(len(params.rubrics))
    np.add.at(i_delta, design.ri, info)
    i_phi = np.zeros(len(params.questions))
    np.add.at(i_phi, design.qi, info)

    return params.replace(
        theta=se_theta,
        gamma=se_of(i_gamma),
        delta=se_of(i_delta),
        phi=se_of(i_phi),
    )


def fit_all_dimensions(
    corpus, config: FitConfig | None = None
) -> dict[str, FitResult]:
    """Fit each dimension present in the corpus independently."""
    return {
        d: fit(corpus.slice_dimension(d), config) for d in corpus.dimensions
    }
