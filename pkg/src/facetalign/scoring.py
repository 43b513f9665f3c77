"""Aggregate ratings into per-model scores and rank-level diagnostics.

Three scoring routes for the same corpus: raw proportions, per-judge
z-scores, and calibrated latent quality from the Rasch fits.  Peer is the
mean of the empathy and creativity scores, dignity the mean of the
anti-sycophancy and trustworthiness scores.  The statistics here (Friedman
chi-square, Kendall tau-b, Spearman rho, judge-perturbation bounds) back
the method-comparison and robustness checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .rasch import FitResult

PEER_DIMS = ("E", "C")
DIGNITY_DIMS = ("A", "T")


@dataclass(frozen=True)
class ModelScorecard:
    model_id: str
    method: str  # raw_prob | z_score | mfrm
    dim_scores: dict
    dim_ses: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)

    @property
    def peer(self) -> float | None:
        if all(d in self.dim_scores for d in PEER_DIMS):
            return (self.dim_scores["E"] + self.dim_scores["C"]) / 2.0
        return None

    @property
    def dignity(self) -> float | None:
        if all(d in self.dim_scores for d in DIGNITY_DIMS):
            return (self.dim_scores["A"] + self.dim_scores["T"]) / 2.0
        return None


@dataclass(frozen=True)
class StatReport:
    friedman_chi2: float = float("nan")
    friedman_p: float = float("nan")
    kendall_tau: float = float("nan")
    spearman_rho: float = float("nan")


# ---------------------------------------------------------------------------
# Per-model scores
# ---------------------------------------------------------------------------

def raw_prob(corpus, model: str, dimension: str) -> float:
    """Average proportion of satisfied rubric items for one model and
    dimension, pooled over questions, judges and rubric items."""
    scores = [
        o.score
        for o in corpus.observations
        if o.model_id == model and o.dimension == dimension
    ]
    if not scores:
        raise ValueError(f"no observations for ({model!r}, {dimension!r})")
    return float(np.mean(scores))


def z_score(
    corpus, model: str, dimension: str, population_variance: bool = True
) -> float:
    """Per-judge standardized score, averaged across judges.

    For each judge, responses (model-question pairs) get their mean rubric
    satisfaction; those response means are standardized across all
    responses the judge scored (population variance by default), the
    model's standardized values are averaged over its questions, and the
    result is averaged across judges.
    """
    per_judge: dict[str, dict[tuple, list]] = {}
    for o in corpus.observations:
        if o.dimension != dimension:
            continue
        per_judge.setdefault(o.judge_id, {}).setdefault(
            (o.model_id, o.question_id), []
        ).append(o.score)
    if not per_judge:
        raise ValueError(f"no observations for dimension {dimension!r}")

    judge_values = []
    for judge in sorted(per_judge):
        responses = per_judge[judge]
        if len(responses) < 2:
            raise ValueError(
                f"judge {judge!r} scored fewer than two responses"
            )
        keys = sorted(responses)
        means = np.array([np.mean(responses[k]) for k in keys])
        mu = means.mean()
        sd = means.std(ddof=0 if population_variance else 1)
        if sd == 0:
            raise ValueError(f"zero variance for judge {judge!r}")
        z = (means - mu) / sd
        model_z = [z[i] for i, k in enumerate(keys) if k[0] == model]
        if not model_z:
            raise ValueError(f"no observations for ({model!r}, {dimension!r})")
        judge_values.append(float(np.mean(model_z)))
    return float(np.mean(judge_values))


def mfrm_scorecard(fits: dict[str, FitResult], model: str) -> ModelScorecard:
    """Calibrated scorecard for one model from per-dimension fits.

    The dimension score is the unweighted mean of the model's cell
    estimates over the questions that have one; its SE is the RMS of the
    cell SEs divided by sqrt(coverage).
    """
    dim_scores, dim_ses, coverage = {}, {}, {}
    for dim in sorted(fits):
        result = fits[dim]
        params, ses = result.params, result.ses
        mi = params.model_index(model)  # KeyError when the model is absent
        row = params.theta[mi]
        mask = ~np.isnan(row)
        n = int(mask.sum())
        if n == 0:
            raise ValueError(f"model {model!r} has no cells in dimension {dim!r}")
        dim_scores[dim] = float(row[mask].mean())
        se_row = ses.theta[mi][mask]
        dim_ses[dim] = float(np.sqrt(np.sum(se_row**2)) / n)
        coverage[dim] = n
    return ModelScorecard(
        model_id=model,
        method="mfrm",
        dim_scores=dim_scores,
        dim_ses=dim_ses,
        coverage=coverage,
    )


def rating_scorecard(
    corpus, model: str, method: str, population_variance: bool = True
) -> ModelScorecard:
    """Uncalibrated scorecard (raw proportions or judge z-scores)."""
    if method == "raw_prob":
        fn = lambda d: raw_prob(corpus, model, d)
    elif method == "z_score":
        fn = lambda d: z_score(corpus, model, d, population_variance)
    else:
        raise ValueError(f"unknown method {method!r}")
    dim_scores = {}
    coverage = {}
    for dim in corpus.dimensions:
        dim_scores[dim] = fn(dim)
        coverage[dim] = len(
            {
                o.question_id
                for o in corpus.observations
                if o.model_id == model and o.dimension == dim
            }
        )
    if not dim_scores:
        raise ValueError("corpus has no dimensions")
    return ModelScorecard(
        model_id=model, method=method, dim_scores=dim_scores, coverage=coverage
    )


# ---------------------------------------------------------------------------
# Rank statistics
# ---------------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties resolved to the group average."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized upper incomplete
    gamma function."""
    if x < 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def friedman_test(scores) -> tuple[float, float]:
    """Friedman rank test over a (models x blocks) score matrix.

    Within each block the models are ranked with average ties; the
    chi-square statistic uses the standard tie correction and k-1 degrees
    of freedom.  A fully tied matrix yields (0, 1).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("scores must be a 2-D (models x blocks) matrix")
    k, n = scores.shape
    if k < 2 or n < 2:
        raise ValueError("need at least 2 models and 2 blocks")

    rank_sum = np.zeros(k)
    tie_term = 0.0
    for b in range(n):
        ranks = _average_ranks(scores[:, b])
        rank_sum += ranks
        _, counts = np.unique(scores[:, b], return_counts=True)
        tie_term += float(np.sum(counts**3 - counts))

    mean_ranks = rank_sum / n
    raw = 12.0 * n / (k * (k + 1)) * float(np.sum((mean_ranks - (k + 1) / 2.0) ** 2))
    correction = 1.0 - tie_term / (n * k * (k**2 - 1))
    if correction <= 0:
        return 0.0, 1.0
    chi2 = raw / correction
    return chi2, chi2_sf(chi2, k - 1)


def rank_stability(x, y) -> tuple[float, float]:
    """Kendall tau-b and Spearman rho between two score sequences."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D sequences of equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two points")

    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = dx[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))

    n0 = n * (n - 1) // 2
    _, cx = np.unique(x, return_counts=True)
    _, cy = np.unique(y, return_counts=True)
    n1 = float(np.sum(cx * (cx - 1) // 2))
    n2 = float(np.sum(cy * (cy - 1) // 2))
    denom = np.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        raise ValueError("tau-b undefined: a sequence is fully tied")
    tau = (concordant - discordant) / denom

    rx = _average_ranks(x)
    ry = _average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        raise ValueError("spearman undefined: a sequence is fully tied")
    rho = float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
    return float(tau), rho


def judge_perturbation_bound(
    gamma_new: float, n_judges_before: int, n_total: int
) -> tuple[float, float]:
    """Closed-form bounds for adding an (N-th) judge with severity
    ``gamma_new`` to a fitted panel.

    Returns (max shift of existing severities, expected shift of latent
    quality): |gamma_N|/(N-1) and |gamma_N|/(J(N-1)) with J judges before.
    """
    if n_total < 2:
        raise ValueError("need at least two judges in total")
    if n_judges_before < 1:
        raise ValueError("need at least one existing judge")
    g = abs(gamma_new)
    severity_bound = g / (n_total - 1)
    theta_bound = g / (n_judges_before * (n_total - 1))
    return severity_bound, theta_bound
