"""Facet parameter container shared by the calibration and synthesis code.

A :class:`FacetParams` holds one dimension's latent quality table together
with the three nuisance facets (judge severity, rubric difficulty, question
difficulty).  All values live on a common logit scale; the nuisance facets
are anchored by zero-mean constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Standard errors for cells with no usable curvature are reported as this
# sentinel instead of overflowing.
SE_CAP = 1e6

ZERO_MEAN_TOL = 1e-9


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log1pexp(x):
    """softplus(x) = log(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FacetParams:
    """Latent quality plus nuisance facets for one rating dimension.

    ``theta`` is a (models x questions) table; cells with no observations
    carry NaN and no parameter.  ``gamma`` (judges), ``delta`` (rubric
    items) and ``phi`` (questions) are the nuisance facets.
    """

    models: tuple[str, ...]
    questions: tuple[str, ...]
    judges: tuple[str, ...]
    rubrics: tuple[str, ...]
    theta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if theta.shape != (len(self.models), len(self.questions)):
            raise ValueError(
                f"theta shape {theta.shape} does not match "
                f"{len(self.models)} models x {len(self.questions)} questions"
            )
        if gamma.shape != (len(self.judges),):
            raise ValueError("gamma length does not match judges")
        if delta.shape != (len(self.rubrics),):
            raise ValueError("delta length does not match rubrics")
        if phi.shape != (len(self.questions),):
            raise ValueError("phi length does not match questions")
        for name, arr in (("gamma", gamma), ("delta", delta), ("phi", phi)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if not np.all(np.isfinite(theta) | np.isnan(theta)):
            raise ValueError("theta must be finite or NaN (missing cell)")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(
            self, "_model_idx", {m: i for i, m in enumerate(self.models)}
        )
        object.__setattr__(
            self, "_question_idx", {q: i for i, q in enumerate(self.questions)}
        )
        object.__setattr__(
            self, "_judge_idx", {j: i for i, j in enumerate(self.judges)}
        )
        object.__setattr__(
            self, "_rubric_idx", {r: i for i, r in enumerate(self.rubrics)}
        )

    # -- index lookups ---------------------------------------------------

    def model_index(self, model: str) -> int:
        try:
            return self._model_idx[model]
        except KeyError:
            raise KeyError(f"unknown model {model!r}") from None

    def question_index(self, question: str) -> int:
        try:
            return self._question_idx[question]
        except KeyError:
            raise KeyError(f"unknown question {question!r}") from None

    def judge_index(self, judge: str) -> int:
        try:
            return self._judge_idx[judge]
        except KeyError:
            raise KeyError(f"unknown judge {judge!r}") from None

    def rubric_index(self, rubric: str) -> int:
        try:
            return self._rubric_idx[rubric]
        except KeyError:
            raise KeyError(f"unknown rubric {rubric!r}") from None

    def theta_at(self, model: str, question: str) -> float:
        v = self.theta[self.model_index(model), self.question_index(question)]
        if np.isnan(v):
            raise KeyError(f"no theta parameter for cell ({model!r}, {question!r})")
        return float(v)

    @property
    def cell_mask(self) -> np.ndarray:
        """Boolean (models x questions) mask of cells that carry a parameter."""
        return ~np.isnan(self.theta)

    # -- constraints -----------------------------------------------------

    def zero_mean_residuals(self) -> tuple[float, float, float]:
        return (
            abs(float(self.gamma.sum())),
            abs(float(self.delta.sum())),
            abs(float(self.phi.sum())),
        )

    def satisfies_zero_mean(self, tol: float = ZERO_MEAN_TOL) -> bool:
        return all(r < tol for r in self.zero_mean_residuals())

    def replace(self, **kwargs) -> "FacetParams":
        fields = {
            "models": self.models,
            "questions": self.questions,
            "judges": self.judges,
            "rubrics": self.rubrics,
            "theta": self.theta,
            "gamma": self.gamma,
            "delta": self.delta,
            "phi": self.phi,
        }
        fields.update(kwargs)
        return FacetParams(**fields)

    @classmethod
    def zeros(
        cls,
        models,
        questions,
        judges,
        rubrics,
        cell_mask: np.ndarray | None = None,
    ) -> "FacetParams":
        """All-zero parameters; cells outside ``cell_mask`` are missing."""
        models = tuple(models)
        questions = tuple(questions)
        theta = np.zeros((len(models), len(questions)))
        if cell_mask is not None:
            theta = np.where(cell_mask, 0.0, np.nan)
        return cls(
            models=models,
            questions=questions,
            judges=tuple(judges),
            rubrics=tuple(rubrics),
            theta=theta,
            gamma=np.zeros(len(tuple(judges))),
            delta=np.zeros(len(tuple(rubrics))),
            phi=np.zeros(len(questions)),
        )


def project_zero_mean(params: FacetParams) -> FacetParams:
    """Subtract the mean from each nuisance facet; theta is untouched.

    Idempotent; empty facets are left alone.
    """

    def centered(a: np.ndarray) -> np.ndarray:
        return a - a.mean() if a.size else a

    return params.replace(
        gamma=centered(params.gamma),
        delta=centered(params.delta),
        phi=centered(params.phi),
    )
