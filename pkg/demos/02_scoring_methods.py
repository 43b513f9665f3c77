"""Raw proportions vs judge z-scores vs calibrated scores, side by side.

Builds a four-dimension corpus with shared judges and questions (the
common-person design that makes the four calibrated scales comparable)
and persistent ability differences between models, scores every model
three ways, and runs a Friedman test on the question-level scores.
"""

import numpy as np

import facetalign as fa
from facetalign import scoring

DIMS = ("A", "T", "E", "C")
N_MODELS, N_QUESTIONS, N_JUDGES, N_RUBRICS = 6, 12, 2, 3

# ----------------------------------------------------------------------
# Ground truth with real model separation: model abilities spaced over
# [-1.5, 1.5] plus cell noise, judges of unequal severity, and the same
# judge/question panel for all four dimensions.
# ----------------------------------------------------------------------
rng = np.random.default_rng(42)
model_effects = np.linspace(-1.5, 1.5, N_MODELS)
corpora = []
for dim_index, dim in enumerate(DIMS):
    def centered(n, scale):
        x = scale * rng.standard_normal(n)
        return x - x.mean()

    truth = fa.FacetParams(
        models=tuple(f"m{i:02d}" for i in range(N_MODELS)),
        questions=tuple(f"q{i:02d}" for i in range(N_QUESTIONS)),
        judges=("lenient", "harsh"),
        rubrics=tuple(f"{dim}{i + 1}" for i in range(N_RUBRICS)),
        theta=model_effects[:, None] + 0.4 * rng.standard_normal((N_MODELS, N_QUESTIONS)),
        gamma=np.array([-0.6, 0.6]),
        delta=centered(N_RUBRICS, 0.5),
        phi=centered(N_QUESTIONS, 1.0),
    )
    spec = fa.SyntheticSpec(
        N_MODELS, N_QUESTIONS, N_JUDGES, N_RUBRICS,
        seed=200 + dim_index, dimension=dim, truth=truth,
    )
    corpora.append(fa.gen_synthetic_ratings(spec)[0])

corpus = fa.merge_corpora(*corpora)
print(
    f"corpus: {len(corpus)} ratings, dims {corpus.dimensions}, "
    f"equating warning: {corpus.equating_warning}"
)

fits = fa.fit_all_dimensions(corpus, fa.FitConfig(l2_weight=0.02, max_iters=2000))

# ----------------------------------------------------------------------
# Scorecards under the three methods.  Raw proportions live in [0, 1]
# and compress near the ceiling; z-scores are judge-relative; calibrated
# scores sit on the shared logit scale.
# ----------------------------------------------------------------------
header = f"{'model':<8}" + "".join(
    f"{m + ' peer':>12}{m + ' dig':>11}" for m in ("raw", "z", "mfrm")
)
print("\n" + header)
for model in corpus.models:
    raw = scoring.rating_scorecard(corpus, model, "raw_prob")
    z = scoring.rating_scorecard(corpus, model, "z_score")
    mfrm = scoring.mfrm_scorecard(fits, model)
    row = f"{model:<8}"
    for card in (raw, z, mfrm):
        row += f"{card.peer:>12.3f}{card.dignity:>11.3f}"
    print(row)
    assert raw.peer == (raw.dim_scores["E"] + raw.dim_scores["C"]) / 2
    assert mfrm.dignity == (mfrm.dim_scores["A"] + mfrm.dim_scores["T"]) / 2

# ----------------------------------------------------------------------
# Friedman test across models with questions as blocks.
# ----------------------------------------------------------------------
print(f"\n{'method':<10}{'chi2':>8}{'p':>10}")
for method in ("raw_prob", "mfrm"):
    rows = []
    for model in corpus.models:
        if method == "raw_prob":
            per_q = [
                np.mean([
                    o.score for o in corpus.observations
                    if o.model_id == model and o.question_id == q
                ])
                for q in corpus.questions
            ]
        else:
            mi = fits["A"].params.model_index(model)
            per_q = np.nanmean(
                [fits[d].params.theta[mi] for d in DIMS], axis=0
            ).tolist()
        rows.append(per_q)
    chi2, p = scoring.friedman_test(np.array(rows))
    print(f"{method:<10}{chi2:>8.2f}{p:>10.4f}")

print("\njudge severities recovered per dimension (true: lenient -0.6, harsh +0.6;")
print("joint ML on 6-observation cells inflates the logit scale slightly):")
for dim in DIMS:
    params = fits[dim].params
    labeled = {j: round(float(g), 2) for j, g in zip(params.judges, params.gamma)}
    print(f"  {dim}: {labeled}")
