"""How much does adding a judge move the calibrated scores?

The zero-mean anchoring implies closed-form bounds: a new judge with
severity g shifts existing severities by at most |g|/(N-1) and latent
quality by about |g|/(J(N-1)) in expectation.  This demo adds a third
judge with severity +0.5 to a two-judge corpus and compares the refit
against both the bound and rank-stability statistics.
"""

import numpy as np

import facetalign as fa
from facetalign import scoring

severity_bound, theta_bound = scoring.judge_perturbation_bound(
    gamma_new=0.5, n_judges_before=2, n_total=3
)
print(f"bounds for |gamma_new| = 0.5, J = 2 -> N = 3:")
print(f"  max severity shift   <= {severity_bound}")
print(f"  expected theta shift <= {theta_bound}")

spec = fa.SyntheticSpec(
    n_models=20, n_questions=30, n_judges=2, n_rubrics=14,
    seed=0, dimension="A", theta_scale=2.25, theta_law="uniform",
    nuisance_scale=0.4,
)
corpus, truth = fa.gen_synthetic_ratings(spec)
config = fa.FitConfig(l2_weight=0.04, max_iters=4000)
base = fa.fit(corpus, config)

extended, _ = fa.extend_with_judge(corpus, truth, gamma_new=0.5, seed=5000)
refit = fa.fit(extended, config)

print(f"\ntwo-judge fit: {len(corpus)} ratings; refit: {len(extended)} ratings")
print(f"refit judge severities: {np.round(refit.params.gamma, 3)}")
print("(the new judge's severity is absorbed into gamma, not theta)")

mask = base.params.cell_mask
before = base.params.theta[mask]
after = refit.params.theta[mask]
mean_shift = np.mean(np.abs(after - before))
tau, rho = fa.rank_stability(before, after)

print(f"\nmean |theta shift| = {mean_shift:.3f}")
print(f"  vs bound + estimation noise allowance: {theta_bound} + 0.4 = {theta_bound + 0.4}")
print(f"cell-level rank stability: Kendall tau = {tau:.3f}, Spearman rho = {rho:.3f}")
print("two judges already pin the ranking; a third mostly re-anchors the scale")
