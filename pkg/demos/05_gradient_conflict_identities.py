"""The two-objective gradient-norm identities, verified numerically.

For equal-norm gradients with inner product -rho G^2:
  uniform averaging:      |(g1+g2)/2|^2        = G^2 (1-rho) / 2
  reweighting by (1+l1):  |(1+l1)g1 + g2|^2    = G^2 [(1+l1)^2 + 1 - 2 rho (1+l1)]
                                               >= l1^2 G^2 (1-rho^2)
The first vanishes as rho -> 1; the second does not.  Also checks the
smooth-descent progress inequality on a quadratic.
"""

import numpy as np

import facetalign as fa
from facetalign import theory

# ----------------------------------------------------------------------
# Uniform averaging collapses with conflict.
# ----------------------------------------------------------------------
print(f"{'rho':>5}{'|avg grad|^2 (G=1)':>20}")
for rho in (0.0, 0.25, 0.5, 0.9, 0.999):
    pair = fa.make_conflict_pair(1.0, rho)
    exact, closed = fa.uniform_grad_norm_sq(pair.g1, pair.g2)
    assert abs(exact - closed) < 1e-12
    print(f"{rho:>5}{exact:>20.6f}")

# ----------------------------------------------------------------------
# Reweighting keeps a floor that grows with the multiplier.
# ----------------------------------------------------------------------
print(f"\n{'rho':>5}{'lambda1':>8}{'exact':>10}{'expansion':>11}{'bound':>10}")
for rho in (0.3, 0.5, 0.7, 0.9):
    for lam in (1.0, 2.0, 5.0):
        pair = fa.make_conflict_pair(1.0, rho)
        exact, expansion, bound = fa.lag_grad_norm_sq(pair.g1, pair.g2, lam)
        assert abs(exact - expansion) < 1e-10 and bound <= exact + 1e-12
        print(f"{rho:>5}{lam:>8}{exact:>10.3f}{expansion:>11.3f}{bound:>10.3f}")

# ----------------------------------------------------------------------
# Per-step progress ratio: 1 with no reweighting, diverging as rho -> 1.
# ----------------------------------------------------------------------
print(f"\n{'rho':>5}" + "".join(f"{f'l1={l}':>10}" for l in (0, 1, 2, 5)))
for rho in (0.1, 0.5, 0.9, 0.99):
    row = f"{rho:>5}"
    for lam in (0.0, 1.0, 2.0, 5.0):
        row += f"{fa.speedup_indicator(rho, lam):>10.2f}"
    print(row)

# ----------------------------------------------------------------------
# Smooth-descent progress on the quadratic test loss.
# ----------------------------------------------------------------------
print(f"\n{'eta':>6}{'measured':>10}{'guaranteed':>12}")
rng = np.random.default_rng(0)
point = rng.normal(size=4)
for eta in (0.1, 0.5, 1.0):
    measured, guaranteed = fa.smoothness_progress_check(1.0, point, eta)
    assert measured >= guaranteed
    print(f"{eta:>6}{measured:>10.4f}{guaranteed:>12.4f}")
print("equality holds exactly at the critical step size, slack inside it")

# ----------------------------------------------------------------------
# Full verification grid, as run by `facetalign verify-theory`.
# ----------------------------------------------------------------------
rows = theory.verify_grid()
asserted = [r for r in rows if r.asserted]
print(f"\ngrid: {len(rows)} points, {len(asserted)} asserted, "
      f"{sum(r.passed for r in asserted)} passed")
