"""Train/test variance shift of noise placed around a weight layer.

A normalization layer records train-mode variance and divides by it at
test time.  Multiplicative noise inflates the train-mode variance, so the
recorded statistics are wrong at test time by a per-unit ratio r >= 1.
Noising the weight-layer output ("a") or input ("b") gives the same
average shift, but the per-unit spread differs: placement "b" is more
centered, and placement "a" produces the extreme ratios.  Centering the
noise pins the ratio of placement "a" at exactly 1/p, which a one-line
variance rescale removes at test time.
"""

import numpy as np

from rotnoise import ReluGaussianSource, random_correlation, sample_sphere_rows, variance_shift

rng = np.random.default_rng(0)
dim, keep = 64, 0.5

source = ReluGaussianSource(random_correlation(dim, rng))
w = sample_sphere_rows(256, dim, rng)

rep_a = variance_shift("dropout-a", False, keep, source, W=w)
rep_b = variance_shift("dropout-b", False, keep, source, W=w)
print("placement   mean r    var r      max r")
for rep in (rep_a, rep_b):
    print(f"{rep.placement:10s} {rep.ratio_mean:8.4f} {rep.ratio_var:9.5f} {rep.ratio_max:8.3f}")

shift_a = (rep_a.var_train - rep_a.var_test).mean()
shift_b = (rep_b.var_train - rep_b.var_test).mean()
print(f"\naverage train-test variance gap: a={shift_a:.4f}  b={shift_b:.4f} (equal in expectation)")

# across many random feature covariances the same ordering holds
wins = 0
for rep in range(50):
    sub = np.random.default_rng((1, rep))
    src = ReluGaussianSource(random_correlation(dim, sub))
    rows = sample_sphere_rows(256, dim, sub)
    a = variance_shift("dropout-a", False, keep, src, W=rows)
    b = variance_shift("dropout-b", False, keep, src, W=rows)
    wins += (b.ratio_var < a.ratio_var) and (a.ratio_max > b.ratio_max)
print(f"ordering (var_b < var_a and max_a > max_b) held in {wins}/50 draws")

# centering the noise makes the placement-a ratio a constant 1/p
centered = variance_shift("dropout-a", True, keep, source, W=w)
print(f"\ncentered placement a: every unit's ratio = {centered.ratio_mean:.6f}"
      f" (1/p = {1 / keep}), spread = {centered.ratio_var:.2e}")
print("so test mode can simply rescale the recorded variance by p")

# the closed forms track a direct simulation
mc = variance_shift("dropout-b", False, keep, source, W=w[:8], n_mc=200_000, rng=rng)
print("\nclosed-form vs simulated train variance (first 4 units):")
for unit in range(4):
    print(f"  {mc.var_train[unit]:8.4f}  vs  {mc.mc_var_train[unit]:8.4f}")
