"""Marginalized-noise linear regression and the angle view of dropout.

Averaging the squared loss over rotation noise yields a ridge-like
problem whose condition number is bounded by D - 1; dropout's version
inherits any near-zero column variance.  The second half measures how far
a dropout mask rotates a nonnegative vector: cos^2 of the angle
concentrates at the keep rate, and a flip-rate curve shows the margin
mechanism of rotation noise on a nearest-weight classifier.
"""

import numpy as np

from rotnoise import (
    RegressionProblem,
    condition_numbers,
    dropout_rotation_angle,
    gaussian_tangent,
    margin_flip_curve,
    marginalized_gradient,
    solve_dropout_lr,
    solve_rotation_lr,
)

rng = np.random.default_rng(0)

# a healthy problem: both solvers agree with the noise-averaged objective
x = rng.standard_normal((64, 6))
y = x @ np.array([1.0, -2.0, 0.5, 0.0, 3.0, -1.0]) + 0.1 * rng.standard_normal(64)
prob = RegressionProblem(x, y, lam=0.25)
w_rot = solve_rotation_lr(prob)
w_drop = solve_dropout_lr(prob)
print("rotation weights:", w_rot.round(3))
print("dropout  weights:", w_drop.round(3))

grad, stderr = marginalized_gradient(prob, w_rot, gaussian_tangent(0.5), 2000, rng)
print("marginalized gradient at the rotation solution (should be noise):")
print("  max |grad| / stderr =", float(np.max(np.abs(grad) / stderr)).__round__(2))

# conditioning: scale one column down to 1e-8 and compare systems at lam=1
x_bad = rng.standard_normal((64, 6))
x_bad[:, 0] *= 1e-8
kr, kd = condition_numbers(RegressionProblem(x_bad, y, 1.0))
print(f"\ndegenerate column at lam=1: rotation kappa={kr:.2f} (bound D-1={5})"
      f"  dropout kappa={kd}")

# dropout rotates features too: cos^2 of the mask's angle ~ keep rate
print("\ncos^2 of the dropout angle at D=1024:")
for p in (0.5, 0.7, 0.9):
    mean, err = dropout_rotation_angle(1024, p, 4000, rng)
    print(f"  keep rate {p:.1f} -> {mean:.4f} +- {err:.4f}")

# flip rate of a nearest-weight decision under rotation noise, against the
# input's angular margin: hard samples near the boundary flip half the
# time, confident samples survive
w = rng.standard_normal((8, 32))
curve = margin_flip_curve(w, gaussian_tangent(0.5), 10_000, rng)
print("\nmargin   flip rate")
for margin, rate, _ in curve[::4]:
    print(f"{margin:6.3f}   {rate:.3f}")
