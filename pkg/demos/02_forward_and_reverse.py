"""The diffusion schedule: forward noising and the two reverse steppers.

Run:  python3 demos/02_forward_and_reverse.py
"""

import numpy as np

from layoutdiff import build_schedule, ddim_step, q_sample

sched = build_schedule(100)
print(f"T={sched.T}  beta[0]={sched.beta[0]:.4f}  beta[-1]={sched.beta[-1]:.4f}")
print(f"alpha_bar[0]={sched.alpha_bar[0]:.4f}  alpha_bar[-1]={sched.alpha_bar[-1]:.6f}")

# Forward process: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
# At t=99 the signal is almost gone; at t=0 it is almost untouched.
rng = np.random.default_rng(0)
x0 = rng.uniform(-1, 1, (8, 16))
for t in (0, 50, 99):
    xt = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    corr = np.corrcoef(x0.ravel(), xt.ravel())[0, 1]
    print(f"t={t:3d}  corr(x0, x_t) = {corr:+.3f}")

# Reverse process sanity check: if a predictor returns the *true* noise at
# every step, deterministic DDIM retraces the forward line exactly.
eps = rng.standard_normal(x0.shape)
x = q_sample(x0, 99, eps, sched)
for t in range(99, -1, -1):
    x = ddim_step(x, eps, t, t - 1, eta=0.0, sched=sched)
print("\nDDIM inversion max error with oracle noise:", np.abs(x - x0).max())
