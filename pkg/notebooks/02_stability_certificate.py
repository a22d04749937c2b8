# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Stability certificate
#
# `compute_condition1` evaluates the time-scale assumption on the lines and
# the three inequalities on gains and network that make up Condition 1.

# %%
import numpy as np
from scipy.linalg import null_space

from lwvoc import ControllerGains, bundled_scenario_path, compute_condition1, parse_scenario
from lwvoc.analysis import compute_xi1, jacobian_at_origin, sample_condition1_sets

scn = parse_scenario(bundled_scenario_path("three_converter"))
sp = scn.setpoints()
rep = compute_condition1(scn.spec, sp, scn.gains)
for key, value in rep.as_dict().items():
    print(f"{key:15s} {value}")

# %% [markdown]
# The amplitude-gain condition fails: `xi1` is negative. The reason is
# structural. The controller projector `Pi_dq` removes each node's voltage
# component along `v*_k`, so `Pi_dq L^{-1}` has an n-dimensional kernel.
# Part of that kernel lies in the range of the Lyapunov projector, and on it
# the quadratic form reduces to `2 gamma |x|^2`.

# %%
K = null_space(sp.projector_dq @ np.linalg.inv(sp.L))
print("kernel dimension:", K.shape[1])
for gamma in (1e-3, 1e-2, 0.1, 1.0):
    print(f"gamma = {gamma:6g}  xi1 = {compute_xi1(sp, gamma):+.5f}  (-2 gamma = {-2 * gamma:+.5f})")

# %% [markdown]
# The same holds for random networks: a rejection sampler finds no set that
# passes all three inequalities.

# %%
sample = sample_condition1_sets(5, np.random.default_rng(0), max_draws=300)
print(len(sample.accepted), "accepted out of", sample.draws)

# %% [markdown]
# The origin is still unstable, as the instability argument needs.

# %%
lin = jacobian_at_origin(scn.spec, sp, scn.gains)
print(lin.unstable_count, "eigenvalues with positive real part")
print(np.sort_complex(lin.eigenvalues))

# %% [markdown]
# A much larger amplitude gain makes things worse, not better.

# %%
print(compute_condition1(scn.spec, sp, ControllerGains(10.0, 0.03, 3)).xi1)
