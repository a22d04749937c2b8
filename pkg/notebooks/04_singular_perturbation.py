# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Time-scale separation
#
# Lines are fast and nodes are slower still compared to the controller.
# Replacing line currents by their quasi-steady value gives the reduced
# model. The gap between the two should shrink in proportion to the line
# time constant.

# %%
import numpy as np

from lwvoc import bundled_scenario_path, parse_scenario
from lwvoc.cli import sweep_rows

scn = parse_scenario(bundled_scenario_path("three_converter"))
rows = sweep_rows(scn, [1.0, 0.5, 0.25, 0.125])
print("scale      eps         max_dev     rms_dev")
for row in rows:
    print("  ".join(f"{x:.4e}" for x in row))

# %%
ratio = (rows[1:, 2] / rows[0, 2]) / (rows[1:, 1] / rows[0, 1])
print("deviation ratio over eps ratio:", np.round(ratio, 3))

# %% [markdown]
# Boundary layer: with the slow states frozen, the line error obeys
# `y' = -Z_O y` and decays at exactly `R_O` (the rotation part only turns it).

# %%
from scipy.linalg import expm

from lwvoc.network import build_impedances

_, Z_O = build_impedances(scn.spec, scn.omega_star)
y0 = np.ones(Z_O.shape[0])
for t in (1.0, 5.0, 10.0):
    print(t, np.log(np.linalg.norm(expm(-Z_O * t) @ y0) / np.linalg.norm(y0)) / -t)
