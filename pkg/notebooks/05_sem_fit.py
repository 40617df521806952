# Structural equation model: a latent perception score regressed on
# two acoustic features.
#
# Three questionnaire subscales measure one latent factor, which is
# regressed on spectral flux and loudness.
from importlib import resources

import numpy as np

from causal_probe import sem

text = resources.files("causal_probe").joinpath("resources/fig2_rosas.sem").read_text()
print(text)
model = sem.parse_model(text)
print("free parameters:", [p.label for p in model.params])
print("degrees of freedom:", model.df)

# simulate from known values, then recover them
truth = np.array([0.8, 1.2, 0.5, -0.3, 1.0, 1.0, 0.4, 0.6, 0.3, 0.4, 0.5])
data = sem.simulate(model, truth, 800, seed=5)

for method in ("ml", "gls"):
    res = sem.fit(model, data, method=method)
    print(f"\n{method.upper()}: chi2={res.chi_square:.3f} df={res.df} p={res.p_value:.3f}")
    print(res.indices.to_dict())
    print(sem.format_path_report(res))
