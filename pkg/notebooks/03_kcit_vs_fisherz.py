# Kernel versus Gaussian conditional independence tests.
#
# Fisher-Z only sees linear partial correlation. KCIT uses Gaussian
# kernels, so it also detects nonlinear dependence such as y = x^2.
import numpy as np

from causal_probe import FeatureTable
from causal_probe.citests import fisher_z, kcit

rng = np.random.default_rng(3)
n = 400
x = rng.uniform(-1, 1, n)
y = x ** 2 + 0.5 * rng.standard_normal(n)
t = FeatureTable(("x", "y"), np.column_stack([x, y]))

print("fisher_z:", fisher_z(t, "x", "y"))    # correlation is ~0, not rejected
print("kcit    :", kcit(t, "x", "y"))        # dependence is found

# conditional case: x and y are both driven by z, independent given z
z = rng.standard_normal(n)
t = FeatureTable(("x", "y", "z"), np.column_stack([
    np.sin(z) + 0.5 * rng.standard_normal(n),
    0.5 * z ** 2 + 0.5 * rng.standard_normal(n),
    z,
]))
print("kcit x,y       :", kcit(t, "x", "y"))
print("kcit x,y | z   :", kcit(t, "x", "y", ["z"]))
