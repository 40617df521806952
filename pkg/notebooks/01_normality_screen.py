# Normality screening of a feature table.
#
# Before choosing between a Gaussian (Fisher-Z) and a kernel (KCIT)
# independence test it helps to know how far each column is from normal.
# Shapiro-Wilk is run column by column.
import numpy as np

from causal_probe import FeatureTable, normality_report, shapiro_wilk

rng = np.random.default_rng(1)
n = 300
table = FeatureTable(
    ("pitch_mean", "speech_rate", "pause_ratio"),
    np.column_stack([
        rng.standard_normal(n),            # roughly Gaussian
        rng.gamma(2.0, 1.0, n),            # right-skewed
        rng.beta(0.5, 0.5, n),             # bimodal on [0, 1]
    ]),
)

# a single column: W close to 1 means close to normal
W, p = shapiro_wilk(table.column("pitch_mean"))
print(f"pitch_mean  W={W:.4f}  p={p:.3g}")

# the whole table at alpha = 0.05
report = normality_report(table, alpha=0.05)
for rec in report:
    print(f"{rec.column:12s} W={rec.W:.4f} p={rec.p:.3g} normal={rec.normal}")
print("non-normal columns:", report.non_normal())

# with skewed columns a kernel test is the safer default for discovery
