"""Fisher-Rao norm against the data-dependent spectral, group, path and chain norms.

Every entry of the report is an upper bound on ||theta||_fr / (L+1);
``slack`` is how much room each bound leaves.
"""

import numpy as np

from frcap import init_network, norm_comparison_report

rng = np.random.default_rng(1)
net = init_network([5, 16, 16, 1], "relu", seed=3)
X = rng.standard_normal((200, 5))

report = norm_comparison_report(net, X, rng.standard_normal(200))
print(f"FR / (L+1) = {report.fr_natural:.4f}")
print(f"{'norm':<22}{'value':>12}{'slack':>12}  holds")
for e in sorted(report.entries, key=lambda e: e.value):
    print(f"{e.name:<22}{e.value:>12.4f}{e.slack:>12.4f}  {e.holds}")
print("all bounds hold:", report.all_hold)
