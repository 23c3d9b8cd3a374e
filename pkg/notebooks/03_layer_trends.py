"""
Trends of condensed signatures over layers
==========================================

Mann-Kendall per group, with Benjamini-Hochberg across groups.
"""

import numpy as np

from repfactor import SignatureTable, layer_trend_analysis, mann_kendall
from repfactor.signatures import Signature

print(mann_kendall([5, 4, 3, 2, 1]))

rng = np.random.default_rng(1)
table = SignatureTable()
for g in range(6):
    if g < 3:
        clean = np.linspace(4, 1, 13)      # decreasing with depth
    else:
        clean = np.full(13, 2.5)           # no trend
    series = clean + rng.normal(0, 0.15, 13)
    for layer, value in enumerate(series):
        # signature vectors have k entries; condensed is their mean
        table.add(Signature(f"g{g}", layer, "ALL", value + rng.normal(0, 0.01, 4)))

for r in layer_trend_analysis(table, "ALL", q=0.05):
    print(f"{r.group_id}  S={r.s_statistic:4d}  p={r.p_value:.2e}  "
          f"adj={r.p_adjusted:.2e}  {r.direction}")
