"""
Distance matrices and UPGMA trees
=================================
"""

import numpy as np

from repfactor import DistanceMatrix, average_distance, cosine_distance_matrix, to_newick, upgma
from repfactor.signatures import Signature

# The hand-checkable four leaf case.
d = np.array([[0, 2, 4, 6], [2, 0, 4, 6], [4, 4, 0, 6], [6, 6, 6, 0]], dtype=float)
print(to_newick(upgma(DistanceMatrix(list("ABCD"), d))))

# Three families of signatures around distinct centres.
rng = np.random.default_rng(2)
families = {"germanic": ["de", "en", "nl"], "romance": ["es", "fr", "it"], "slavic": ["cs", "pl", "ru"]}
centres = {f: rng.uniform(0.5, 3, 8) for f in families}


def signatures(missing=()):
    return [Signature(g, 0, "ALL", centres[f] * (1 + 0.05 * rng.standard_normal(8)))
            for f, gs in families.items() for g in gs if g not in missing]


number = cosine_distance_matrix(signatures())
print(to_newick(upgma(number), precision=3))

# One group lacks a category: its distances count as 1 in that category.
case = cosine_distance_matrix(signatures(missing=("cs",)))
groups = [g for gs in families.values() for g in gs]
avg = average_distance([number, case], groups)
print(round(avg["cs", "pl"], 4), "=", round((number["cs", "pl"] + 1) / 2, 4))
print(to_newick(upgma(avg), precision=3))
