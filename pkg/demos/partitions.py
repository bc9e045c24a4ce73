"""
Label skew under Dirichlet splits
=================================

Smaller alpha concentrates each class on fewer clients. The skew number is
the average, over clients, of the largest class share a client holds.
"""

import numpy as np

from fedafd.synthdata import label_skew, partition_dirichlet

labels = np.repeat(np.arange(4), 100)
for alpha in (0.05, 0.1, 1.0, 10.0, 100.0):
    skews = [label_skew(partition_dirichlet(labels, 5, alpha, seed), labels, 4) for seed in range(20)]
    print(f"alpha {alpha:>6}: mean max-class share {np.mean(skews):.3f}")
