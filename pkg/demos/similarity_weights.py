"""
How the server weighs its clients
=================================

Each client uploads features of the shared public set. A client scores well
on a sample when its feature for that sample is closer to the server's
feature of the same sample than to the server's features of other samples.
Scores become per-sample weights by a softmax over clients.
"""

import numpy as np

from fedafd.sed import sed_group

rng = np.random.default_rng(0)
server = rng.normal(size=(6, 8))
noise = rng.normal(size=(6, 8))

# three clients, increasingly far from the server's view
clients = [server + s * noise for s in (0.2, 1.0, 4.0)]
agg = sed_group(clients, server)

np.set_printoptions(precision=3, suppress=True)
print("scores (clients x samples), all <= 0")
print(agg.scores)
print("weights, each column sums to one")
print(agg.weights)

# averaged over samples, the best aligned client carries the most weight
for c, w in enumerate(agg.weights.mean(axis=1)):
    print(f"client {c}: mean weight {w:.3f}")
