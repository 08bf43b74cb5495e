"""Rehearsal-memory growth: measured sizes and the harmonic projection.

The buffer keeps the whole current dataset plus round(|D_j| / (beta*(k-j)))
samples of each past session, so with equal dataset sizes it grows like
D * (1 + H_k / beta): logarithmic, with a strictly shrinking increment.
"""

import numpy as np

from driftlab import CLHyperparams, buffer_size_forecast, buffer_update
from driftlab.continual import MemoryBuffer
from driftlab.model import EmbeddingBundle

rng = np.random.default_rng(0)


def fake_bundles(n, dim=4):
    return [EmbeddingBundle(rng.normal(size=(3, dim)),
                            rng.normal(size=(1, dim)),
                            rng.normal(size=dim)) for _ in range(n)]


hyper = CLHyperparams(lam=200.0, beta=10.0)
dataset_size = 5175  # per-session sample count used in the projection below

buf = None
measured = []
for k in range(5):
    buf = buffer_update(buf, list(range(dataset_size)), hyper, k,
                        bundles=fake_bundles(dataset_size))
    measured.append(buf.total_size)
print("measured buffer sizes over 5 sessions:", measured)

projected = buffer_size_forecast(dataset_size, beta=10.0, sessions=10)
print("projected sizes for 10 sessions (equal-size datasets):")
for k, size in enumerate(projected):
    bar = "#" * int((size - dataset_size) / 25)
    print(f"  session {k:2d}: {size:8.1f}  {bar}")

growth = np.diff(projected)
print("per-session growth:", np.round(growth, 1))
assert np.all(np.diff(growth) < 0), "growth shrinks every session"
total_joint = sum(dataset_size * (k + 1) for k in range(5))
print(f"\nfive-session totals: rehearsal {sum(measured)} samples "
      f"vs retrain-on-everything {total_joint}")
