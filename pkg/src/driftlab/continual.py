"""Forgetting mitigation: consolidation penalty and decaying rehearsal buffer.

Two mechanisms cooperate. A quadratic penalty anchored at the previous
session's parameters, weighted per-parameter by a diagonal Fisher estimate,
keeps important weights from drifting; and a memory buffer carries the whole
current dataset plus a decaying quota of each past session's most
informative samples, where informativeness is distance to the session's
mean embedded feature vector.

The buffer is generic over sample payloads; the experiment harness stores
compiled training pairs in it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .model import EmbeddingBundle


class ContinualError(Exception):
    pass


@dataclass(frozen=True)
class CLHyperparams:
    """Consolidation weight and buffer decay factor."""

    lam: float = 200.0
    beta: float = 10.0

    def __post_init__(self):
        if self.lam < 0:
            raise ContinualError("consolidation weight must be nonnegative")
        if self.beta <= 0:
            raise ContinualError("buffer decay factor must be positive")


@dataclass
class ConsolidationAnchor:
    """Parameter snapshot from the end of the previous session plus the
    per-parameter Fisher importances, both flat and aligned."""

    theta_prev: np.ndarray
    fisher: np.ndarray

    def __post_init__(self):
        if self.theta_prev.shape != self.fisher.shape:
            raise ContinualError("anchor and Fisher lengths differ")
        if np.any(self.fisher < 0):
            raise ContinualError("Fisher values must be nonnegative")


def consolidation_loss(theta: np.ndarray, anchor: ConsolidationAnchor,
                       lam: float) -> float:
    """(lam/2) * sum_i F_i (theta_i - theta_prev_i)^2."""
    if theta.shape != anchor.theta_prev.shape:
        raise ContinualError(
            f"parameter length {theta.shape} does not match anchor "
            f"{anchor.theta_prev.shape}")
    d = theta - anchor.theta_prev
    return 0.5 * lam * float(np.dot(anchor.fisher * d, d))


def consolidation_grad(theta: np.ndarray, anchor: ConsolidationAnchor,
                       lam: float) -> np.ndarray:
    """Closed-form gradient lam * F * (theta - theta_prev)."""
    if theta.shape != anchor.theta_prev.shape:
        raise ContinualError(
            f"parameter length {theta.shape} does not match anchor "
            f"{anchor.theta_prev.shape}")
    return lam * anchor.fisher * (theta - anchor.theta_prev)


def consolidation_loss_tensor(tape: Tape, theta: Tensor,
                              anchor: ConsolidationAnchor, lam: float) -> Tensor:
    """Tape-recorded penalty, differentiable in theta.

    The training loop uses the closed form above; this route exists so the
    two can be checked against each other exactly.
    """
    if theta.data.shape != anchor.theta_prev.shape:
        raise ContinualError("parameter length does not match anchor")
    prev = tape.leaf(anchor.theta_prev)
    fisher = tape.leaf(anchor.fisher)
    d = theta - prev
    return (fisher * (d * d)).sum().scale(0.5 * lam)


def fisher_diagonal(params: Any, samples: Sequence[Any],
                    gradient_fn: Callable[[Any, Any], np.ndarray]) -> np.ndarray:
    """Diagonal empirical Fisher: mean over samples of the squared gradient
    of the model loss. ``gradient_fn(params, sample)`` must return the flat
    gradient for one sample."""
    if len(samples) == 0:
        raise ContinualError("Fisher estimation needs at least one sample")
    acc = None
    for sample in samples:
        g = gradient_fn(params, sample)
        sq = g.astype(np.float64) ** 2
        acc = sq if acc is None else acc + sq
    return acc / len(samples)


@dataclass
class MeanFeatureVector:
    """Average of all node, edge, and time embeddings over a task."""

    vector: np.ndarray
    node_count: int
    edge_count: int
    time_count: int


def mean_feature_vector(bundles: Sequence[EmbeddingBundle]) -> MeanFeatureVector:
    if not bundles:
        raise ContinualError("need at least one embedding bundle")
    dim = bundles[0].node_embeddings.shape[1]
    total = np.zeros(dim, dtype=np.float64)
    nodes = edges = times = 0
    for b in bundles:
        if (b.node_embeddings.shape[1] != dim or b.edge_embeddings.shape[1] != dim
                or b.time_embedding.shape[0] != dim):
            raise ContinualError("embedding dimension mismatch across bundles")
        total += b.node_embeddings.sum(axis=0)
        total += b.edge_embeddings.sum(axis=0)
        total += b.time_embedding
        nodes += b.node_embeddings.shape[0]
        edges += b.edge_embeddings.shape[0]
        times += 1
    count = nodes + edges + times
    return MeanFeatureVector(vector=total / count, node_count=nodes,
                             edge_count=edges, time_count=times)


def sample_informativeness(bundle: EmbeddingBundle,
                           center: np.ndarray) -> float:
    """Euclidean distance from the sample's aggregate embedding to the
    task's mean feature vector; lower means more informative."""
    agg = bundle.aggregate()
    if agg.shape != np.asarray(center).shape:
        raise ContinualError("dimension mismatch against the mean feature vector")
    return float(np.linalg.norm(agg - center))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class BufferEntry:
    origin: int
    index: int
    payload: Any
    distance: float | None = None


@dataclass
class SessionMemory:
    original_size: int
    center: np.ndarray | None = None
    entries: list[BufferEntry] = field(default_factory=list)

    @property
    def finalized(self) -> bool:
        return self.center is not None


class MemoryBuffer:
    """Weighted retained samples across sessions.

    The current session's dataset is kept whole; a past session j
    contributes round(|D_j| / (beta * (k - j))) samples at session k,
    chosen as the ones nearest that session's stored mean feature vector.
    Quotas shrink monotonically as a session recedes, so trimming is always
    a prefix cut of the distance-sorted entries.
    """

    def __init__(self):
        self.sessions: dict[int, SessionMemory] = {}

    def session_sizes(self) -> dict[int, int]:
        return {j: len(mem.entries) for j, mem in sorted(self.sessions.items())}

    @property
    def total_size(self) -> int:
        return sum(len(mem.entries) for mem in self.sessions.values())

    def all_entries(self) -> list[BufferEntry]:
        out: list[BufferEntry] = []
        for j in sorted(self.sessions):
            out.extend(self.sessions[j].entries)
        return out

    def finalize_session(self, k: int,
                         bundles: Sequence[EmbeddingBundle]) -> None:
        """Record the session's mean feature vector and per-sample
        informativeness distances, enabling future trimming."""
        mem = self.sessions[k]
        if len(bundles) != len(mem.entries):
            raise ContinualError(
                f"got {len(bundles)} bundles for {len(mem.entries)} entries")
        center = mean_feature_vector(bundles).vector
        mem.center = center
        for entry, bundle in zip(mem.entries, bundles):
            entry.distance = sample_informativeness(bundle, center)
        mem.entries.sort(key=lambda e: (e.distance, e.index))


def decayed_quota(original_size: int, beta: float, lag: int) -> int:
    """Retention quota for a session ``lag`` sessions in the past:
    round(|D_j| / (beta * lag)), half up."""
    return round_half_up(original_size / (beta * lag))


def buffer_update(prev: MemoryBuffer | None, samples: Sequence[Any],
                  hyper: CLHyperparams, k: int,
                  bundles: Sequence[EmbeddingBundle] | None = None,
                  quota_fn: Callable[[int, float, int], int] = decayed_quota,
                  ) -> MemoryBuffer:
    """Build the session-k buffer: all of the new dataset plus decayed
    quotas of each finalized past session.

    When ``bundles`` is given the new session is finalized immediately;
    otherwise call :meth:`MemoryBuffer.finalize_session` once end-of-task
    embeddings are available. ``quota_fn`` is the per-session retention
    rule, replaceable for studies of other decay schedules.
    """
    if k < 0:
        raise ContinualError("session index must be nonnegative")
    buf = MemoryBuffer()
    if prev is not None:
        for j, mem in sorted(prev.sessions.items()):
            if j >= k:
                raise ContinualError(
                    f"previous buffer already contains session {j} >= {k}")
            if not mem.finalized:
                raise ContinualError(f"session {j} was never finalized")
            quota = min(quota_fn(mem.original_size, hyper.beta, k - j),
                        len(mem.entries))
            buf.sessions[j] = SessionMemory(
                original_size=mem.original_size, center=mem.center,
                entries=list(mem.entries[:quota]))
    buf.sessions[k] = SessionMemory(
        original_size=len(samples),
        entries=[BufferEntry(origin=k, index=i, payload=s)
                 for i, s in enumerate(samples)])
    if bundles is not None:
        buf.finalize_session(k, bundles)
    return buf


def buffer_size_forecast(mean_dataset_size: float, beta: float,
                         sessions: int) -> list[float]:
    """Projected buffer sizes for sessions 0..n under equal dataset sizes:
    size(k) = mean * (1 + H_k / beta) with harmonic number H_k."""
    if sessions < 1:
        raise ContinualError("need at least one session")
    if beta <= 0:
        raise ContinualError("buffer decay factor must be positive")
    sizes = []
    harmonic = 0.0
    for k in range(sessions + 1):
        if k > 0:
            harmonic += 1.0 / k
        sizes.append(mean_dataset_size * (1.0 + harmonic / beta))
    return sizes
