"""Sequential learning sessions, strategies, and the evaluation protocols.

Three strategies share one training loop. ``streak`` trains each session on
the memory buffer (current dataset plus decayed rehearsal samples) with the
Fisher-anchored consolidation penalty, then refreshes the anchor, Fisher,
and buffer. ``finetuned`` is the lower bound: plain sequential fine-tuning
on each dataset alone. ``joint`` is the upper bound: retrain from scratch
on everything seen so far, shuffled.

Training pairs are (snapshot at t, snapshot at t + horizon) sliding windows
within a day; batch size is one pair per optimizer step, simulating online
learning.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .continual import (CLHyperparams, ConsolidationAnchor, MemoryBuffer,
                        buffer_update, fisher_diagonal)
from .model import (CompiledPair, ModelConfig, ParameterSet, compile_pair,
                    encode_compiled, flat_gradient, init_parameters,
                    make_leaves, pair_loss, predict_pair)
from .optim import AdamState, adam_step
from .simulate import TaskDataset

STRATEGIES = ("streak", "finetuned", "joint")


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 1
    lr: float = 1e-3
    hyper: CLHyperparams = field(default_factory=CLHyperparams)
    seed: int = 0
    strategy: str = "streak"

    def __post_init__(self):
        if self.epochs < 1:
            raise ExperimentError("need at least one epoch")
        if self.batch_size != 1:
            raise ExperimentError("online learning uses batch size 1")
        if self.strategy not in STRATEGIES:
            raise ExperimentError(f"unknown strategy {self.strategy!r}")


@dataclass
class SessionLedger:
    session: int
    strategy: str
    train_samples: int
    epochs: int
    steps: int
    cpu_seconds: float


@dataclass
class SessionState:
    """Everything carried between sessions; only the fields the strategy
    needs are populated."""

    strategy: str
    next_session: int
    model_cfg: ModelConfig
    params: ParameterSet
    adam: AdamState
    anchor: ConsolidationAnchor | None = None
    buffer: MemoryBuffer | None = None
    joint_pairs: list[CompiledPair] = field(default_factory=list)
    ledger: list[SessionLedger] = field(default_factory=list)


def initial_state(model_cfg: ModelConfig, n_objects: int, n_locations: int,
                  cfg: TrainingConfig, dtype=np.float32) -> SessionState:
    params = init_parameters(model_cfg, n_objects, n_locations,
                             seed=[cfg.seed, 1], dtype=dtype)
    return SessionState(strategy=cfg.strategy, next_session=0,
                        model_cfg=model_cfg, params=params,
                        adam=AdamState(lr=cfg.lr))


def build_pairs(ds: TaskDataset, horizon: int,
                dtype=np.float32) -> list[CompiledPair]:
    """Sliding-window training pairs at the given horizon, within one day.

    The daily placement reset is a simulator boundary, not an observed
    relocation, so pairs never straddle midnight.
    """
    if horizon % ds.sample_interval != 0:
        raise ExperimentError(
            f"horizon {horizon} is not a multiple of the sample "
            f"interval {ds.sample_interval}")
    step = horizon // ds.sample_interval
    per_day = ds.snapshots_per_day
    pairs = []
    for i, snap in enumerate(ds.snapshots):
        j = i + step
        if j >= len(ds.snapshots):
            break
        if (i % per_day) + step >= per_day:
            continue
        pairs.append(compile_pair(snap, ds.snapshots[j], dtype=dtype))
    return pairs


def _model_gradient(params: ParameterSet, pair: CompiledPair,
                    model_cfg: ModelConfig) -> np.ndarray:
    tape = Tape(dtype=params.dtype)
    leaves = make_leaves(tape, params, skip_edges=True)
    loss, _ = pair_loss(tape, leaves, pair, model_cfg)
    return flat_gradient(tape, loss, leaves, params)


def run_session(state: SessionState, dataset: TaskDataset,
                cfg: TrainingConfig) -> SessionState:
    """Train one learning session in place and return the updated state."""
    if cfg.strategy != state.strategy:
        raise ExperimentError("config strategy does not match session state")
    k = state.next_session
    model_cfg = state.model_cfg
    dtype = state.params.dtype
    pairs = build_pairs(dataset, model_cfg.horizon, dtype=dtype)
    if not pairs:
        raise ExperimentError(f"dataset {dataset.task} yields no training pairs")

    started = time.process_time()
    params = state.params
    adam = state.adam
    anchor = state.anchor
    buffer = state.buffer
    lam = cfg.hyper.lam

    if cfg.strategy == "streak":
        buffer = buffer_update(buffer, pairs, cfg.hyper, k)
        train_pairs = [entry.payload for entry in buffer.all_entries()]
    elif cfg.strategy == "finetuned":
        train_pairs = pairs
    else:  # joint: fresh model over everything seen so far, shuffled
        state.joint_pairs.extend(pairs)
        train_pairs = state.joint_pairs
        if k > 0:
            params = init_parameters(model_cfg, params.n_objects,
                                     params.n_locations,
                                     seed=[cfg.seed, k, 1], dtype=dtype)
            adam = AdamState(lr=cfg.lr)

    rng = np.random.default_rng([cfg.seed, k, 0])
    consolidate = (cfg.strategy == "streak" and anchor is not None and lam > 0)
    if consolidate:
        # the penalty is applied as its exact proximal step after each Adam
        # step on the model loss: theta <- anchor + (theta - anchor) / (1 +
        # lr * lam * F). Feeding lam*F*(theta-anchor) through Adam instead
        # lets its per-coordinate normalization blow even a negligible
        # penalty gradient up to full-size steps, which injects noise at
        # every anchored coordinate and wrecks both retention and new-task
        # learning. The proximal form is the same objective, is stable for
        # any lam, and pins coordinates exactly in the lam -> infinity limit.
        prox_denom = 1.0 + cfg.lr * lam * anchor.fisher.astype(dtype)
        theta_prev = anchor.theta_prev
    steps = 0
    for _ in range(cfg.epochs):
        for idx in rng.permutation(len(train_pairs)):
            pair = train_pairs[idx]
            grad = _model_gradient(params, pair, model_cfg)
            new_flat, adam = adam_step(params.flat, grad, adam)
            if consolidate:
                new_flat = theta_prev + (new_flat - theta_prev) / prox_denom
            params = params.with_flat(new_flat)
            steps += 1

    if cfg.strategy == "streak":
        current = buffer.sessions[k].entries
        bundles = [encode_compiled(params, e.payload.parent_idx,
                                   e.payload.time_enc) for e in current]
        buffer.finalize_session(k, bundles)
        fisher = fisher_diagonal(
            params, [e.payload for e in buffer.all_entries()],
            lambda ps, pr: _model_gradient(ps, pr, model_cfg))
        anchor = ConsolidationAnchor(theta_prev=params.flat.copy(),
                                     fisher=fisher.astype(dtype))

    elapsed = time.process_time() - started
    state.ledger.append(SessionLedger(
        session=k, strategy=cfg.strategy, train_samples=len(train_pairs),
        epochs=cfg.epochs, steps=steps, cpu_seconds=elapsed))
    state.params = params
    state.adam = adam
    state.anchor = anchor
    state.buffer = buffer
    state.next_session = k + 1
    return state


# -- evaluation --------------------------------------------------------------


@dataclass
class MetricsReport:
    """Outcome counts over used (moved) and unused objects."""

    moved_correct: int = 0
    moved_wrong: int = 0
    moved_missed: int = 0
    unmoved_correct: int = 0
    unmoved_wrong: int = 0

    @property
    def used_total(self) -> int:
        return self.moved_correct + self.moved_wrong + self.moved_missed

    @property
    def unused_total(self) -> int:
        return self.unmoved_correct + self.unmoved_wrong

    def _pct(self, count: int, total: int) -> float:
        return 100.0 * count / total if total else float("nan")

    @property
    def moved_correct_pct(self) -> float:
        return self._pct(self.moved_correct, self.used_total)

    @property
    def moved_wrong_pct(self) -> float:
        return self._pct(self.moved_wrong, self.used_total)

    @property
    def moved_missed_pct(self) -> float:
        return self._pct(self.moved_missed, self.used_total)

    @property
    def unmoved_correct_pct(self) -> float:
        return self._pct(self.unmoved_correct, self.unused_total)

    @property
    def unmoved_wrong_pct(self) -> float:
        return self._pct(self.unmoved_wrong, self.unused_total)

    def __add__(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(
            self.moved_correct + other.moved_correct,
            self.moved_wrong + other.moved_wrong,
            self.moved_missed + other.moved_missed,
            self.unmoved_correct + other.unmoved_correct,
            self.unmoved_wrong + other.unmoved_wrong)

    def counts(self) -> dict[str, int]:
        return {"moved_correct": self.moved_correct,
                "moved_wrong": self.moved_wrong,
                "moved_missed": self.moved_missed,
                "unmoved_correct": self.unmoved_correct,
                "unmoved_wrong": self.unmoved_wrong}

    def percentages(self) -> dict[str, float]:
        return {"moved_correct": self.moved_correct_pct,
                "moved_wrong": self.moved_wrong_pct,
                "moved_missed": self.moved_missed_pct,
                "unmoved_correct": self.unmoved_correct_pct,
                "unmoved_wrong": self.unmoved_wrong_pct}


def _best_destinations(location_probs: np.ndarray,
                       locations: tuple[str, ...]) -> np.ndarray:
    """Row-wise argmax with ties broken by lowest location id."""
    dest = np.argmax(location_probs, axis=1)
    row_max = location_probs[np.arange(len(dest)), dest]
    tie_rows = np.flatnonzero((location_probs == row_max[:, None]).sum(axis=1) > 1)
    for r in tie_rows:
        ties = np.flatnonzero(location_probs[r] == row_max[r])
        dest[r] = min((locations[i], int(i)) for i in ties)[1]
    return dest


def categorize_pair(move_prob: np.ndarray, location_probs: np.ndarray,
                    pair: CompiledPair, locations: tuple[str, ...],
                    threshold: float) -> MetricsReport:
    """Score one prediction against the observed future snapshot."""
    dest = _best_destinations(location_probs, locations)
    predicted_moved = (move_prob > threshold) & (dest != pair.parent_idx)
    used = pair.moved.astype(bool)
    hit = dest == pair.target_parent_idx
    return MetricsReport(
        moved_correct=int(np.sum(used & predicted_moved & hit)),
        moved_wrong=int(np.sum(used & predicted_moved & ~hit)),
        moved_missed=int(np.sum(used & ~predicted_moved)),
        unmoved_correct=int(np.sum(~used & ~predicted_moved)),
        unmoved_wrong=int(np.sum(~used & predicted_moved)))


def evaluate(params: ParameterSet, test: TaskDataset,
             threshold: float | None = None) -> MetricsReport:
    """Aggregate outcome categories over every test pair at the model's
    horizon."""
    model_cfg = params.cfg
    tau = model_cfg.move_threshold if threshold is None else threshold
    pairs = build_pairs(test, model_cfg.horizon, dtype=params.dtype)
    if not pairs:
        raise ExperimentError(
            f"test dataset {test.task} has no snapshot pairs at "
            f"horizon {model_cfg.horizon}")
    total = MetricsReport()
    locations = test.catalog.locations
    for pair in pairs:
        pred = predict_pair(params, pair)
        total = total + categorize_pair(pred.move_prob, pred.location_probs,
                                        pair, locations, tau)
    return total


@dataclass
class RetentionMatrix:
    """Lower-triangular grid: rows are sessions, columns are test datasets."""

    strategy: str
    rows: list[list[MetricsReport]] = field(default_factory=list)

    def moved_correct(self, session: int, dataset: int) -> float:
        return self.rows[session][dataset].moved_correct_pct

    def diagonal(self) -> list[float]:
        return [self.moved_correct(k, k) for k in range(len(self.rows))]

    def final_row_mean(self) -> float:
        last = self.rows[-1]
        return float(np.mean([cell.moved_correct_pct for cell in last]))

    def render(self) -> str:
        n = len(self.rows)
        header = ["train\\test"] + [f"D{j}" for j in range(n)]
        lines = ["  ".join(f"{h:>11}" for h in header)]
        for k, row in enumerate(self.rows):
            cells = [f"session {k}"]
            for j in range(n):
                if j < len(row):
                    cells.append(f"{row[j].moved_correct_pct:.2f}")
                else:
                    cells.append("-")
            lines.append("  ".join(f"{c:>11}" for c in cells))
        return "\n".join(lines)


@dataclass
class StrategyResult:
    strategy: str
    matrix: RetentionMatrix
    state: SessionState


def run_strategy(train_sets: list[TaskDataset], test_sets: list[TaskDataset],
                 model_cfg: ModelConfig, cfg: TrainingConfig,
                 dtype=np.float32, on_session=None) -> StrategyResult:
    """Run all sessions for one strategy, evaluating on every seen test set
    after each session. ``on_session(state)`` fires after each session, for
    checkpointing."""
    if len(train_sets) != len(test_sets):
        raise ExperimentError("train/test dataset lists differ in length")
    if len(train_sets) < 1:
        raise ExperimentError("need at least one dataset")
    catalog = train_sets[0].catalog
    for ds in list(train_sets) + list(test_sets):
        if ds.catalog != catalog:
            raise ExperimentError("all datasets must share one catalog")

    state = initial_state(model_cfg, len(catalog.objects),
                          len(catalog.locations), cfg, dtype=dtype)
    matrix = RetentionMatrix(strategy=cfg.strategy)
    for k, ds in enumerate(train_sets):
        state = run_session(state, ds, cfg)
        matrix.rows.append([evaluate(state.params, test_sets[j])
                            for j in range(k + 1)])
        if on_session is not None:
            on_session(state)
    return StrategyResult(strategy=cfg.strategy, matrix=matrix, state=state)


def new_task_report(matrix: RetentionMatrix) -> list[float]:
    """Moved-correct percentage on each dataset right after its own session:
    the diagonal of the retention matrix."""
    return matrix.diagonal()


def efficiency_report(ledger: list[SessionLedger]) -> dict:
    """Per-session training-sample counts and CPU time, plus totals."""
    sessions = [{"session": row.session,
                 "train_samples": row.train_samples,
                 "epochs": row.epochs,
                 "steps": row.steps,
                 "cpu_seconds": row.cpu_seconds} for row in ledger]
    return {"strategy": ledger[0].strategy if ledger else None,
            "sessions": sessions,
            "total_samples": sum(r.train_samples for r in ledger),
            "total_cpu_seconds": sum(r.cpu_seconds for r in ledger)}
