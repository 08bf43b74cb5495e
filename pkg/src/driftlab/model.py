"""Spatio-temporal relocation model over household snapshots.

The encoder runs a few rounds of message passing along is-in edges
(objects and locations exchange messages through gather/scatter-add), and
embeds the snapshot's time encoding with a learned linear map. Three heads
read the result: a per-object two-class move head, a bilinear
(object state x location embedding) scorer over candidate destinations,
and a context head that predicts the time embedding of the target
snapshot. The loss is the sum of a move-classification cross-entropy, a
destination cross-entropy over the objects that actually moved, and a
cosine embedding loss tying the context vector to the target time.

Heads are zero-initialized, which makes the untrained model's predictions
analytically known: move probability one half, uniform destinations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, stable_softmax
from .graphs import (GraphSnapshot, RelocationEvent, TIME_ENCODING_DIM,
                     time_encoding)


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    rounds: int = 2
    hidden_dim: int = 32
    move_threshold: float = 0.5
    horizon: int = 10  # minutes

    def __post_init__(self):
        if self.embed_dim < 2 or self.rounds < 1 or self.hidden_dim < 1:
            raise ModelError("degenerate model configuration")
        if not 0.0 < self.move_threshold < 1.0:
            raise ModelError("move threshold must lie in (0, 1)")
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")


# parameter tensors zeroed at init; everything else is uniform random
_HEAD_NAMES = frozenset({"w_move", "b_move", "w_score", "w_ctx", "b_ctx"})


def _parameter_shapes(cfg: ModelConfig, n_objects: int,
                      n_locations: int) -> list[tuple[str, tuple[int, ...]]]:
    d, h = cfg.embed_dim, cfg.hidden_dim
    return [
        ("obj_embed", (n_objects, d)),
        ("loc_embed", (n_locations, d)),
        ("w_obj_self", (d, d)),
        ("w_obj_msg", (d, d)),
        ("b_obj", (d,)),
        ("w_loc_self", (d, d)),
        ("w_loc_msg", (d, d)),
        ("b_loc", (d,)),
        ("w_edge_obj", (d, d)),
        ("w_edge_loc", (d, d)),
        ("b_edge", (d,)),
        ("w_time", (TIME_ENCODING_DIM, d)),
        ("b_time", (d,)),
        ("w_state_obj", (d, h)),
        ("w_state_time", (d, h)),
        ("b_state", (h,)),
        ("w_move", (h, 2)),
        ("b_move", (2,)),
        ("w_score", (h, d)),
        ("w_ctx", (d, d)),
        ("b_ctx", (d,)),
    ]


class _Layout:
    """Precomputed name -> (offset, shape, size) table for one model shape."""

    __slots__ = ("shapes", "slots", "total")

    def __init__(self, shapes: list[tuple[str, tuple[int, ...]]]):
        self.shapes = shapes
        self.slots: dict[str, tuple[int, tuple[int, ...], int]] = {}
        offset = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.slots[name] = (offset, shape, n)
            offset += n
        self.total = offset


_LAYOUT_CACHE: dict[tuple, _Layout] = {}


def _layout_for(cfg: ModelConfig, n_objects: int, n_locations: int) -> _Layout:
    key = (cfg, n_objects, n_locations)
    layout = _LAYOUT_CACHE.get(key)
    if layout is None:
        layout = _Layout(_parameter_shapes(cfg, n_objects, n_locations))
        _LAYOUT_CACHE[key] = layout
    return layout


class ParameterSet:
    """Named model parameters backed by one flat vector.

    The name -> slice mapping is fixed by the config and catalog sizes, so
    flattened parameters align across save/load and across the anchors and
    Fisher diagonals used by the consolidation machinery. Per-step parameter
    snapshots share the layout table, keeping the training loop cheap.
    """

    __slots__ = ("cfg", "n_objects", "n_locations", "flat", "_layout")

    def __init__(self, cfg: ModelConfig, n_objects: int, n_locations: int,
                 flat: np.ndarray, layout: _Layout | None = None):
        self.cfg = cfg
        self.n_objects = n_objects
        self.n_locations = n_locations
        self._layout = layout or _layout_for(cfg, n_objects, n_locations)
        if flat.shape != (self._layout.total,):
            raise ModelError(
                f"flat vector has size {flat.shape}, expected ({self._layout.total},)")
        self.flat = flat

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return self._layout.shapes

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def dtype(self):
        return self.flat.dtype

    def view(self, name: str) -> np.ndarray:
        offset, shape, n = self._layout.slots[name]
        return self.flat[offset:offset + n].reshape(shape)

    def with_flat(self, flat: np.ndarray) -> "ParameterSet":
        return ParameterSet(self.cfg, self.n_objects, self.n_locations, flat,
                            layout=self._layout)

    def copy(self) -> "ParameterSet":
        return self.with_flat(self.flat.copy())


def init_parameters(cfg: ModelConfig, n_objects: int, n_locations: int,
                    seed: int, dtype=np.float32) -> ParameterSet:
    """Uniform [-1/sqrt(d), 1/sqrt(d)] init; output heads start at zero."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.embed_dim)
    chunks = []
    for name, shape in _parameter_shapes(cfg, n_objects, n_locations):
        n = int(np.prod(shape))
        if name in _HEAD_NAMES:
            chunks.append(np.zeros(n, dtype=dtype))
        else:
            chunks.append(rng.uniform(-bound, bound, size=n).astype(dtype))
    return ParameterSet(cfg, n_objects, n_locations, np.concatenate(chunks))


@dataclass
class EmbeddingBundle:
    """Encoder outputs for one snapshot: nodes (objects then locations),
    one edge embedding per object, and the time embedding."""

    node_embeddings: np.ndarray   # (n_objects + n_locations, d)
    edge_embeddings: np.ndarray   # (n_objects, d)
    time_embedding: np.ndarray    # (d,)

    def aggregate(self) -> np.ndarray:
        """Mean of every embedding row; the sample's informativeness key."""
        stacked = np.concatenate([self.node_embeddings, self.edge_embeddings,
                                  self.time_embedding.reshape(1, -1)], axis=0)
        return stacked.mean(axis=0)


@dataclass
class PredictedGraph:
    """Decoded prediction for a snapshot at t + horizon."""

    move_prob: np.ndarray        # (n_objects,), in [0, 1]
    location_probs: np.ndarray   # (n_objects, n_locations), rows on the simplex
    context: np.ndarray          # (d,)


@dataclass
class LossBreakdown:
    move: float
    location: float
    context: float

    @property
    def total(self) -> float:
        return self.move + self.location + self.context


@dataclass
class CompiledPair:
    """A (snapshot, snapshot-at-t-plus-horizon) training pair reduced to
    index arrays so the hot training loop never touches graph dictionaries."""

    parent_idx: np.ndarray        # (n_objects,) input parent location indices
    target_parent_idx: np.ndarray  # (n_objects,)
    time_enc: np.ndarray          # (1, TIME_FEATURES)
    target_time_enc: np.ndarray   # (1, TIME_FEATURES)
    moved: np.ndarray             # (n_objects,) int 0/1
    moved_rows: np.ndarray        # indices of moved objects
    target_loc_idx: np.ndarray    # (n_moved,) destination indices
    t: int
    task: int


def compile_pair(current: GraphSnapshot, target: GraphSnapshot,
                 dtype=np.float32) -> CompiledPair:
    if current.catalog != target.catalog:
        raise ModelError("pair spans different catalogs")
    parent_idx = current.parent_indices()
    target_idx = target.parent_indices()
    moved = (parent_idx != target_idx).astype(np.intp)
    moved_rows = np.flatnonzero(moved)
    return CompiledPair(
        parent_idx=parent_idx,
        target_parent_idx=target_idx,
        time_enc=time_encoding(current.t).reshape(1, -1).astype(dtype),
        target_time_enc=time_encoding(target.t).reshape(1, -1).astype(dtype),
        moved=moved,
        moved_rows=moved_rows,
        target_loc_idx=target_idx[moved_rows],
        t=current.t,
        task=current.task)


# the edge transform only feeds the informativeness embeddings, never the
# loss, so the training loop can skip those leaves
_EDGE_NAMES = ("w_edge_obj", "w_edge_loc", "b_edge")


def make_leaves(tape: Tape, params: ParameterSet,
                skip_edges: bool = False) -> dict[str, Tensor]:
    return {name: tape.leaf(params.view(name)) for name, _ in params.shapes
            if not (skip_edges and name in _EDGE_NAMES)}


def _encode_core(tape: Tape, p: dict[str, Tensor], parent_idx: np.ndarray,
                 rounds: int) -> tuple[Tensor, Tensor]:
    """Message-passing rounds; returns final object and location embeddings."""
    h_obj = p["obj_embed"]
    h_loc = p["loc_embed"]
    n_loc = h_loc.shape[0]
    for _ in range(rounds):
        from_loc = tape.gather(h_loc, parent_idx)
        obj_new = tape.relu(
            h_obj.matmul(p["w_obj_self"]) + from_loc.matmul(p["w_obj_msg"])
            + p["b_obj"])
        from_obj = tape.scatter_add(h_obj.matmul(p["w_loc_msg"]), parent_idx, n_loc)
        loc_new = tape.relu(
            h_loc.matmul(p["w_loc_self"]) + from_obj + p["b_loc"])
        h_obj, h_loc = obj_new, loc_new
    return h_obj, h_loc


def _time_embed(tape: Tape, p: dict[str, Tensor], enc: np.ndarray) -> Tensor:
    return tape.leaf(enc).matmul(p["w_time"]) + p["b_time"]


def _context_vector(tape: Tape, p: dict[str, Tensor], h_obj: Tensor,
                    h_loc: Tensor) -> Tensor:
    n_nodes = h_obj.shape[0] + h_loc.shape[0]
    node_sum = h_obj.sum(axis=0) + h_loc.sum(axis=0)
    node_mean = node_sum.scale(1.0 / n_nodes)
    # residual keeps the vector nonzero under zero-initialized head weights,
    # otherwise the cosine loss is undefined at the very first step
    return node_mean + node_mean.matmul(p["w_ctx"]) + p["b_ctx"]


def _forward_heads(tape: Tape, p: dict[str, Tensor], pair: CompiledPair,
                   cfg: ModelConfig, need_scores: bool = True):
    """Shared forward: returns move logits, location scores (None when not
    requested), context vector, and the target-time embedding."""
    h_obj, h_loc = _encode_core(tape, p, pair.parent_idx, cfg.rounds)
    h_time = _time_embed(tape, p, pair.time_enc)
    state = tape.relu(
        h_obj.matmul(p["w_state_obj"]) + h_time.matmul(p["w_state_time"])
        + p["b_state"])
    move_logits = state.matmul(p["w_move"]) + p["b_move"]
    loc_scores = None
    if need_scores:
        loc_scores = state.matmul(p["w_score"]).matmul(h_loc, transpose_b=True)
    context = _context_vector(tape, p, h_obj, h_loc)
    target_time = _time_embed(tape, p, pair.target_time_enc)
    return move_logits, loc_scores, context, target_time


def pair_loss(tape: Tape, leaves: dict[str, Tensor], pair: CompiledPair,
              cfg: ModelConfig) -> tuple[Tensor, LossBreakdown]:
    """Differentiable three-part loss for one training pair.

    The destination cross-entropy averages over the objects that moved;
    with no movement in the window the term (and the scorer forward) drops
    out entirely, which also matches its gradient being zero there.
    """
    any_moved = pair.moved_rows.size > 0
    move_logits, loc_scores, context, target_time = _forward_heads(
        tape, leaves, pair, cfg, need_scores=any_moved)
    l_move = tape.softmax_cross_entropy(move_logits, pair.moved).mean()
    if any_moved:
        moved_scores = tape.gather(loc_scores, pair.moved_rows)
        l_loc = tape.softmax_cross_entropy(moved_scores, pair.target_loc_idx).mean()
    else:
        l_loc = tape.leaf(np.zeros(1))
    l_ctx = tape.cosine_embedding(context, target_time, sign=1)
    total = l_move + l_loc + l_ctx
    parts = LossBreakdown(move=float(l_move.data[0]),
                          location=float(l_loc.data[0]),
                          context=float(l_ctx.data[0]))
    return total, parts


def flat_gradient(tape: Tape, loss: Tensor, leaves: dict[str, Tensor],
                  params: ParameterSet) -> np.ndarray:
    """Loss gradient flattened in the parameter set's canonical order.

    Parameters without a leaf on the tape (see ``make_leaves(skip_edges=...)``)
    get zero gradient slots.
    """
    slots = params._layout.slots
    present = [name for name, _ in params.shapes if name in leaves]
    grads = tape.gradient(loss, [leaves[name] for name in present])
    out = np.zeros(params.size, dtype=params.dtype)
    for name, g in zip(present, grads):
        offset, _, n = slots[name]
        out[offset:offset + n] = g.ravel()
    return out


def encode(snapshot: GraphSnapshot, params: ParameterSet) -> EmbeddingBundle:
    """Full encoder pass including the per-edge embeddings."""
    parent_idx = snapshot.parent_indices()
    if parent_idx.size != params.n_objects:
        raise ModelError("snapshot does not match the embedding tables")
    enc = snapshot.time_encoding.reshape(1, -1).astype(params.dtype)
    return encode_compiled(params, parent_idx, enc)


def predict_pair(params: ParameterSet, pair: CompiledPair) -> PredictedGraph:
    """Forward-only prediction from a compiled pair's input side."""
    tape = Tape(dtype=params.dtype)
    leaves = make_leaves(tape, params)
    move_logits, loc_scores, context, _ = _forward_heads(
        tape, leaves, pair, params.cfg)
    pred = PredictedGraph(
        move_prob=stable_softmax(move_logits.data, axis=1)[:, 1],
        location_probs=stable_softmax(loc_scores.data, axis=1),
        context=context.data.reshape(-1))
    tape.release()
    return pred


def predict(snapshot: GraphSnapshot, params: ParameterSet) -> PredictedGraph:
    """Move probabilities, destination distributions, and context vector."""
    parent_idx = snapshot.parent_indices()
    if parent_idx.size != params.n_objects:
        raise ModelError("snapshot does not match the embedding tables")
    enc = snapshot.time_encoding.reshape(1, -1).astype(params.dtype)
    pair = CompiledPair(
        parent_idx=parent_idx,
        target_parent_idx=parent_idx,
        time_enc=enc,
        target_time_enc=enc,
        moved=np.zeros(params.n_objects, dtype=np.intp),
        moved_rows=np.empty(0, dtype=np.intp),
        target_loc_idx=np.empty(0, dtype=np.intp),
        t=snapshot.t, task=snapshot.task)
    return predict_pair(params, pair)


def encode_compiled(params: ParameterSet, parent_idx: np.ndarray,
                    time_enc: np.ndarray) -> EmbeddingBundle:
    """Encoder pass from precompiled index arrays (no snapshot needed)."""
    tape = Tape(dtype=params.dtype)
    p = make_leaves(tape, params)
    h_obj, h_loc = _encode_core(tape, p, parent_idx, params.cfg.rounds)
    parent_emb = tape.gather(h_loc, parent_idx)
    h_edge = tape.relu(
        h_obj.matmul(p["w_edge_obj"]) + parent_emb.matmul(p["w_edge_loc"])
        + p["b_edge"])
    h_time = _time_embed(tape, p, time_enc)
    nodes = np.concatenate([h_obj.data, h_loc.data], axis=0)
    bundle = EmbeddingBundle(node_embeddings=nodes,
                             edge_embeddings=h_edge.data,
                             time_embedding=h_time.data.reshape(-1))
    tape.release()
    return bundle


def model_loss(pred: PredictedGraph, target: GraphSnapshot,
               current: GraphSnapshot,
               target_context: np.ndarray) -> LossBreakdown:
    """Loss of an already-decoded prediction against the observed future.

    Mirrors the differentiable path: move cross-entropy over all objects,
    destination cross-entropy over the objects that moved (zero when none
    did), and cosine distance between the predicted context vector and the
    target-time embedding.
    """
    if current.catalog != target.catalog:
        raise ModelError("snapshots come from different catalogs")
    parent_idx = current.parent_indices()
    target_idx = target.parent_indices()
    moved = parent_idx != target_idx

    p_move = np.where(moved, pred.move_prob, 1.0 - pred.move_prob)
    with np.errstate(divide="ignore"):
        l_move = float(np.mean(-np.log(p_move)))
        if moved.any():
            rows = np.flatnonzero(moved)
            l_loc = float(np.mean(-np.log(
                pred.location_probs[rows, target_idx[rows]])))
        else:
            l_loc = 0.0
    ctx = pred.context.reshape(-1)
    tgt = np.asarray(target_context, dtype=float).reshape(-1)
    na, nb = np.linalg.norm(ctx), np.linalg.norm(tgt)
    if na == 0.0 or nb == 0.0:
        raise ModelError("cosine undefined for a zero context vector")
    l_ctx = float(1.0 - (ctx @ tgt) / (na * nb))
    return LossBreakdown(move=l_move, location=l_loc, context=l_ctx)


def target_time_context(params: ParameterSet, t_minutes: int) -> np.ndarray:
    """Time embedding for an arbitrary timestamp, for use as a cosine target."""
    tape = Tape(dtype=params.dtype)
    p = make_leaves(tape, params)
    enc = time_encoding(t_minutes).reshape(1, -1).astype(params.dtype)
    out = _time_embed(tape, p, enc).data.reshape(-1)
    tape.release()
    return out


def _argmax_lowest_id(row: np.ndarray, locations: tuple[str, ...]) -> int:
    best = int(np.argmax(row))
    top = row[best]
    ties = np.flatnonzero(row == top)
    if ties.size > 1:
        best = min((locations[i], int(i)) for i in ties)[1]
    return best


def decode_relocations(pred: PredictedGraph, current: GraphSnapshot,
                       threshold: float, horizon: int) -> list[RelocationEvent]:
    """Thresholded decoding: an object is predicted to move when its move
    probability exceeds the threshold and its best-scored destination is
    not where it already is. Score ties go to the lowest location id."""
    catalog = current.catalog
    parent_idx = current.parent_indices()
    events = []
    for i, obj in enumerate(catalog.objects):
        if pred.move_prob[i] <= threshold:
            continue
        dest = _argmax_lowest_id(pred.location_probs[i], catalog.locations)
        if dest == parent_idx[i]:
            continue
        events.append(RelocationEvent(
            object_id=obj,
            from_location=catalog.locations[parent_idx[i]],
            to_location=catalog.locations[dest],
            t_from=current.t, t_to=current.t + horizon))
    return events
