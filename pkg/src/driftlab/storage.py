"""Serialization: snapshot streams, checkpoints, and report files.

Snapshot streams use JSON-lines (one header record, then one record per
snapshot), which is streamable and diff-friendly. Checkpoints are a single
versioned binary container: magic, version, a JSON manifest, then raw
array bytes, so a round-trip is bitwise exact. All writes go through a
temp file and an atomic rename; a partial file never parses.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .continual import BufferEntry, ConsolidationAnchor, MemoryBuffer, SessionMemory
from .experiment import SessionLedger, SessionState
from .graphs import EntityCatalog, GraphSnapshot, validate_snapshot
from .model import ModelConfig, ParameterSet
from .optim import AdamState
from .simulate import TaskDataset

CHECKPOINT_MAGIC = b"DLCK"
CHECKPOINT_VERSION = 1


class DataError(Exception):
    """Malformed or inconsistent data files."""


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- snapshot streams --------------------------------------------------------


@dataclass
class DatasetFile:
    """One household's stream split into its train and test portions."""

    name: str
    task: int
    seed: int
    train: TaskDataset
    test: TaskDataset

    @property
    def catalog(self) -> EntityCatalog:
        return self.train.catalog


def dataset_to_jsonl(name: str, seed: int, train: TaskDataset,
                     test: TaskDataset) -> str:
    catalog = train.catalog
    header = {
        "type": "header",
        "name": name,
        "task": train.task,
        "seed": seed,
        "days": train.days + test.days,
        "train_days": train.days,
        "test_days": test.days,
        "sample_interval": train.sample_interval,
        "skipped_moves": train.skipped_moves + test.skipped_moves,
        "catalog": {
            "objects": list(catalog.objects),
            "locations": list(catalog.locations),
            "root": catalog.root,
        },
    }
    lines = [json.dumps(header, sort_keys=True)]
    for split, ds in (("train", train), ("test", test)):
        for snap in ds.snapshots:
            lines.append(json.dumps(
                {"type": "snapshot", "t": snap.t, "day": snap.day,
                 "split": split, "parents": snap.parents}, sort_keys=True))
    return "\n".join(lines) + "\n"


def write_dataset(path: str | Path, name: str, seed: int,
                  train: TaskDataset, test: TaskDataset) -> None:
    atomic_write_text(path, dataset_to_jsonl(name, seed, train, test))


def load_dataset(path: str | Path) -> DatasetFile:
    """Parse a JSON-lines stream; parse errors name the offending line."""
    path = Path(path)
    header = None
    rows: dict[str, list[GraphSnapshot]] = {"train": [], "test": []}
    catalog = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            kind = record.get("type")
            if kind == "header":
                if header is not None:
                    raise DataError(f"{path}:{lineno}: duplicate header")
                header = record
                cat = record["catalog"]
                catalog = EntityCatalog(objects=tuple(cat["objects"]),
                                        locations=tuple(cat["locations"]),
                                        root=cat["root"])
            elif kind == "snapshot":
                if header is None:
                    raise DataError(f"{path}:{lineno}: snapshot before header")
                split = record.get("split")
                if split not in rows:
                    raise DataError(f"{path}:{lineno}: unknown split {split!r}")
                snap = GraphSnapshot(catalog=catalog, task=header["task"],
                                     t=record["t"], parents=record["parents"])
                problems = validate_snapshot(snap)
                if problems:
                    raise DataError(f"{path}:{lineno}: invalid snapshot: {problems}")
                rows[split].append(snap)
            else:
                raise DataError(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is None:
        raise DataError(f"{path}: missing header record")

    interval = header["sample_interval"]
    train = TaskDataset(task=header["task"], catalog=catalog,
                        snapshots=rows["train"], days=header["train_days"],
                        sample_interval=interval,
                        skipped_moves=header.get("skipped_moves", 0))
    test = TaskDataset(task=header["task"], catalog=catalog,
                       snapshots=rows["test"], days=header["test_days"],
                       sample_interval=interval,
                       start_day=header["train_days"])
    for split_name, ds, expect_days in (("train", train, header["train_days"]),
                                        ("test", test, header["test_days"])):
        if len(ds.snapshots) != expect_days * ds.snapshots_per_day:
            raise DataError(
                f"{path}: {split_name} split has {len(ds.snapshots)} snapshots, "
                f"expected {expect_days * ds.snapshots_per_day}")
    return DatasetFile(name=header["name"], task=header["task"],
                       seed=header["seed"], train=train, test=test)


# -- checkpoints -------------------------------------------------------------


def _array_section(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        manifest.append({"name": name, "dtype": str(arr.dtype),
                         "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    return manifest, b"".join(blobs)


def save_checkpoint(path: str | Path, state: SessionState, seed: int) -> None:
    """Serialize a session state to the single-file binary container."""
    params = state.params
    arrays: dict[str, np.ndarray] = {"params": params.flat}
    adam = state.adam
    if adam.m is not None:
        arrays["adam_m"] = adam.m
        arrays["adam_v"] = adam.v
    if state.anchor is not None:
        arrays["anchor_theta"] = state.anchor.theta_prev
        arrays["anchor_fisher"] = state.anchor.fisher
    buffer_meta = None
    if state.buffer is not None:
        buffer_meta = []
        for j, mem in sorted(state.buffer.sessions.items()):
            if mem.center is not None:
                arrays[f"buffer_center_{j}"] = mem.center
            buffer_meta.append({
                "session": j,
                "original_size": mem.original_size,
                "finalized": mem.center is not None,
                "entries": [[e.index, e.distance] for e in mem.entries],
            })
    rng_state = np.random.default_rng([seed, state.next_session, 0]) \
        .bit_generator.state

    manifest, payload = _array_section(arrays)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "strategy": state.strategy,
        "next_session": state.next_session,
        "seed": seed,
        "model_config": {
            "embed_dim": params.cfg.embed_dim,
            "rounds": params.cfg.rounds,
            "hidden_dim": params.cfg.hidden_dim,
            "move_threshold": params.cfg.move_threshold,
            "horizon": params.cfg.horizon,
        },
        "n_objects": params.n_objects,
        "n_locations": params.n_locations,
        "param_shapes": [[name, list(shape)] for name, shape in params.shapes],
        "dtype": str(params.dtype),
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                 "eps": adam.eps, "t": adam.t, "has_moments": adam.m is not None},
        "rng_state": rng_state,
        "buffer": buffer_meta,
        "ledger": [{"session": r.session, "strategy": r.strategy,
                    "train_samples": r.train_samples, "epochs": r.epochs,
                    "steps": r.steps, "cpu_seconds": r.cpu_seconds}
                   for r in state.ledger],
        "arrays": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = (CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head))
            + head + payload)
    atomic_write_bytes(path, blob)


def load_checkpoint(path: str | Path,
                    pair_lookup=None) -> tuple[SessionState, int]:
    """Load a checkpoint. Returns (state, seed).

    ``pair_lookup(session, index)`` rematerializes buffer sample payloads
    from the training datasets; without it buffer payloads stay None (fine
    for evaluation-only use).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", blob[4:16])
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: checkpoint format version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        header = json.loads(blob[16:16 + head_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint manifest: {exc}") from None
    payload = blob[16 + head_len:]

    arrays = {}
    for item in header["arrays"]:
        raw = payload[item["offset"]:item["offset"] + item["nbytes"]]
        if len(raw) != item["nbytes"]:
            raise DataError(f"{path}: truncated array payload {item['name']!r}")
        arrays[item["name"]] = np.frombuffer(raw, dtype=item["dtype"]) \
            .reshape(item["shape"]).copy()

    mc = header["model_config"]
    model_cfg = ModelConfig(embed_dim=mc["embed_dim"], rounds=mc["rounds"],
                            hidden_dim=mc["hidden_dim"],
                            move_threshold=mc["move_threshold"],
                            horizon=mc["horizon"])
    params = ParameterSet(model_cfg, header["n_objects"],
                          header["n_locations"], arrays["params"])
    stored_shapes = [(name, tuple(shape))
                     for name, shape in header["param_shapes"]]
    if stored_shapes != params.shapes:
        raise DataError(f"{path}: parameter layout does not match the model "
                        "configuration")
    ad = header["adam"]
    adam = AdamState(lr=ad["lr"], beta1=ad["beta1"], beta2=ad["beta2"],
                     eps=ad["eps"], t=ad["t"],
                     m=arrays.get("adam_m"), v=arrays.get("adam_v"))
    anchor = None
    if "anchor_theta" in arrays:
        anchor = ConsolidationAnchor(theta_prev=arrays["anchor_theta"],
                                     fisher=arrays["anchor_fisher"])
    buffer = None
    if header["buffer"] is not None:
        buffer = MemoryBuffer()
        for meta in header["buffer"]:
            j = meta["session"]
            entries = []
            for index, distance in meta["entries"]:
                payload_obj = None
                if pair_lookup is not None:
                    payload_obj = pair_lookup(j, index)
                entries.append(BufferEntry(origin=j, index=index,
                                           payload=payload_obj,
                                           distance=distance))
            buffer.sessions[j] = SessionMemory(
                original_size=meta["original_size"],
                center=arrays.get(f"buffer_center_{j}"),
                entries=entries)

    ledger = [SessionLedger(**row) for row in header["ledger"]]
    state = SessionState(strategy=header["strategy"],
                         next_session=header["next_session"],
                         model_cfg=model_cfg, params=params, adam=adam,
                         anchor=anchor, buffer=buffer, ledger=ledger)
    return state, header["seed"]


# -- reports -----------------------------------------------------------------

EVALUATION_CSV_COLUMNS = ("strategy", "trained_through", "test_dataset",
                          "moved_correct", "moved_wrong", "moved_missed",
                          "unmoved_correct", "unmoved_wrong")


def retention_csv(matrices: dict[str, "RetentionMatrix"]) -> str:
    lines = [",".join(EVALUATION_CSV_COLUMNS)]
    for strategy in sorted(matrices):
        matrix = matrices[strategy]
        for k, row in enumerate(matrix.rows):
            for j, cell in enumerate(row):
                pct = cell.percentages()
                lines.append(",".join([
                    strategy, str(k), str(j),
                    f"{pct['moved_correct']:.2f}", f"{pct['moved_wrong']:.2f}",
                    f"{pct['moved_missed']:.2f}",
                    f"{pct['unmoved_correct']:.2f}",
                    f"{pct['unmoved_wrong']:.2f}"]))
    return "\n".join(lines) + "\n"


def retention_json(matrices: dict[str, "RetentionMatrix"]) -> dict:
    out = {}
    for strategy in sorted(matrices):
        matrix = matrices[strategy]
        cells = []
        for k, row in enumerate(matrix.rows):
            for j, cell in enumerate(row):
                cells.append({"trained_through": k, "test_dataset": j,
                              "counts": cell.counts(),
                              "percentages": cell.percentages()})
        out[strategy] = {
            "cells": cells,
            "new_task": matrix.diagonal(),
            "final_row_mean_moved_correct": matrix.final_row_mean(),
        }
    return out


def write_report_json(path: str | Path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def projection_csv(projected: list[float],
                   measured: dict[int, int] | None = None) -> str:
    columns = "session,projected_size" + (",measured_size" if measured else "")
    lines = [columns]
    for k, size in enumerate(projected):
        row = f"{k},{size:.3f}"
        if measured:
            row += f",{measured[k]}" if k in measured else ","
        lines.append(row)
    return "\n".join(lines) + "\n"
