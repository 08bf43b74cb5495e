"""Command-line front end.

Subcommands: ``simulate`` writes household snapshot streams, ``train`` runs
learning sessions and checkpoints each one, ``evaluate`` scores checkpoints
into retention/new-task reports, ``report`` renders saved reports as text
tables, and ``project-buffer`` emits the rehearsal-memory growth curve.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .continual import CLHyperparams, buffer_size_forecast
from .experiment import (ExperimentError, RetentionMatrix, TrainingConfig,
                         build_pairs, efficiency_report, evaluate,
                         initial_state, run_session)
from .model import ModelConfig
from .simulate import (SimulationError, builtin_household_suite,
                       generate_dataset, split_train_test)
from .storage import (DataError, DatasetFile, load_checkpoint, load_dataset,
                      projection_csv, retention_csv, retention_json,
                      save_checkpoint, write_dataset, write_report_json,
                      atomic_write_text)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _model_config(cfg: ExperimentConfig, delta: int | None) -> ModelConfig:
    m = cfg.model
    return ModelConfig(embed_dim=m.embed_dim, rounds=m.rounds,
                       hidden_dim=m.hidden_dim, move_threshold=m.move_threshold,
                       horizon=m.horizon if delta is None else delta)


def _training_config(cfg: ExperimentConfig, strategy: str | None,
                     seed: int) -> TrainingConfig:
    t = cfg.training
    return TrainingConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                          hyper=CLHyperparams(lam=t.lam, beta=t.beta),
                          seed=seed,
                          strategy=strategy if strategy else t.strategy)


def _load_datasets(paths: list[str]) -> list[DatasetFile]:
    if not paths:
        raise DataError("no dataset files given")
    files = [load_dataset(p) for p in paths]
    files.sort(key=lambda f: f.task)
    tasks = [f.task for f in files]
    if tasks != list(range(len(files))):
        raise DataError(f"dataset task ids must be 0..{len(files) - 1}, got {tasks}")
    catalog = files[0].catalog
    for f in files[1:]:
        if f.catalog != catalog:
            raise DataError(
                f"dataset {f.name} uses a different catalog; all sessions "
                "must share one vocabulary")
    return files


def _checkpoint_path(out: Path, strategy: str, seed: int, session: int) -> Path:
    return out / f"checkpoint_{strategy}_seed{seed}_session{session}.ckpt"


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim = cfg.simulator
    seed = sim.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    households = builtin_household_suite(sim.households, seed=seed)
    for k, spec in enumerate(households):
        ds = generate_dataset(spec, days=sim.days,
                              sample_interval=sim.sample_interval,
                              seed=seed + 1000 * (k + 1), task=k)
        train, test = split_train_test(ds, sim.train_days, sim.test_days)
        path = out / f"household_{k}.jsonl"
        write_dataset(path, spec.name, seed, train, test)
        print(f"wrote {path} ({len(train)} train / {len(test)} test snapshots)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    files = _load_datasets(args.datasets)
    model_cfg = _model_config(cfg, args.delta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else cfg.training.seeds
    catalog = files[0].catalog

    for seed in seeds:
        tcfg = _training_config(cfg, args.strategy, seed)
        state = None
        start_k = 0
        if args.resume:
            state, ck_seed = load_checkpoint(
                args.resume,
                pair_lookup=_pair_lookup(files, model_cfg))
            if ck_seed != seed or state.strategy != tcfg.strategy:
                raise DataError(
                    f"checkpoint {args.resume} holds strategy "
                    f"{state.strategy!r} seed {ck_seed}, asked for "
                    f"{tcfg.strategy!r} seed {seed}")
            start_k = state.next_session
            if tcfg.strategy == "joint":
                for f in files[:start_k]:
                    state.joint_pairs.extend(
                        build_pairs(f.train, model_cfg.horizon,
                                    dtype=state.params.dtype))
        if state is None:
            state = initial_state(model_cfg, len(catalog.objects),
                                  len(catalog.locations), tcfg)
        for k in range(start_k, len(files)):
            state = run_session(state, files[k].train, tcfg)
            save_checkpoint(
                _checkpoint_path(out, tcfg.strategy, seed, k), state, seed)
            row = state.ledger[-1]
            print(f"seed {seed} session {k} [{tcfg.strategy}]: "
                  f"{row.train_samples} samples, {row.cpu_seconds:.1f}s cpu")
        ledger_path = out / f"ledger_{tcfg.strategy}_seed{seed}.json"
        write_report_json(ledger_path, efficiency_report(state.ledger))
        print(f"wrote {ledger_path}")
    return EXIT_OK


def _pair_lookup(files: list[DatasetFile], model_cfg: ModelConfig):
    cache: dict[int, list] = {}

    def lookup(session: int, index: int):
        if session not in cache:
            cache[session] = build_pairs(files[session].train, model_cfg.horizon)
        return cache[session][index]

    return lookup


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    files = _load_datasets(args.datasets)
    model_cfg = _model_config(cfg, args.delta)
    out = Path(args.out)
    seeds = [args.seed] if args.seed is not None else cfg.training.seeds
    strategies = [args.strategy] if args.strategy else [cfg.training.strategy]

    all_json = {}
    matrices_for_csv: dict[str, RetentionMatrix] = {}
    for strategy in strategies:
        for seed in seeds:
            matrix = RetentionMatrix(strategy=strategy)
            for k in range(len(files)):
                path = _checkpoint_path(out, strategy, seed, k)
                if not path.exists():
                    raise DataError(f"missing checkpoint {path}")
                state, _ = load_checkpoint(path)
                row = [evaluate(state.params, files[j].test)
                       for j in range(k + 1)]
                matrix.rows.append(row)
            key = f"{strategy}_seed{seed}"
            matrices_for_csv[key] = matrix
            all_json[key] = retention_json({key: matrix})[key]
            if args.render:
                print(f"== {key}")
                print(matrix.render())

    csv_path = out / "retention.csv"
    atomic_write_text(csv_path, retention_csv(matrices_for_csv))
    json_path = out / "retention.json"
    write_report_json(json_path, all_json)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    json_path = out / "retention.json"
    if not json_path.exists():
        raise DataError(f"no retention report at {json_path}; run evaluate first")
    with open(json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    for key, entry in sorted(payload.items()):
        print(f"== {key}")
        rows: dict[int, dict[int, float]] = {}
        for cell in entry["cells"]:
            rows.setdefault(cell["trained_through"], {})[cell["test_dataset"]] = \
                cell["percentages"]["moved_correct"]
        n = max(rows) + 1
        print("  ".join(f"{h:>10}" for h in ["train\\test"] + [f"D{j}" for j in range(n)]))
        for k in range(n):
            cells = [f"session {k}"]
            for j in range(n):
                cells.append(f"{rows[k][j]:.2f}" if j in rows.get(k, {}) else "-")
            print("  ".join(f"{c:>10}" for c in cells))
        print(f"new-task diagonal: "
              + ", ".join(f"{v:.2f}" for v in entry["new_task"]))
        print(f"final-row mean moved-correct: "
              f"{entry['final_row_mean_moved_correct']:.2f}")
    for ledger_file in sorted(out.glob("ledger_*.json")):
        with open(ledger_file, "r", encoding="utf-8") as fh:
            ledger = json.load(fh)
        print(f"== {ledger_file.name}")
        for row in ledger["sessions"]:
            print(f"  session {row['session']}: {row['train_samples']} samples, "
                  f"{row['cpu_seconds']:.1f}s cpu")
        print(f"  totals: {ledger['total_samples']} samples, "
              f"{ledger['total_cpu_seconds']:.1f}s cpu")
    return EXIT_OK


def cmd_project_buffer(args) -> int:
    sizes = buffer_size_forecast(args.mean_size, args.beta, args.sessions)
    measured = None
    if args.ledger:
        with open(args.ledger, "r", encoding="utf-8") as fh:
            ledger = json.load(fh)
        measured = {row["session"]: row["train_samples"]
                    for row in ledger["sessions"]}
    text = projection_csv(sizes, measured)
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="Continual learning of household object-relocation routines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate household snapshot streams")
    p.add_argument("--config", default=None, help="config file (YAML/JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override simulator seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run learning sessions over datasets")
    p.add_argument("datasets", nargs="+", help="household .jsonl files")
    p.add_argument("--config", default=None)
    p.add_argument("--strategy", choices=["streak", "finetuned", "joint"],
                   default=None)
    p.add_argument("--delta", type=int, default=None,
                   help="prediction horizon in minutes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory for checkpoints")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on test splits")
    p.add_argument("datasets", nargs="+", help="household .jsonl files")
    p.add_argument("--config", default=None)
    p.add_argument("--strategy", choices=["streak", "finetuned", "joint"],
                   default=None)
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory with checkpoints")
    p.add_argument("--render", action="store_true",
                   help="print retention matrices as text tables")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render saved reports as text")
    p.add_argument("--out", required=True, help="run directory with reports")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("project-buffer", help="project rehearsal-buffer growth")
    p.add_argument("--mean-size", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--ledger", default=None,
                   help="training ledger JSON with measured sizes")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_project_buffer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SimulationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
