"""Catastrophic forgetting, and what consolidation plus rehearsal recover.

Runs two households in sequence at a reduced scale (a few minutes of CPU),
comparing plain sequential fine-tuning against the consolidated, rehearsing
learner. Watch the first household's column after the second session.
"""

from driftlab import (ModelConfig, TrainingConfig, CLHyperparams,
                      builtin_household_suite, generate_dataset,
                      split_train_test, run_strategy)

households = builtin_household_suite(2, seed=42)
trains, tests = [], []
for k, spec in enumerate(households):
    ds = generate_dataset(spec, days=14, sample_interval=10, seed=100 + k,
                          task=k)
    tr, te = split_train_test(ds, 12, 2)
    trains.append(tr)
    tests.append(te)

model_cfg = ModelConfig(embed_dim=16, rounds=1, hidden_dim=64, horizon=10)
for strategy in ("finetuned", "streak"):
    cfg = TrainingConfig(epochs=40, lr=1e-3,
                         hyper=CLHyperparams(lam=200.0, beta=10.0),
                         seed=0, strategy=strategy)
    result = run_strategy(trains, tests, model_cfg, cfg)
    print(f"== {strategy}")
    print(result.matrix.render())
    sizes = [row.train_samples for row in result.state.ledger]
    print(f"per-session training samples: {sizes}\n")
