"""Train the relocation model on one household and inspect predictions.

A couple of minutes of CPU time: trains on a handful of days, then shows
the decoded relocations next to the ground truth for the held-out day.
"""

import numpy as np

from driftlab import (ModelConfig, builtin_household_suite, generate_dataset,
                      split_train_test, init_parameters, predict,
                      decode_relocations, extract_relocations, evaluate,
                      TrainingConfig, CLHyperparams)
from driftlab.experiment import initial_state, run_session, build_pairs

spec = builtin_household_suite(1, seed=42)[0]
ds = generate_dataset(spec, days=14, sample_interval=10, seed=5)
train, test = split_train_test(ds, 12, 2)

model_cfg = ModelConfig(embed_dim=16, rounds=1, hidden_dim=64, horizon=10)
cfg = TrainingConfig(epochs=40, lr=1e-3, hyper=CLHyperparams(), seed=0,
                     strategy="finetuned")
state = initial_state(model_cfg, len(spec.catalog.objects),
                      len(spec.catalog.locations), cfg)
print(f"training on {len(build_pairs(train, 10))} pairs x {cfg.epochs} epochs")
state = run_session(state, train, cfg)
print(f"session took {state.ledger[0].cpu_seconds:.0f}s cpu")

report = evaluate(state.params, test)
print("held-out outcome percentages:",
      {k: round(v, 1) for k, v in report.percentages().items()})

# walk the first test day and compare decoded predictions with reality
shown = 0
day = test.day_slice(test.start_day)
for current, target in zip(day, day[1:]):
    pred = predict(current, state.params)
    decoded = decode_relocations(pred, current, model_cfg.move_threshold,
                                 model_cfg.horizon)
    truth = extract_relocations(current, target)
    if decoded or truth:
        hh, mm = divmod(current.minute_of_day, 60)
        fmt = lambda evs: [f"{e.object_id}->{e.to_location}" for e in evs]
        print(f"  {hh:02d}:{mm:02d}  predicted {fmt(decoded)}  "
              f"actual {fmt(truth)}")
        shown += 1
    if shown >= 12:
        break
