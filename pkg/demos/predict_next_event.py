"""Condition on the start of a cascade and predict what happens next.

The observed prefix is replayed through the walk bookkeeping, then the next
event is estimated by averaging one-step draws from the frontier: mean of
the sampled times, mode of the sampled markers.
"""

import numpy as np

from eventwalk.events import Dataset
from eventwalk.evaluation import evaluate_prediction, predict_next
from eventwalk.simulate import SimulationConfig, generate_dataset
from eventwalk.training import Model, TrainConfig, train

data, _ = generate_dataset(
    SimulationConfig(marker_count=20, edge_probability=0.05,
                     sequence_count=150, rng_seed=9)
)
result = train(data, TrainConfig(steps=40, batch_size=8, rng_seed=1))
model = Model(result.generator_store, result.discriminator_store, result.table,
              result.config, result.marker_count, result.config.steps)

seq = max(data.sequences, key=len)
half = len(seq) // 2
t_hat, m_hat = predict_next(model, list(seq.prefix(half)), n_samples=400,
                            rng=np.random.default_rng(0))
truth = seq[half]
print(f"observed {half} of {len(seq)} events")
print(f"predicted next: marker {m_hat} at t={t_hat:.3f}")
print(f"actual next:    marker {truth.marker} at t={truth.time:.3f}")

reports = evaluate_prediction(model, data, ratios=[0.25, 0.5, 0.75],
                              n_samples=100, rng_seed=2)
print("\nratio  time mse  marker acc   n")
for rep in reports:
    print(f" {rep.observed_ratio:.2f}   {rep.time_mse:7.3f}      {rep.marker_accuracy:.4f}"
          f"  {rep.evaluated:3d}")
