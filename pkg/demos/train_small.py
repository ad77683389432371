"""Train the generator against a discriminator on a toy dataset.

Fifty steps on a 20-marker network is enough to watch the alternating
objectives move; real runs use the command line (see the README) with a
config file and a couple thousand steps.
"""

from eventwalk.events import Dataset
from eventwalk.simulate import SimulationConfig, generate_dataset
from eventwalk.training import TrainConfig, train

data, _ = generate_dataset(
    SimulationConfig(marker_count=20, edge_probability=0.05,
                     sequence_count=150, rng_seed=9)
)
print(f"dataset: {len(data.sequences)} cascades over {data.marker_count} markers")

cfg = TrainConfig(
    steps=50,
    batch_size=8,
    rng_seed=1,
)
result = train(data, cfg)

print("\nstep  generator  discriminator")
for step, gen_val, disc_val, _ in result.metrics[::10]:
    print(f"{step:4d}  {gen_val:9.4f}  {disc_val:13.4f}")

first = [m[1] for m in result.metrics[:12]]
last = [m[1] for m in result.metrics[-12:]]
print(f"\ngenerator objective, first dozen mean {sum(first)/12:.4f}"
      f" vs last dozen mean {sum(last)/12:.4f}")
