"""Read estimated relations off a trained model and score them.

Each marker's K most probable descendants under the learned neighbor
distribution become its estimated out-edges; precision and recall are
measured against the simulator's hidden network.
"""

from eventwalk.events import Dataset
from eventwalk.evaluation import reconstruct_network, score_reconstruction
from eventwalk.simulate import SimulationConfig, generate_dataset
from eventwalk.training import TrainConfig, train

data, _ = generate_dataset(
    SimulationConfig(marker_count=20, edge_probability=0.05,
                     sequence_count=150, rng_seed=9)
)
result = train(data, TrainConfig(steps=80, batch_size=8, rng_seed=1))

truth = data.ground_truth
print(f"hidden network has {len(truth.edges)} edges")
print("\n  k  precision  recall      f1")
for k in (1, 2, 3):
    estimated = reconstruct_network(result.generator_store, k)
    rep = score_reconstruction(estimated, truth, k)
    print(f"  {k}     {rep.precision:.4f}  {rep.recall:.4f}  {rep.f1:.4f}")

est = reconstruct_network(result.generator_store, 2)
shown = sorted(est.edges & truth.edges)[:8]
print(f"\ncorrectly recovered edges (first {len(shown)}): {shown}")
