"""How generation cost scales with sequence length and vocabulary size.

Sequence generation does constant work per emitted event at fixed K, so
time-per-sequence should sit on a line in T, and growing the marker count a
hundredfold should cost far less than a hundredfold slowdown.
"""

from eventwalk.evaluation import BenchmarkGrid, benchmark_scaling

grid = BenchmarkGrid(
    marker_counts=(50, 500),
    sequence_lengths=(5, 25, 50),
    reps=5,
    include_training=False,
)
result = benchmark_scaling(grid)

print("markers  length  ms/sequence")
for row in result.rows:
    print(f"{row.marker_count:7d}  {row.sequence_length:6d}"
          f"  {row.gen_seconds_per_sequence * 1000:11.2f}")

print("\nline fit of time vs length:")
for M, r2 in result.length_fit_r2.items():
    print(f"  {M} markers: R^2 = {r2:.4f}")
