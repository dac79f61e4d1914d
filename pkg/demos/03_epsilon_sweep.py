"""Accuracy against the privacy budget on the MNIST subset.

Three seeds per value keep this under a minute. Each value gets its own
derived seeds, so no two runs share random state.
"""

from pathlib import Path

from hdfed import experiments as ex

DATA = Path(__file__).resolve().parents[1] / "data" / "mnist"

base = ex.ExperimentConfig(
    dataset="mnist", data_path=str(DATA), train_subset=5000, test_subset=2000,
    clients=10, rounds=5, dim=2000, delta0=1e-9, seeds=[0, 1, 2], eval="final",
)
for s in ex.run_sweep(base, "epsilon", [10.0, 1.0, 0.1, 0.01], write=False):
    print(f"eps={s.value:<5}  accuracy {s.mean_accuracy:.3f} +- {s.std_accuracy:.3f}  "
          f"final variance {s.final_cumulative_variance:.3g}")
