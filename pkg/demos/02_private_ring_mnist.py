"""Train a private HD classifier over a ring of 10 MNIST clients.

Run ``python scripts/fetch_mnist.py`` first. Each client visit adds its data
(round 1) or retrains (later rounds), then tops up the noise. The printout
follows accuracy and the carried variance round by round, and the ledger is
checked against the analytic schedule at the end.
"""

from pathlib import Path

from hdfed import experiments as ex

DATA = Path(__file__).resolve().parents[1] / "data" / "mnist"

cfg = ex.ExperimentConfig(
    dataset="mnist", data_path=str(DATA), train_subset=5000, test_subset=2000,
    clients=10, rounds=5, dim=2000, epsilon=1.0, delta0=1e-3, seed=0,
)
result = ex.run_experiment(cfg, write=False)

for m in result.metrics:
    print(f"round {m.round}: accuracy {m.accuracy:.3f}  carried variance {m.cumulative_variance:.4g}  "
          f"blind variance {m.blackbox_variance:.4g}")

baseline = ex.run_experiment(cfg.replace(noise=False), write=False)
print(f"same ring without noise (non-private): {baseline.final_accuracy:.3f}")

params = ex.noise_table_params(cfg)
problems = ex.cross_validate_ledger(list(result.state.ledger), ex.noise_table(params), params)
print("ledger matches schedule" if not problems else problems)
