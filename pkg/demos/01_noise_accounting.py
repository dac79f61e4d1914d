"""How much noise does the ring carry, and how much would it carry blind?

Prints the analytic schedule for 100 clients over 3 rounds with 600 samples
each (eps=0.4, delta0=1e-3, D=10 000). A client that can read the ledger adds
only the missing variance, so the total tracks the requirement. A client that
cannot adds the full requirement every time and the total explodes with ln m!.
"""

import numpy as np

from hdfed import accountant as acc
from hdfed.experiments import noise_table

params = acc.PrivacyParams(epsilon=0.4, delta0=1e-3, dim=10_000, samples_per_client=600, clients=100, rounds=3)
rows = noise_table(params)

print(f"{'r':>2} {'k':>4} {'added':>14} {'cumulative':>14} {'blackbox':>16} {'blackbox/req':>12}")
for row in rows:
    if row.client in (1, 2, 50, 100):
        print(f"{row.round:>2} {row.client:>4} {row.incremental:14.6g} {row.cumulative:14.6g} "
              f"{row.blackbox:16.6g} {row.blackbox / row.required:12.1f}")

# The first client pays almost everything; later clients add a sliver.
added = acc.incremental_variances(params)
print(f"\nshare of the final variance added by client (1, 1): {added[0] / added.sum():.1%}")
print(f"smallest single addition: {added.min():.4g} (step {int(np.argmin(added)) + 1})")
