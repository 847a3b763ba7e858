"""A small contamination study: 10% of the sample comes from N(15, 3).

Uses the shipped case_i scenario with fewer replications so it finishes in
about a minute.  The full run is `sdive simulate --config <case_i.cfg>`.

Run: python3 demos/contamination.py
"""

import dataclasses

from sdive import load_config, run_simulation
from sdive.simulation import shipped_config

cfg = dataclasses.replace(load_config(shipped_config("case_i.cfg")), replications=40,
                          alpha_grid=(0.0, 0.3, 0.5, 1.0), lambda_grid=(-0.5, 0.0))
rep = run_simulation(cfg)
print(f"{cfg.replications} replications, n={cfg.n}, {cfg.epsilon:.0%} from {cfg.contaminant}")
print("  alpha lambda  mse(mu)  mse(sigma)")
for a, lam in cfg.cells():
    mu, sg = rep.cell(a, lam, "mu"), rep.cell(a, lam, "sigma")
    print(f"  {a:5.2f} {lam:6.2f} {mu['mse']:8.3f} {sg['mse']:10.3f}")
