"""
Switching modules off
=====================

Runs the full method and each single-module ablation for one seed and
compares server retrieval and the mean client metric. Takes about half a
minute.
"""

from fedafd import RunConfig
from fedafd.experiments import ablation_grid, run_grid

rows = run_grid(RunConfig(), ablation_grid())
print(f"{'variant':<8} {'server rsum':>12} {'client mean':>12}")
for label, result in rows:
    last = result.records[-1].report
    print(f"{label:<8} {last.server_rsum:12.2f} {last.mean_client_score:12.3f}")
