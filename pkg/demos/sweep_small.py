"""A coarse amplitude/period sweep written to CSV and JSON.

Three amplitudes by three input periods on a 100-oscillator chain. Rerunning
with the same output directory resumes from the CSV instead of recomputing.
"""

import sys
import tempfile
from pathlib import Path

from duffing_rc import NetworkConfig
from duffing_rc.experiments import ParityExperiment, SweepSpec, run_sweep

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
base = ParityExperiment(network=NetworkConfig(n_oscillators=100), orders=(2, 3), sections=5)
spec = SweepSpec(a_values=(0.4, 0.8, 1.2), t_values=(40.0, 65.0, 100.0), base=base)
grid = run_sweep(spec, out)

for label, prob in grid.prob.items():
    print(f"{label} success (rows A={list(spec.a_values)}, columns T={list(spec.t_values)}):")
    for a, row in zip(spec.a_values, prob):
        print(f"  A={a:<4} " + "  ".join(f"{p:.3f}" for p in row))
print(f"results in {out}")
