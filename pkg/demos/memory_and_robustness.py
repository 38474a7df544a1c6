"""Memory capacity and robustness of the trained readout.

First scores the delayed-P3 family and sums the mutual information into a
memory capacity. Then swaps in a chain with perturbed Q or omega0 after
training and keeps the weights frozen: Q barely matters, omega0 does.
Takes about two minutes.
"""

from duffing_rc import (DriveConfig, NetworkConfig, ParityTaskConfig, build_network,
                        mutual_information, parity_benchmark)
from duffing_rc.experiments import RobustnessSpec, run_robustness

out = parity_benchmark(build_network(NetworkConfig()), DriveConfig(), ParityTaskConfig(),
                       orders=(3,), delays=range(5))
for d in range(5):
    label = "P3" if d == 1 else f"P3_delay{d}"
    p = out[label].success_prob
    print(f"delay {d}: success {p:.3f}, MI {mutual_information(p):.3f} bits")
print(f"memory capacity: {out['memory_capacity']:.2f} bits")

for parameter in ("Q", "omega0"):
    spec = RobustnessSpec(parameter, (0.0, 1e-2, 1e-1), "post_training", replicas=3)
    curve = run_robustness(spec)["P3"]
    pairs = ", ".join(f"sigma={s:g}: {m:.3f}" for s, m in zip(curve.sigma, curve.mean))
    print(f"P3 after perturbing {parameter}: {pairs}")
