"""Reservoir computing with a chain of driven, coupled Duffing oscillators."""

from .dynamics import DriveConfig, InputSignal, NumericalBlowup, State, integrate
from .network import (CANONICAL_SEED, NetworkConfig, NetworkInstance, PerturbationSpec,
                      build_network, perturb_network)
from .parity import (ParityTaskConfig, evaluate_parity, generate_binary_input,
                     memory_capacity, mutual_information, parity_benchmark, train_parity)
from .readout import (EnvelopeMatrix, ReadoutModel, SimulationConfig, SolveFailure,
                      SubsectionLayout, design_lowpass, extract_envelopes, solve_weights)

__version__ = "0.1.0"
