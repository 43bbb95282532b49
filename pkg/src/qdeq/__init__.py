"""Equilibrium-model training for parametrized-quantum-circuit classifiers.

The forward pass solves for a fixed point of an input-injected quantum layer
(dense statevector simulation, Broyden root finding); the backward pass uses
implicit differentiation instead of unrolled backpropagation.
"""

from .bounds import (
    BoundReport,
    estimate_lipschitz,
    renormalization_shift,
    trace_distance,
    verify_amplitude_overlap,
    verify_angle_overlap,
    verify_contraction_bound,
    verify_trig_inequality,
)
from .deqsolve import (
    BroydenConfig,
    FixedPointResult,
    broyden_root,
    direct_unroll,
    forward_fixed_point,
    implicit_backward,
    jacobian_frobenius_estimate,
    universality_stack,
)
from .encoding import EncodingSpec, amplitude_encode, angle_encode, inject
from .measurement import ObservableEnsemble, UpsampleMap, expect_ensemble, upsample
from .qmodel import QuantumModel, build_block4, build_default_model, build_staircase10
from .simcore import (
    GateOp,
    ParamCircuit,
    StateVector,
    adjoint_gradients,
    apply_circuit,
    parameter_shift_grad,
    random_layer,
)
from .training import ClassifierHead, RunMetrics, TrainConfig, evaluate, train

__all__ = [
    "BoundReport",
    "BroydenConfig",
    "ClassifierHead",
    "EncodingSpec",
    "FixedPointResult",
    "GateOp",
    "ObservableEnsemble",
    "ParamCircuit",
    "QuantumModel",
    "RunMetrics",
    "StateVector",
    "TrainConfig",
    "UpsampleMap",
    "adjoint_gradients",
    "amplitude_encode",
    "angle_encode",
    "apply_circuit",
    "broyden_root",
    "build_block4",
    "build_default_model",
    "build_staircase10",
    "direct_unroll",
    "estimate_lipschitz",
    "evaluate",
    "expect_ensemble",
    "forward_fixed_point",
    "implicit_backward",
    "inject",
    "jacobian_frobenius_estimate",
    "parameter_shift_grad",
    "random_layer",
    "renormalization_shift",
    "trace_distance",
    "train",
    "universality_stack",
    "upsample",
    "verify_amplitude_overlap",
    "verify_angle_overlap",
    "verify_contraction_bound",
    "verify_trig_inequality",
]

__version__ = "0.1.0"
