"""Dense statevector simulation with exact gradients.

States live in arrays of shape (batch, 2**Q), complex128, qubit 0 = least
significant bit of the basis index. Gates are applied in place through
stride-based index slicing; no 2**Q x 2**Q matrices are ever built (the
brute-force dense construction exists only in the test oracles).

Gradients come two ways: a reverse (adjoint) sweep that walks the gate list
backwards once and yields derivatives for every rotation angle plus the
cotangent with respect to the input amplitudes, and the parameter-shift rule
(f(theta + pi/2) - f(theta - pi/2)) / 2, exact for Pauli-generated rotations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DimensionError, InvalidGateError, UnsupportedGateError

RX = "rx"
RY = "ry"
RZ = "rz"
CNOT = "cnot"
PAULI_X = "x"
HADAMARD = "h"

ROTATION_KINDS = (RX, RY, RZ)
GATE_KINDS = ROTATION_KINDS + (CNOT, PAULI_X, HADAMARD)

_GENERATOR_AXIS = {RX: "x", RY: "y", RZ: "z"}


@dataclass(frozen=True)
class GateOp:
    """One gate: a rotation (trainable via ``param_slot`` or fixed-angle) or CNOT/X/H."""

    kind: str
    target: int
    control: Optional[int] = None
    param_slot: Optional[int] = None
    fixed_angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise InvalidGateError(f"unknown gate kind {self.kind!r}")
        if self.kind in ROTATION_KINDS:
            if (self.param_slot is None) == (self.fixed_angle is None):
                raise InvalidGateError(
                    f"{self.kind} gate needs exactly one of param_slot/fixed_angle"
                )
            if self.control is not None:
                raise InvalidGateError("rotation gates take no control qubit")
        else:
            if self.param_slot is not None or self.fixed_angle is not None:
                raise InvalidGateError(f"{self.kind} gate takes no angle or slot")
            if self.kind == CNOT:
                if self.control is None:
                    raise InvalidGateError("cnot needs a control qubit")
                if self.control == self.target:
                    raise InvalidGateError("cnot control and target must differ")
            elif self.control is not None:
                raise InvalidGateError(f"{self.kind} gate takes no control qubit")


@dataclass
class StateVector:
    """Pure state of ``num_qubits`` qubits as 2**Q complex amplitudes."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.num_qubits < 1:
            raise DimensionError("num_qubits must be >= 1")
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.shape[0] != 1 << self.num_qubits:
            raise DimensionError(
                f"expected {1 << self.num_qubits} amplitudes, got {amps.shape[0]}"
            )
        self.amplitudes = amps

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(1 << num_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class ParamCircuit:
    """Ordered gate list over ``num_qubits`` qubits with ``num_params`` trainable slots."""

    num_qubits: int
    gates: tuple
    num_params: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        seen = set()
        for i, g in enumerate(self.gates):
            if not isinstance(g, GateOp):
                raise InvalidGateError(f"gate {i} is not a GateOp")
            if not 0 <= g.target < self.num_qubits:
                raise InvalidGateError(f"gate {i}: target {g.target} out of range")
            if g.control is not None and not 0 <= g.control < self.num_qubits:
                raise InvalidGateError(f"gate {i}: control {g.control} out of range")
            if g.param_slot is not None:
                if not 0 <= g.param_slot < self.num_params:
                    raise InvalidGateError(
                        f"gate {i}: param_slot {g.param_slot} outside [0, {self.num_params})"
                    )
                seen.add(g.param_slot)
        if seen != set(range(self.num_params)):
            missing = sorted(set(range(self.num_params)) - seen)
            raise InvalidGateError(f"unreferenced param slots {missing}")

    @classmethod
    def from_gates(cls, num_qubits: int, gates: Sequence[GateOp]) -> "ParamCircuit":
        slots = [g.param_slot for g in gates if g.param_slot is not None]
        return cls(num_qubits, tuple(gates), max(slots) + 1 if slots else 0)


class Op(NamedTuple):
    """Resolved gate ready for application: angle baked, or read from an input column."""

    kind: str
    target: int
    control: int
    angle: float
    col: int  # -1 unless the angle comes from inputs[:, col]
    slot: int  # -1 unless the angle came from theta[slot]


# ---------------------------------------------------------------------------
# kernels: all operate in place on states of shape (B, 2**Q)


def _bit_view(states: np.ndarray, q: int) -> np.ndarray:
    b, n = states.shape
    return states.reshape(b, n >> (q + 1), 2, 1 << q)


def _as_coeff(x, batched: bool):
    return x[:, None, None] if batched else x


_SMALL_STATE = 16384  # below this, plain slice arithmetic beats einsum/matmul


def _apply_2x2(states, q, m00, m01, m10, m11, batched=False):
    v = _bit_view(states, q)
    if states.size <= _SMALL_STATE:
        a = v[:, :, 0, :].copy()
        bpart = v[:, :, 1, :]
        c00, c01, c10, c11 = (_as_coeff(m, batched) for m in (m00, m01, m10, m11))
        v[:, :, 0, :] = c00 * a + c01 * bpart
        v[:, :, 1, :] = c10 * a + c11 * bpart
        return
    wide = (1 << q) >= 32  # wide inner stride: BLAS matmul wins over einsum
    if batched:
        u = np.empty((states.shape[0], 2, 2), dtype=np.complex128)
        u[:, 0, 0], u[:, 0, 1], u[:, 1, 0], u[:, 1, 1] = m00, m01, m10, m11
        if wide:
            v[:] = np.matmul(u[:, None], v)
        else:
            v[:] = np.einsum("bij,bnjs->bnis", u, v)
    else:
        u = np.array([[m00, m01], [m10, m11]], dtype=np.complex128)
        if wide:
            v[:] = np.matmul(u, v.reshape(-1, 2, 1 << q)).reshape(v.shape)
        else:
            v[:] = np.einsum("ij,bnjs->bnis", u, v)


def _apply_diag(states, q, d0, d1, batched=False):
    v = _bit_view(states, q)
    v[:, :, 0, :] *= _as_coeff(d0, batched)
    v[:, :, 1, :] *= _as_coeff(d1, batched)


def _apply_x(states, q):
    v = _bit_view(states, q)
    a = v[:, :, 0, :].copy()
    v[:, :, 0, :] = v[:, :, 1, :]
    v[:, :, 1, :] = a


_SQRT_HALF = 1.0 / np.sqrt(2.0)


def _apply_h(states, q):
    _apply_2x2(states, q, _SQRT_HALF, _SQRT_HALF, _SQRT_HALF, -_SQRT_HALF)


@lru_cache(maxsize=None)
def _cnot_indices(num_qubits: int, control: int, target: int):
    idx = np.arange(1 << num_qubits)
    sel = idx[(((idx >> control) & 1) == 1) & (((idx >> target) & 1) == 0)]
    return sel, sel | (1 << target)


def _apply_cnot(states, num_qubits, control, target):
    i0, i1 = _cnot_indices(num_qubits, control, target)
    tmp = states[:, i0].copy()
    states[:, i0] = states[:, i1]
    states[:, i1] = tmp


def _apply_rot(states, q, kind, angle):
    batched = isinstance(angle, np.ndarray)
    half = 0.5 * angle
    c = np.cos(half)
    s = np.sin(half)
    if kind == RX:
        _apply_2x2(states, q, c + 0j, -1j * s, -1j * s, c + 0j, batched)
    elif kind == RY:
        _apply_2x2(states, q, c + 0j, -s + 0j, s + 0j, c + 0j, batched)
    else:
        _apply_diag(states, q, c - 1j * s, c + 1j * s, batched)


def _pauli_mul(states, q, axis):
    """Return P |states> for Pauli P on qubit q, without touching the input."""
    out = states.copy()
    v = _bit_view(out, q)
    if axis == "x":
        a = v[:, :, 0, :].copy()
        v[:, :, 0, :] = v[:, :, 1, :]
        v[:, :, 1, :] = a
    elif axis == "y":
        a = v[:, :, 0, :].copy()
        v[:, :, 0, :] = -1j * v[:, :, 1, :]
        v[:, :, 1, :] = 1j * a
    else:
        v[:, :, 1, :] *= -1.0
    return out


# ---------------------------------------------------------------------------
# compiled program execution


def resolve_circuit(circuit: ParamCircuit, theta: np.ndarray) -> list[Op]:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != circuit.num_params:
        raise DimensionError(
            f"theta has {theta.shape[0]} entries, circuit expects {circuit.num_params}"
        )
    ops = []
    for g in circuit.gates:
        if g.kind in ROTATION_KINDS:
            if g.param_slot is not None:
                ops.append(Op(g.kind, g.target, -1, float(theta[g.param_slot]), -1, g.param_slot))
            else:
                ops.append(Op(g.kind, g.target, -1, float(g.fixed_angle), -1, -1))
        elif g.kind == CNOT:
            ops.append(Op(CNOT, g.target, g.control, 0.0, -1, -1))
        else:
            ops.append(Op(g.kind, g.target, -1, 0.0, -1, -1))
    return ops


def _op_angle(op: Op, inputs):
    return inputs[:, op.col] if op.col >= 0 else op.angle


def apply_ops(ops, states, num_qubits, inputs=None):
    """Apply a resolved op list in place to states of shape (B, 2**Q)."""
    for op in ops:
        if op.kind == CNOT:
            _apply_cnot(states, num_qubits, op.control, op.target)
        elif op.kind == PAULI_X:
            _apply_x(states, op.target)
        elif op.kind == HADAMARD:
            _apply_h(states, op.target)
        else:
            _apply_rot(states, op.target, op.kind, _op_angle(op, inputs))
    return states


def adjoint_sweep(
    ops,
    num_qubits,
    final_states,
    bra,
    inputs=None,
    num_params=0,
    num_input_cols=0,
    need_theta=True,
    need_input=True,
):
    """Reverse sweep computing d(Re<bra|ket>)-style rotation derivatives.

    ``final_states`` is the ket after all ops; ``bra`` is M_total |ket> (the
    expectation cotangent). Returns (dtheta summed over the batch, dinput of
    shape (B, num_input_cols), back-propagated bra). The returned bra equals
    U^dagger M_total U |input>, i.e. dE/d(conj(amplitude)) at the input state;
    for real upstream parameters chain with 2 * Re(<d input/d param, bra>).
    """
    def wanted(op):
        return op.kind in ROTATION_KINDS and (
            (need_theta and op.slot >= 0) or (need_input and op.col >= 0)
        )

    # the ket is only consumed by derivative vdots; once the last (lowest-index)
    # wanted rotation has been processed, only the bra needs to keep walking
    remaining_wanted = sum(1 for op in ops if wanted(op))
    ket = final_states.copy() if remaining_wanted else None
    b = bra.copy()
    dtheta = np.zeros(num_params)
    dinput = np.zeros((final_states.shape[0], num_input_cols)) if num_input_cols else None
    for op in reversed(ops):
        if op.kind in ROTATION_KINDS:
            if wanted(op):
                pk = _pauli_mul(ket, op.target, _GENERATOR_AXIS[op.kind])
                d = np.einsum("bi,bi->b", b.conj(), pk).imag
                if op.slot >= 0:
                    dtheta[op.slot] += d.sum()
                else:
                    dinput[:, op.col] += d
                remaining_wanted -= 1
                if remaining_wanted == 0:
                    ket = None
            angle = _op_angle(op, inputs)
            if ket is not None:
                _apply_rot(ket, op.target, op.kind, -angle)
            _apply_rot(b, op.target, op.kind, -angle)
        else:
            for arr in (ket, b) if ket is not None else (b,):
                if op.kind == CNOT:
                    _apply_cnot(arr, num_qubits, op.control, op.target)
                elif op.kind == PAULI_X:
                    _apply_x(arr, op.target)
                else:
                    _apply_h(arr, op.target)
    return dtheta, dinput, b


# ---------------------------------------------------------------------------
# public operations


def apply_circuit(circuit: ParamCircuit, theta, state: StateVector) -> StateVector:
    """U(theta)|state>, leaving the input untouched."""
    if state.num_qubits != circuit.num_qubits:
        raise DimensionError(
            f"state has {state.num_qubits} qubits, circuit has {circuit.num_qubits}"
        )
    ops = resolve_circuit(circuit, theta)
    states = state.amplitudes[None, :].copy()
    apply_ops(ops, states, circuit.num_qubits)
    return StateVector(circuit.num_qubits, states[0])


def _expectations(ops, num_qubits, input_amps, diags):
    states = input_amps[None, :].copy()
    apply_ops(ops, states, num_qubits)
    probs = np.abs(states[0]) ** 2
    return diags @ probs, states


def adjoint_gradients(circuit, theta, input_state: StateVector, cost_cotangent, ensemble):
    """One reverse pass: (dtheta, complex input-amplitude cotangent).

    dtheta[j] = d(sum_k cotangent_k <M_k>)/d theta_j. The second return is
    dE/d(conj(amplitudes)) of the input state.
    """
    if input_state.num_qubits != circuit.num_qubits:
        raise DimensionError("input state qubit count does not match circuit")
    cot = np.asarray(cost_cotangent, dtype=np.float64).reshape(-1)
    diags = np.asarray(ensemble.diagonals(circuit.num_qubits))
    if cot.shape[0] != diags.shape[0]:
        raise DimensionError(
            f"cotangent has {cot.shape[0]} entries, ensemble has {diags.shape[0]}"
        )
    ops = resolve_circuit(circuit, theta)
    states = input_state.amplitudes[None, :].copy()
    apply_ops(ops, states, circuit.num_qubits)
    bra = (cot @ diags)[None, :] * states
    dtheta, _, back = adjoint_sweep(
        ops, circuit.num_qubits, states, bra,
        num_params=circuit.num_params, need_input=False,
    )
    return dtheta, back[0]


def parameter_shift_grad(circuit, theta, input_state: StateVector, ensemble, slot: int):
    """Exact derivative of each ensemble expectation w.r.t. theta[slot].

    Uses (f(theta + pi/2 e_slot) - f(theta - pi/2 e_slot)) / 2 per occurrence
    of the slot, which is exact for Pauli-generated rotations.
    """
    ops = resolve_circuit(circuit, theta)
    where = [i for i, op in enumerate(ops) if op.slot == slot]
    if not where:
        raise UnsupportedGateError(f"slot {slot} is not bound to any rotation gate")
    diags = np.asarray(ensemble.diagonals(circuit.num_qubits))
    amps = np.asarray(input_state.amplitudes, dtype=np.complex128)
    total = np.zeros(diags.shape[0])
    for i in where:
        op = ops[i]
        plus = ops.copy()
        plus[i] = op._replace(angle=op.angle + np.pi / 2)
        minus = ops.copy()
        minus[i] = op._replace(angle=op.angle - np.pi / 2)
        e_plus, _ = _expectations(plus, circuit.num_qubits, amps, diags)
        e_minus, _ = _expectations(minus, circuit.num_qubits, amps, diags)
        total += 0.5 * (e_plus - e_minus)
    return total


def random_layer(seed: int, num_qubits: int, num_ops: int):
    """Seeded random gate layer: kinds uniform over {RX, RY, RZ, CNOT}.

    Rotations receive fresh trainable slots with uniform(0, 2*pi) initial
    values; returns (gates, theta_init). On a single qubit a drawn CNOT is
    redrawn rather than raising.
    """
    if num_ops < 0:
        raise DimensionError("num_ops must be >= 0")
    rng = np.random.default_rng(seed)
    kinds = (RX, RY, RZ, CNOT)
    gates: list[GateOp] = []
    init: list[float] = []
    for _ in range(num_ops):
        kind = kinds[rng.integers(4)]
        while kind == CNOT and num_qubits < 2:
            kind = kinds[rng.integers(4)]
        if kind == CNOT:
            control = int(rng.integers(num_qubits))
            target = int(rng.integers(num_qubits - 1))
            if target >= control:
                target += 1
            gates.append(GateOp(CNOT, target=target, control=control))
        else:
            target = int(rng.integers(num_qubits))
            gates.append(GateOp(kind, target=target, param_slot=len(init)))
            init.append(rng.uniform(0.0, 2.0 * np.pi))
    return gates, np.array(init)
