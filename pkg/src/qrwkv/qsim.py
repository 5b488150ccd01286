"""State-vector simulation of the variational circuit used by the model.

Circuit layout: RX angle encoding of the input vector (one angle per
qubit), then `depth` trainable layers, each a per-qubit RX rotation
followed by a CNOT ladder entangler (control i -> target i+1), and a
Pauli-Z expectation readout on every qubit.

Amplitude convention: basis-state index bit i (little-endian) is qubit i,
so qubit 0 is the least significant bit of the amplitude index.

Gradients use the parameter-shift rule, which is exact for RX generators:
d<Z>/dtheta = [f(theta + pi/2) - f(theta - pi/2)] / 2.

Two execution paths share the same math:

* single-state functions (``apply_rx``, ``apply_cnot``) update amplitudes
  with per-wire kernels, which is what the gate-level contracts describe;
* the ``*_batch`` entry points evaluate many independent input rows at
  once (the model calls the circuit at every batch/time position). The
  encoding produces a product state directly from the angle rows, and the
  trainable layers, whose angles are shared by all rows, are composed into
  small dense unitaries applied to the whole batch with matrix products.
  States are carried as separate real/imaginary float64 planes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ContractError, DimensionError

_NORM_TOL = 1e-12


@dataclass
class CircuitSpec:
    """Geometry and trainable angles of one circuit instance."""

    n_qubits: int
    depth: int
    weights: np.ndarray  # (depth, n_qubits) rotation angles
    entangler: tuple = field(init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.n_qubits < 1:
            raise DimensionError("CircuitSpec: need at least one qubit")
        if self.depth < 0:
            raise DimensionError("CircuitSpec: depth must be non-negative")
        if self.weights.shape != (self.depth, self.n_qubits):
            raise DimensionError(
                f"CircuitSpec: weights shape {self.weights.shape} != "
                f"({self.depth}, {self.n_qubits})")
        # CNOT ladder: control i -> target i+1, applied in index order.
        self.entangler = tuple((i, i + 1) for i in range(self.n_qubits - 1))


class QuantumState:
    """Unit-norm complex amplitude vector over n qubits."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, n_qubits: int, amplitudes: np.ndarray):
        self.n_qubits = n_qubits
        self.amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2 ** n_qubits,):
            raise DimensionError(
                f"QuantumState: {self.amplitudes.shape} amplitudes for "
                f"{n_qubits} qubits")

    @classmethod
    def zero(cls, n_qubits: int) -> "QuantumState":
        amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def _planes(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.ascontiguousarray(self.amplitudes.real[None, :]),
                np.ascontiguousarray(self.amplitudes.imag[None, :]))


def _check_qubit(n_qubits: int, qubit: int, role: str = "qubit"):
    if not 0 <= qubit < n_qubits:
        raise IndexError(f"{role} index {qubit} out of range for {n_qubits} qubits")


def _check_norm(re: np.ndarray, im: np.ndarray):
    norms = (re * re + im * im).sum(axis=-1)
    drift = float(np.abs(norms - 1.0).max())
    if drift > _NORM_TOL:
        raise ContractError(f"state norm drifted by {drift:.3e}")


# -- per-wire kernels (single-state path) -----------------------------------

def _rx_kernel(re: np.ndarray, im: np.ndarray, n: int, qubit: int,
               theta: float) -> None:
    """In-place RX(theta) on one qubit of every row.

    RX maps (a0, a1) to (c a0 - i s a1, -i s a0 + c a1) with c = cos(t/2),
    s = sin(t/2), which in real/imaginary planes reads
        re0' = c re0 + s im1      im0' = c im0 - s re1
        re1' = s im0 + c re1      im1' = c im1 - s re0
    """
    rows = re.shape[0]
    half = theta / 2.0
    c = np.cos(half)
    s = np.sin(half)
    shape = (rows, 2 ** (n - 1 - qubit), 2, 2 ** qubit)
    vr = re.reshape(shape)
    vi = im.reshape(shape)
    r0 = vr[:, :, 0, :].copy()
    i0 = vi[:, :, 0, :].copy()
    r1 = vr[:, :, 1, :]
    i1 = vi[:, :, 1, :]
    vr[:, :, 0, :] = c * r0 + s * i1
    vi[:, :, 1, :] = c * i1 - s * r0
    vi[:, :, 0, :] = c * i0 - s * r1
    vr[:, :, 1, :] = c * r1 + s * i0


def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    return idx ^ (((idx >> control) & 1) << target)


def _z_signs(n: int) -> np.ndarray:
    """(2^n, n) matrix of Pauli-Z eigenvalues per basis state and qubit."""
    idx = np.arange(2 ** n)[:, None]
    return 1.0 - 2.0 * ((idx >> np.arange(n)[None, :]) & 1)


# -- dense layer unitaries (batch path) --------------------------------------

def _rx2(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _rx_block(n: int, angles: np.ndarray) -> np.ndarray:
    """Simultaneous per-qubit RX as one dense matrix (little-endian kron)."""
    block = np.eye(1, dtype=np.complex128)
    for q in range(n - 1, -1, -1):
        block = np.kron(block, _rx2(angles[q]))
    return block


@lru_cache(maxsize=None)
def _ladder_matrix(n: int) -> np.ndarray:
    """Dense matrix of the CNOT ladder for n qubits."""
    eye = np.eye(2 ** n, dtype=np.complex128)
    ladder = eye
    for control in range(n - 1):
        ladder = eye[_cnot_perm(n, control, control + 1)] @ ladder
    return ladder


def _layer_matrix(n: int, angles: np.ndarray) -> np.ndarray:
    return _ladder_matrix(n) @ _rx_block(n, angles)


def _apply_dense(re: np.ndarray, im: np.ndarray,
                 unitary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-multiply row states by unitary^T, in real/imaginary planes."""
    ur = np.ascontiguousarray(unitary.real.T)
    ui = np.ascontiguousarray(unitary.imag.T)
    return re @ ur - im @ ui, re @ ui + im @ ur


_POPCOUNT_REAL = np.array([1.0, 0.0, -1.0, 0.0])  # Re[(-i)^k], k mod 4
_POPCOUNT_IMAG = np.array([0.0, -1.0, 0.0, 1.0])  # Im[(-i)^k]


@lru_cache(maxsize=None)
def _popcount_mod4(n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    counts = np.zeros(2 ** n, dtype=np.int64)
    for q in range(n):
        counts += (idx >> q) & 1
    return counts % 4


def _encode_planes(inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Product state after RX(inputs[q]) per qubit, from |0...0>.

    Amplitude of basis state b is (-i)^{popcount(b)} times the product of
    cos(theta_q/2) over unset bits and sin(theta_q/2) over set bits.
    """
    rows, n = inputs.shape
    half = 0.5 * inputs
    cos = np.cos(half)
    sin = np.sin(half)
    mag = np.ones((rows, 1))
    for q in range(n):
        mag = np.concatenate([mag * cos[:, q:q + 1], mag * sin[:, q:q + 1]], axis=1)
    pc = _popcount_mod4(n)
    return mag * _POPCOUNT_REAL[pc], mag * _POPCOUNT_IMAG[pc]


def _run_batch(inputs: np.ndarray, spec: CircuitSpec) -> np.ndarray:
    """Expectations <Z_q> for a (rows, n) matrix of input angles."""
    inputs = np.asarray(inputs, dtype=np.float64)
    n = spec.n_qubits
    if inputs.ndim != 2 or inputs.shape[1] != n:
        raise DimensionError(
            f"circuit inputs shape {inputs.shape} incompatible with {n} qubits")
    re, im = _encode_planes(inputs)
    if spec.depth:
        total = np.eye(2 ** n, dtype=np.complex128)
        for layer in range(spec.depth):
            total = _layer_matrix(n, spec.weights[layer]) @ total
        re, im = _apply_dense(re, im, total)
    _check_norm(re, im)
    return (re * re + im * im) @ _z_signs(n)


def _gradients_batch(inputs: np.ndarray, spec: CircuitSpec,
                     upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift gradients of sum(upstream * z) over a batch of rows.

    Returns per-row input gradients (rows, n) and weight gradients (depth, n)
    summed over rows. Every scalar parameter gets its exact +-pi/2 shifted
    circuit pair; the pairs reuse the shared unshifted prefix and suffix of
    the layer stack, which parameter shifting leaves untouched.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    n, depth = spec.n_qubits, spec.depth
    if upstream.shape != inputs.shape:
        raise DimensionError(
            f"upstream shape {upstream.shape} != inputs shape {inputs.shape}")
    dim = 2 ** n
    signs = _z_signs(n)
    enc_re, enc_im = _encode_planes(inputs)

    eye = np.eye(dim, dtype=np.complex128)
    layers = [_layer_matrix(n, spec.weights[l]) for l in range(depth)]
    # prefix[l] = layers l-1 ... 0, suffix[l] = layers depth-1 ... l
    prefix = [eye]
    for mat in layers:
        prefix.append(mat @ prefix[-1])
    suffix = [eye] * (depth + 1)
    for l in range(depth - 1, -1, -1):
        suffix[l] = suffix[l + 1] @ layers[l]

    def readout(mat):
        re, im = _apply_dense(enc_re, enc_im, mat)
        return (re * re + im * im) @ signs

    # Input angles: RX gates on one wire commute, so the shifted circuit is
    # the base encoding followed by RX(+-pi/2) on that wire, then all layers.
    d_inputs = np.empty_like(inputs)
    for q in range(n):
        base = np.zeros(n)
        base[q] = np.pi / 2
        z_plus = readout(suffix[0] @ _rx_block(n, base))
        z_minus = readout(suffix[0] @ _rx_block(n, -base))
        d_inputs[:, q] = ((z_plus - z_minus) * upstream).sum(axis=1) / 2.0

    d_weights = np.empty((depth, n))
    for layer in range(depth):
        for q in range(n):
            angles = spec.weights[layer].copy()
            angles[q] += np.pi / 2
            z_plus = readout(suffix[layer + 1] @ _layer_matrix(n, angles)
                             @ prefix[layer])
            angles[q] -= np.pi
            z_minus = readout(suffix[layer + 1] @ _layer_matrix(n, angles)
                              @ prefix[layer])
            d_weights[layer, q] = ((z_plus - z_minus) * upstream).sum() / 2.0
    return d_inputs, d_weights


# -- public single-state interface -----------------------------------------

def apply_rx(state: QuantumState, qubit: int, theta: float) -> QuantumState:
    """RX rotation [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]] on one wire."""
    _check_qubit(state.n_qubits, qubit)
    re, im = state._planes()
    _rx_kernel(re, im, state.n_qubits, qubit, float(theta))
    _check_norm(re, im)
    return QuantumState(state.n_qubits, re[0] + 1j * im[0])


def apply_cnot(state: QuantumState, control: int, target: int) -> QuantumState:
    """Swap the target-bit amplitude pairs wherever the control bit is set."""
    if control == target:
        raise ContractError("cnot: control and target must differ")
    _check_qubit(state.n_qubits, control, "control")
    _check_qubit(state.n_qubits, target, "target")
    perm = _cnot_perm(state.n_qubits, control, target)
    amps = state.amplitudes[perm]
    _check_norm(amps.real[None, :], amps.imag[None, :])
    return QuantumState(state.n_qubits, amps)


def expect_z(state: QuantumState) -> np.ndarray:
    """<Z_q> for every qubit; each value lies in [-1, 1]."""
    re, im = state._planes()
    return ((re * re + im * im) @ _z_signs(state.n_qubits))[0]


def run_circuit(inputs: np.ndarray, spec: CircuitSpec) -> np.ndarray:
    """Encode, entangle, and read out one input angle vector."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape != (spec.n_qubits,):
        raise DimensionError(
            f"run_circuit: inputs shape {inputs.shape} != ({spec.n_qubits},)")
    return _run_batch(inputs[None, :], spec)[0]


def circuit_gradients(inputs: np.ndarray, spec: CircuitSpec,
                      upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of upstream . z w.r.t. input angles and weights."""
    inputs = np.asarray(inputs, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if inputs.shape != (spec.n_qubits,):
        raise DimensionError(
            f"circuit_gradients: inputs shape {inputs.shape} != ({spec.n_qubits},)")
    d_in, d_w = _gradients_batch(inputs[None, :], spec, upstream[None, :])
    return d_in[0], d_w


def run_circuit_batch(inputs: np.ndarray, spec: CircuitSpec) -> np.ndarray:
    """Vectorized :func:`run_circuit` over a (rows, n_qubits) batch."""
    return _run_batch(inputs, spec)


def circuit_gradients_batch(inputs: np.ndarray, spec: CircuitSpec,
                            upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`circuit_gradients`; weight gradients sum over rows."""
    return _gradients_batch(inputs, spec, upstream)
