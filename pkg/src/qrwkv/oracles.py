"""Independent reference implementations used for verification.

Everything here is deliberately written without touching the fast paths it
checks: the dense circuit oracle builds explicit 2^n x 2^n matrices from
Kronecker products instead of using the gate kernels, and the weighted
key-value reference evaluates the defining sums term by term instead of
streaming. Slow and obvious beats fast and shared.
"""
from __future__ import annotations

import numpy as np

from .qsim import CircuitSpec

_I2 = np.eye(2, dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
_P0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
_P1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one element at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over elements of |a - n| / max(1, |a|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- dense circuit oracle --------------------------------------------------

def _rx_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _drx_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return 0.5 * np.array([[-s, -1j * c], [-1j * c, -s]])


def _embed_single(n: int, qubit: int, gate: np.ndarray) -> np.ndarray:
    """Lift a 1-qubit matrix to n qubits, little-endian (qubit 0 = LSB)."""
    return np.kron(np.kron(np.eye(2 ** (n - 1 - qubit)), gate), np.eye(2 ** qubit))


def _embed_cnot(n: int, control: int, target: int) -> np.ndarray:
    keep = _embed_single(n, control, _P0)
    flip = _embed_single(n, control, _P1) @ _embed_single(n, target, _X)
    return keep + flip


def _gate_sequence(inputs: np.ndarray, spec: CircuitSpec):
    """Ordered dense gates plus, for each trainable angle, its slot index."""
    n = spec.n_qubits
    gates = []
    slots = {}  # param key -> (gate index, qubit)
    for q in range(n):
        slots[("in", q)] = (len(gates), q)
        gates.append(_embed_single(n, q, _rx_matrix(inputs[q])))
    for layer in range(spec.depth):
        for q in range(n):
            slots[("w", layer, q)] = (len(gates), q)
            gates.append(_embed_single(n, q, _rx_matrix(spec.weights[layer, q])))
        for control, target in spec.entangler:
            gates.append(_embed_cnot(n, control, target))
    return gates, slots


def dense_circuit_expectations(inputs: np.ndarray, spec: CircuitSpec) -> np.ndarray:
    """<Z_q> computed from the full unitary product."""
    inputs = np.asarray(inputs, dtype=np.float64)
    n = spec.n_qubits
    gates, _ = _gate_sequence(inputs, spec)
    unitary = np.eye(2 ** n, dtype=np.complex128)
    for gate in gates:
        unitary = gate @ unitary
    psi = unitary[:, 0]  # U |0...0>
    return np.array([np.real(psi.conj() @ _embed_single(n, q, _Z) @ psi)
                     for q in range(n)])


def dense_circuit_jacobians(inputs: np.ndarray,
                            spec: CircuitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d<Z_q>/d(angle) for every input angle and weight.

    Returns (d_inputs, d_weights) with shapes (n, n) and (depth, n, n); the
    trailing axis indexes the measured qubit. Uses the product rule on the
    dense gate sequence, so it shares nothing with the parameter-shift path.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    n = spec.n_qubits
    gates, slots = _gate_sequence(inputs, spec)
    e0 = np.zeros(2 ** n, dtype=np.complex128)
    e0[0] = 1.0
    # prefix[i] = G_{i-1} ... G_0 |0>, suffix[i] = G_{m-1} ... G_i
    m = len(gates)
    prefix = [e0]
    for gate in gates:
        prefix.append(gate @ prefix[-1])
    suffix = [np.eye(2 ** n, dtype=np.complex128)] * (m + 1)
    acc = np.eye(2 ** n, dtype=np.complex128)
    for i in range(m - 1, -1, -1):
        acc = acc @ gates[i]
        suffix[i] = acc
    psi = prefix[-1]
    z_ops = [_embed_single(n, q, _Z) for q in range(n)]

    def d_expectations(key, angle):
        gate_idx, qubit = slots[key]
        dgate = _embed_single(n, qubit, _drx_matrix(angle))
        dpsi = suffix[gate_idx + 1] @ (dgate @ prefix[gate_idx])
        return np.array([2.0 * np.real(psi.conj() @ z @ dpsi) for z in z_ops])

    d_inputs = np.stack([d_expectations(("in", q), inputs[q]) for q in range(n)])
    d_weights = np.stack([
        np.stack([d_expectations(("w", layer, q), spec.weights[layer, q])
                  for q in range(n)])
        for layer in range(spec.depth)
    ]) if spec.depth else np.zeros((0, n, n))
    return d_inputs, d_weights


# -- weighted key-value reference -------------------------------------------

def wkv_reference(k: np.ndarray, v: np.ndarray, u: np.ndarray,
                  w_eff: np.ndarray) -> np.ndarray:
    """Closed-form decayed softmax average, evaluated term by term.

    out[t] = (sum_{i<t} e^{(t-1-i) w_eff + k_i} v_i + e^{u + k_t} v_t)
           / (sum_{i<t} e^{(t-1-i) w_eff + k_i}       + e^{u + k_t})

    Only safe for short sequences where the raw exponentials stay finite.
    """
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    T = k.shape[0]
    out = np.empty_like(v)
    for t in range(T):
        num = np.exp(u + k[t]) * v[t]
        den = np.exp(u + k[t])
        for i in range(t):
            weight = np.exp((t - 1 - i) * w_eff + k[i])
            num = num + weight * v[i]
            den = den + weight
        out[t] = num / den
    return out
