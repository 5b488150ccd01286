"""The sequence model: stacked time-mixing / channel-mixing blocks.

Each block applies, with pre-normalization and residual additions,

    a     = time_mix(LN(x))
    x_out = x + a + channel_mix(LN(x + a))

Time mixing keys, values, and receptance are per-timestep linear maps of
the input; the mixing output at step t is a decayed softmax-style average
of past values (weighted by e^{k}) with a learned per-channel bonus ``u``
for the current step, gated by sigmoid(r). The recurrence streams through
a per-channel state (a, b, p) where p tracks the running maximum exponent,
keeping every exponential bounded.

Channel mixing is a gated squared-ReLU FFN; the quantum variant adds a
branch projecting each position to qubit rotation angles, running the
variational circuit from :mod:`.qsim`, and projecting the Pauli-Z readout
back to the embedding space before the gate.

The per-channel decay is parameterized as w_eff = -exp(w_raw), keeping the
accumulators contractive for any real w_raw. w_raw starts banded by head:
head h covers its slice of decay half-lives so channels span roughly one
step up to half the training horizon.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import qsim
from .autodiff import Graph, Tensor
from .errors import ConfigError, ContractError, NumericError
from .rng import Prng, STREAM_INIT

VARIANTS = ("classical", "quantum")


@dataclass
class ModelConfig:
    n_embd: int = 32
    n_layer: int = 2
    n_intermediate: int = 128
    n_head: int = 4
    n_qubits: int = 4
    q_depth: int = 2
    variant: str = "classical"
    input_dim: int = 1
    output_dim: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_embd % self.n_head != 0:
            raise ConfigError(
                f"n_head {self.n_head} must divide n_embd {self.n_embd}")
        if self.n_intermediate < self.n_embd:
            raise ConfigError("n_intermediate must be at least n_embd")
        if self.variant == "quantum" and (self.n_qubits < 1 or self.q_depth < 0):
            raise ConfigError("quantum variant needs n_qubits >= 1 and q_depth >= 0")


@dataclass
class TimeMixParams:
    w_k: Tensor
    w_v: Tensor
    w_r: Tensor
    u: Tensor
    w_raw: Tensor
    w_out: Tensor


@dataclass
class ChannelMixParams:
    w1: Tensor
    w2: Tensor
    w_r: Tensor
    w_q: Optional[Tensor] = None
    w_o: Optional[Tensor] = None
    phi: Optional[Tensor] = None
    n_qubits: int = 0
    q_depth: int = 0


@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    time_mix: TimeMixParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    channel_mix: ChannelMixParams


@dataclass
class ModelParams:
    w_in: Tensor
    b_in: Tensor
    ln_in_gain: Tensor
    ln_in_bias: Tensor
    blocks: list[BlockParams]
    ln_out_gain: Tensor
    ln_out_bias: Tensor
    w_head: Tensor
    b_head: Tensor


@dataclass
class WkvState:
    """Streaming accumulators per batch row and channel."""

    a: Tensor
    b: Tensor
    p: Tensor


def initial_wkv_state(batch: int, channels: int) -> WkvState:
    return WkvState(
        a=Tensor(np.zeros((batch, channels))),
        b=Tensor(np.zeros((batch, channels))),
        p=Tensor(np.full((batch, channels), -np.inf)),
    )


def wkv_step(state: WkvState, k_t: Tensor, v_t: Tensor, u: Tensor,
             w_eff: Tensor) -> tuple[Tensor, WkvState]:
    """One step of the decayed weighted average, max-shifted for stability.

    Output uses the previous state with the current-step bonus u; the
    update folds the current key into the accumulators with decay w_eff.
    """
    for name, t in (("k", k_t), ("v", v_t)):
        bad = np.isnan(t.data)
        if bad.any():
            channels = sorted(set(np.argwhere(bad)[:, -1].tolist()))
            raise NumericError(f"NaN in {name} at channel(s) {channels}")
    boosted = u + k_t
    q = ad.maximum(state.p, boosted)
    e1 = ad.exp(state.p - q)
    e2 = ad.exp(boosted - q)
    wkv = (e1 * state.a + e2 * v_t) / (e1 * state.b + e2)

    decayed = state.p + w_eff
    q_next = ad.maximum(decayed, k_t)
    e1n = ad.exp(decayed - q_next)
    e2n = ad.exp(k_t - q_next)
    next_state = WkvState(
        a=e1n * state.a + e2n * v_t,
        b=e1n * state.b + e2n,
        p=q_next,
    )
    return wkv, next_state


def time_mix(x: Tensor, params: TimeMixParams,
             state: Optional[WkvState] = None) -> tuple[Tensor, WkvState]:
    """Recurrent mixing over the time axis of a (B, T, C) tensor."""
    batch, steps, channels = x.data.shape
    if state is None:
        state = initial_wkv_state(batch, channels)
    k = ad.matmul(x, params.w_k)
    v = ad.matmul(x, params.w_v)
    gate = ad.sigmoid(ad.matmul(x, params.w_r))
    w_eff = ad.neg(ad.exp(params.w_raw))
    outputs = []
    for t in range(steps):
        wkv, state = wkv_step(state,
                              ad.index_axis(k, 1, t),
                              ad.index_axis(v, 1, t),
                              params.u, w_eff)
        outputs.append(ad.index_axis(gate, 1, t) * wkv)
    y = ad.matmul(ad.stack(outputs, axis=1), params.w_out)
    return y, state


def _ffn(x: Tensor, params: ChannelMixParams) -> Tensor:
    return ad.matmul(ad.square(ad.relu(ad.matmul(x, params.w1))), params.w2)


def channel_mix_classical(x: Tensor, params: ChannelMixParams) -> Tensor:
    return ad.sigmoid(ad.matmul(x, params.w_r)) * _ffn(x, params)


def _vqc_expectations(x_q: Tensor, phi: Tensor, n_qubits: int, depth: int) -> Tensor:
    """Run the circuit at every (batch, time) position, parameter-shift backward."""
    batch, steps, n = x_q.data.shape
    flat = x_q.data.reshape(-1, n)
    spec = qsim.CircuitSpec(n_qubits, depth, phi.data.copy())
    z = qsim.run_circuit_batch(flat, spec)
    if np.any(np.abs(z) > 1.0 + 1e-12):
        raise NumericError("circuit readout left [-1, 1]")

    def bwd(gout):
        d_in, d_w = qsim.circuit_gradients_batch(flat, spec, gout.reshape(-1, n))
        return d_in.reshape(batch, steps, n), d_w

    return ad.custom(z.reshape(batch, steps, n), (x_q, phi), bwd)


def channel_mix_quantum(x: Tensor, params: ChannelMixParams) -> Tensor:
    if params.w_q is None or params.w_o is None or params.phi is None:
        raise ContractError("quantum channel mix called without quantum parameters")
    x_q = ad.matmul(x, params.w_q)
    z = _vqc_expectations(x_q, params.phi, params.n_qubits, params.q_depth)
    fused = _ffn(x, params) + ad.matmul(z, params.w_o)
    return ad.sigmoid(ad.matmul(x, params.w_r)) * fused


def block_forward(x: Tensor, block: BlockParams, variant: str,
                  state: Optional[WkvState] = None) -> tuple[Tensor, WkvState]:
    a, state = time_mix(ad.layer_norm(x, block.ln1_gain, block.ln1_bias),
                        block.time_mix, state)
    mid = x + a
    normed = ad.layer_norm(mid, block.ln2_gain, block.ln2_bias)
    if variant == "quantum":
        mixed = channel_mix_quantum(normed, block.channel_mix)
    else:
        mixed = channel_mix_classical(normed, block.channel_mix)
    return mid + mixed, state


def model_forward(x: Tensor, config: ModelConfig, params: ModelParams,
                  states: Optional[list[WkvState]] = None
                  ) -> tuple[Tensor, list[WkvState]]:
    """Waveform in (B, T, input_dim), next-step predictions out."""
    if states is None:
        states = [None] * config.n_layer
    h = ad.matmul(x, params.w_in) + params.b_in
    h = ad.layer_norm(h, params.ln_in_gain, params.ln_in_bias)
    new_states = []
    for block, state in zip(params.blocks, states):
        h, state = block_forward(h, block, config.variant, state)
        new_states.append(state)
    h = ad.layer_norm(h, params.ln_out_gain, params.ln_out_bias)
    y = ad.matmul(h, params.w_head) + params.b_head
    return y, new_states


# -- parameter construction --------------------------------------------------

def _decay_init(channels: int, n_head: int, horizon: int) -> np.ndarray:
    """w_raw giving per-channel decay half-lives from 1 to horizon/2 steps.

    Channels are banded by head: each head's slice covers one contiguous
    stretch of half-lives, linearly spaced inside its band.
    """
    head_size = channels // n_head
    longest = max(2.0, horizon / 2.0)
    edges = np.linspace(1.0, longest, n_head + 1)
    half_lives = np.concatenate([
        np.linspace(edges[h], edges[h + 1], head_size) for h in range(n_head)
    ])
    w_eff = -np.log(2.0) / half_lives
    return np.log(-w_eff)


def build_params(config: ModelConfig, graph: Graph, seed: int,
                 decay_horizon: int = 32) -> ModelParams:
    """Register all parameters on the graph with seeded initialization."""
    rng = Prng(seed, STREAM_INIT)
    c = config.n_embd
    bound = 1.0 / np.sqrt(c)

    def mat(name, rows, cols):
        return graph.parameter(name, rng.uniform(-bound, bound, (rows, cols)))

    def vec(name, size, value):
        return graph.parameter(name, np.full(size, value, dtype=np.float64))

    w_in = mat("w_in", config.input_dim, c)
    b_in = vec("b_in", c, 0.0)
    ln_in_gain = vec("ln_in.gain", c, 1.0)
    ln_in_bias = vec("ln_in.bias", c, 0.0)

    blocks = []
    for i in range(config.n_layer):
        pre = f"blocks.{i}."
        ln1_gain = vec(pre + "ln1.gain", c, 1.0)
        ln1_bias = vec(pre + "ln1.bias", c, 0.0)
        tm = TimeMixParams(
            w_k=mat(pre + "tm.w_k", c, c),
            w_v=mat(pre + "tm.w_v", c, c),
            w_r=mat(pre + "tm.w_r", c, c),
            u=vec(pre + "tm.u", c, 0.0),
            w_raw=graph.parameter(pre + "tm.w_raw",
                                  _decay_init(c, config.n_head, decay_horizon)),
            w_out=mat(pre + "tm.w_out", c, c),
        )
        ln2_gain = vec(pre + "ln2.gain", c, 1.0)
        ln2_bias = vec(pre + "ln2.bias", c, 0.0)
        cm = ChannelMixParams(
            w1=mat(pre + "cm.w1", c, config.n_intermediate),
            w2=mat(pre + "cm.w2", config.n_intermediate, c),
            w_r=mat(pre + "cm.w_r", c, c),
        )
        if config.variant == "quantum":
            cm.w_q = mat(pre + "cm.w_q", c, config.n_qubits)
            cm.w_o = mat(pre + "cm.w_o", config.n_qubits, c)
            cm.phi = graph.parameter(
                pre + "cm.phi",
                rng.uniform(0.0, 2.0 * np.pi, (config.q_depth, config.n_qubits)))
            cm.n_qubits = config.n_qubits
            cm.q_depth = config.q_depth
        blocks.append(BlockParams(ln1_gain, ln1_bias, tm, ln2_gain, ln2_bias, cm))

    ln_out_gain = vec("ln_out.gain", c, 1.0)
    ln_out_bias = vec("ln_out.bias", c, 0.0)
    w_head = mat("w_head", c, config.output_dim)
    b_head = vec("b_head", config.output_dim, 0.0)
    return ModelParams(w_in, b_in, ln_in_gain, ln_in_bias, blocks,
                       ln_out_gain, ln_out_bias, w_head, b_head)


class Model:
    """Config + graph + parameters, with a forward convenience."""

    def __init__(self, config: ModelConfig, seed: int = 0, decay_horizon: int = 32):
        self.config = config
        self.graph = Graph()
        self.params = build_params(config, self.graph, seed, decay_horizon)

    def forward(self, x, states=None) -> tuple[Tensor, list[WkvState]]:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        return model_forward(x, self.config, self.params, states)

    def predict(self, x) -> np.ndarray:
        """Forward pass without recording; returns raw prediction data."""
        with self.graph.no_grad():
            y, _ = self.forward(x)
        return y.data


# -- checkpoint io -----------------------------------------------------------

_MAGIC = b"QRWKV1"
_CONFIG_FIELDS = ("n_embd", "n_layer", "n_intermediate", "n_head",
                  "n_qubits", "q_depth", "variant_code", "input_dim", "output_dim")


def _config_ints(config: ModelConfig) -> tuple[int, ...]:
    return (config.n_embd, config.n_layer, config.n_intermediate, config.n_head,
            config.n_qubits, config.q_depth, VARIANTS.index(config.variant),
            config.input_dim, config.output_dim)


def save_checkpoint(path, config: ModelConfig, graph: Graph) -> None:
    """Flat binary dump: magic, config ints, then each registered parameter."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<9i", *_config_ints(config)))
        fh.write(struct.pack("<I", len(graph.params)))
        for name, tensor in graph.params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.data.ndim))
            fh.write(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path, config: ModelConfig, graph: Graph) -> None:
    """Restore parameter values in place; reject any config or shape mismatch."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint (bad magic)")
        stored = struct.unpack("<9i", fh.read(36))
        expected = _config_ints(config)
        if stored != expected:
            diffs = [f"{fieldname}: file={s} expected={e}"
                     for fieldname, s, e in zip(_CONFIG_FIELDS, stored, expected)
                     if s != e]
            raise ConfigError(f"{path}: config mismatch ({'; '.join(diffs)})")
        count, = struct.unpack("<I", fh.read(4))
        if count != len(graph.params):
            raise ConfigError(
                f"{path}: {count} parameters stored, model has {len(graph.params)}")
        for _ in range(count):
            name_len, = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            ndim, = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            data = np.frombuffer(fh.read(8 * int(np.prod(shape, dtype=np.int64))),
                                 dtype="<f8").reshape(shape)
            tensor = graph.params.get(name)
            if tensor is None:
                raise ConfigError(f"{path}: unknown parameter {name!r}")
            if tensor.data.shape != shape:
                raise ConfigError(
                    f"{path}: parameter {name!r} shape {shape} != {tensor.data.shape}")
            tensor.data = data.astype(np.float64).copy()
