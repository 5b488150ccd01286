"""Synthetic forecasting tasks: seeded generators, splitting, normalization.

Ten one-dimensional series cover linear (arma), chaotic (chaotic_logistic),
oscillatory (damped_osc, noisy_damped_osc), regime-switching
(piecewise_regime), and periodic (sawtooth, square, triangle, sine,
seasonal_trend) dynamics. Generation is a pure function of
(name, seed, params): noise comes from the Philox stream in :mod:`.rng`,
so a spec reproduces bit-for-bit.

Default parameters (all overridable through ``TaskSpec.params``):

==================  =========================================================
arma                phi=(0.75, -0.25), theta=(0.65, 0.35), sigma=1.0,
                    x0=x1=0; order-(2,2) recurrence driven by Gaussian noise
chaotic_logistic    r=3.9; x0 defaults to 0.5 plus a 1e-3 seed jitter so
                    different seeds give different trajectories
damped_osc          amplitude=10, decay=0.008, omega=0.25 rad/step; the
                    decay is gentle enough that step sizes stay within 5x
                    of their median (no pseudo-discontinuities)
noisy_damped_osc    damped_osc plus N(0, noise_sigma^2), noise_sigma=0.05
piecewise_regime    three equal segments: 0.1*t, 30 + 5*sin(0.3*t), 60 - 0.2*t
sawtooth            period=25, unit amplitude, rising ramp starting at 0
square              period=25, +1 on the first half period, -1 on the second
triangle            period=25, unit amplitude, in phase with sine
sine                period=25, unit amplitude
seasonal_trend      slope=0.05, period=25, amplitude=2
==================  =========================================================
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Prng, STREAM_DATA

TASK_NAMES = (
    "arma",
    "chaotic_logistic",
    "damped_osc",
    "noisy_damped_osc",
    "piecewise_regime",
    "sawtooth",
    "square",
    "triangle",
    "seasonal_trend",
    "sine",
)

_DEFAULTS: dict[str, dict] = {
    "arma": {"phi1": 0.75, "phi2": -0.25, "theta1": 0.65, "theta2": 0.35,
             "sigma": 1.0, "x0": 0.0, "x1": 0.0},
    "chaotic_logistic": {"r": 3.9, "x0": None},
    "damped_osc": {"amplitude": 10.0, "decay": 0.008, "omega": 0.25},
    "noisy_damped_osc": {"amplitude": 10.0, "decay": 0.008, "omega": 0.25,
                         "noise_sigma": 0.05},
    "piecewise_regime": {},
    "sawtooth": {"period": 25.0},
    "square": {"period": 25.0},
    "triangle": {"period": 25.0},
    "seasonal_trend": {"slope": 0.05, "period": 25.0, "amplitude": 2.0},
    "sine": {"period": 25.0},
}


@dataclass
class TaskSpec:
    """One generator invocation: which series, how long, which seed."""

    name: str
    length: int = 200
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ConfigError(
                f"unknown task {self.name!r}; valid tasks: {', '.join(TASK_NAMES)}")
        if self.length < 16:
            raise ConfigError(f"series length must be >= 16, got {self.length}")
        unknown = set(self.params) - set(_DEFAULTS[self.name])
        if unknown:
            raise ConfigError(
                f"unknown parameter(s) {sorted(unknown)} for task {self.name!r}")

    def resolved_params(self) -> dict:
        merged = dict(_DEFAULTS[self.name])
        merged.update(self.params)
        return merged


def generate(spec: TaskSpec) -> np.ndarray:
    """Deterministic float64 series for the given spec."""
    p = spec.resolved_params()
    t = np.arange(spec.length, dtype=np.float64)
    rng = Prng(spec.seed, STREAM_DATA)

    if spec.name == "arma":
        eps = rng.normal(size=spec.length, sigma=p["sigma"]) if p["sigma"] > 0 \
            else np.zeros(spec.length)
        x = np.empty(spec.length)
        x[0], x[1] = p["x0"], p["x1"]
        for i in range(2, spec.length):
            x[i] = (p["phi1"] * x[i - 1] + p["phi2"] * x[i - 2]
                    + eps[i] + p["theta1"] * eps[i - 1] + p["theta2"] * eps[i - 2])
        return x

    if spec.name == "chaotic_logistic":
        x0 = p["x0"]
        if x0 is None:
            x0 = 0.5 + 1e-3 * rng.uniform(-1.0, 1.0)
        if not 0.0 < x0 < 1.0:
            raise ConfigError(f"logistic x0 must lie in (0, 1), got {x0}")
        x = np.empty(spec.length)
        x[0] = x0
        for i in range(1, spec.length):
            x[i] = p["r"] * x[i - 1] * (1.0 - x[i - 1])
        return x

    if spec.name == "damped_osc":
        return p["amplitude"] * np.exp(-p["decay"] * t) * np.sin(p["omega"] * t)

    if spec.name == "noisy_damped_osc":
        clean = p["amplitude"] * np.exp(-p["decay"] * t) * np.sin(p["omega"] * t)
        return clean + rng.normal(size=spec.length, sigma=p["noise_sigma"])

    if spec.name == "piecewise_regime":
        third = spec.length // 3
        x = np.empty(spec.length)
        x[:third] = 0.1 * t[:third]
        x[third:2 * third] = 30.0 + 5.0 * np.sin(0.3 * t[third:2 * third])
        x[2 * third:] = 60.0 - 0.2 * t[2 * third:]
        return x

    if spec.name == "sawtooth":
        phase = np.mod(t / p["period"] + 0.5, 1.0)
        return 2.0 * phase - 1.0

    if spec.name == "square":
        phase = np.mod(t / p["period"], 1.0)
        return np.where(phase < 0.5, 1.0, -1.0)

    if spec.name == "triangle":
        return 2.0 / np.pi * np.arcsin(np.sin(2.0 * np.pi * t / p["period"]))

    if spec.name == "seasonal_trend":
        return p["slope"] * t + p["amplitude"] * np.sin(2.0 * np.pi * t / p["period"])

    # sine
    return np.sin(2.0 * np.pi * t / p["period"])


@dataclass
class SeriesDataset:
    """Train/test split with train-only z-score normalization.

    The model always consumes normalized values; predictions are mapped
    back through ``denormalize`` before metrics, so errors are reported in
    raw series units.
    """

    raw: np.ndarray
    train: np.ndarray
    test: np.ndarray
    mean: float
    std: float
    window: int

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    @property
    def n_windows(self) -> int:
        return len(self.train) - self.window

    def training_windows(self) -> tuple[np.ndarray, np.ndarray]:
        """All stride-1 windows over the train portion, normalized.

        Returns inputs and next-step targets, each (n_windows, window, 1);
        the target at offset j inside a window is raw[start + j + 1].
        """
        norm = self.normalize(self.train)
        n = self.n_windows
        inputs = np.empty((n, self.window, 1))
        targets = np.empty((n, self.window, 1))
        for i in range(n):
            inputs[i, :, 0] = norm[i:i + self.window]
            targets[i, :, 0] = norm[i + 1:i + self.window + 1]
        return inputs, targets

    def evaluation_inputs(self) -> np.ndarray:
        """Normalized full prefix (1, len-1, 1) for test-time rollout."""
        return self.normalize(self.raw[:-1]).reshape(1, -1, 1)

    def test_positions(self) -> slice:
        """Positions of the rollout output that predict test values."""
        return slice(len(self.train) - 1, len(self.raw) - 1)


def make_dataset(series: np.ndarray, split_ratio: float = 0.8,
                 window: int = 32) -> SeriesDataset:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise DimensionError(f"series must be 1-D, got shape {series.shape}")
    train_len = int(np.floor(split_ratio * len(series)))
    if window >= train_len:
        raise ConfigError(
            f"window {window} must be smaller than the train span {train_len}")
    train = series[:train_len]
    test = series[train_len:]
    mean = float(train.mean())
    std = float(train.std())
    if std < 1e-12:
        std = 1.0
    return SeriesDataset(raw=series, train=train, test=test,
                         mean=mean, std=std, window=window)


def export_series(spec: TaskSpec, path) -> Path:
    """Write the series as CSV with header ``t,value``."""
    path = Path(path)
    series = generate(spec)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "value"])
        for i, value in enumerate(series):
            writer.writerow([i, repr(float(value))])
    return path
