"""Training loop, metrics, and the quantum-vs-classical comparison protocol.

One run = (model config, task, seed): generate the series, split 80/20,
train on sliding windows with MSE loss on normalized next-step targets,
then roll the model over the full prefix and score the test positions in
raw units. Runs are deterministic given their seed. A matrix of runs
(tasks x variants x seeds) aggregates per-variant means and derives the
per-task quantum-better flag: true iff the quantum variant is strictly
better on both MAE and MSE.
"""
from __future__ import annotations

import csv
import dataclasses
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DimensionError
from .model import Model, ModelConfig, save_checkpoint
from .rng import Prng, STREAM_SHUFFLE
from .tasks import TaskSpec, generate, make_dataset


@dataclass
class TrainSettings:
    epochs: int = 300
    batch_size: int = 64
    window: int = 32
    lr: float = 1e-3


@dataclass
class RunReport:
    task: str
    variant: str
    seed: int
    mae: float
    mse: float
    epochs: int
    wall_seconds: float
    failed: bool = False
    note: str = ""
    epoch0_train_mse: float = float("nan")
    final_train_mse: float = float("nan")


class Adam:
    """Adam with bias correction over a graph's registered parameters."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def apply(self, graph: ad.Graph) -> None:
        """One update over all trainable parameters; grads are consumed."""
        trainable = [(n, p) for n, p in graph.params.items() if p.requires_grad]
        for name, p in trainable:
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        self.step += 1
        correct1 = 1.0 - self.beta1 ** self.step
        correct2 = 1.0 - self.beta2 ** self.step
        for name, p in trainable:
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            p.grad = None


def metrics(y: np.ndarray, yhat: np.ndarray) -> tuple[float, float]:
    """Mean absolute error and mean squared error."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size == 0:
        raise DimensionError(f"metrics: shapes {y.shape} vs {yhat.shape}")
    diff = y - yhat
    return float(np.mean(np.abs(diff))), float(np.mean(diff * diff))


def compare(reports: list[RunReport]) -> bool:
    """Quantum-better flag for one task: strictly lower mean MAE and MSE."""
    by_variant: dict[str, list[RunReport]] = {"classical": [], "quantum": []}
    for r in reports:
        if r.variant not in by_variant:
            raise ConfigError(f"unknown variant {r.variant!r}")
        by_variant[r.variant].append(r)
    if not by_variant["classical"] or not by_variant["quantum"]:
        raise ConfigError("compare needs reports for both variants")
    seeds_c = sorted(r.seed for r in by_variant["classical"])
    seeds_q = sorted(r.seed for r in by_variant["quantum"])
    if seeds_c != seeds_q:
        raise ConfigError(f"seed sets differ: classical {seeds_c} vs quantum {seeds_q}")

    def means(rs):
        ok = [r for r in rs if not r.failed]
        if not ok:
            return np.inf, np.inf
        if len(ok) < len(rs):
            print(f"warning: excluding {len(rs) - len(ok)} failed run(s) "
                  f"for {rs[0].task}/{rs[0].variant}", file=sys.stderr)
        return (float(np.mean([r.mae for r in ok])),
                float(np.mean([r.mse for r in ok])))

    mae_q, mse_q = means(by_variant["quantum"])
    mae_c, mse_c = means(by_variant["classical"])
    return bool(mae_q < mae_c and mse_q < mse_c)


def _train_mse(model: Model, inputs: np.ndarray, targets: np.ndarray,
               batch_size: int) -> float:
    """Average next-step MSE over all windows, without recording."""
    total, count = 0.0, 0
    with model.graph.no_grad():
        for start in range(0, len(inputs), batch_size):
            xb = inputs[start:start + batch_size]
            yb = targets[start:start + batch_size]
            pred, _ = model.forward(xb)
            total += float(np.sum((pred.data - yb) ** 2))
            count += yb.size
    return total / count


def train_model(config: ModelConfig, task: TaskSpec, seed: int,
                settings: TrainSettings = TrainSettings(),
                checkpoint_path=None) -> RunReport:
    """Train one variant on one task with one seed; report test-set errors."""
    started = time.perf_counter()
    task = replace(task, seed=seed)
    dataset = make_dataset(generate(task), split_ratio=0.8, window=settings.window)
    inputs, targets = dataset.training_windows()
    model = Model(config, seed=seed, decay_horizon=settings.window)
    optimizer = Adam(lr=settings.lr)
    shuffler = Prng(seed, STREAM_SHUFFLE)

    epoch0 = _train_mse(model, inputs, targets, settings.batch_size)
    final = epoch0
    failed, note = False, ""
    for _ in range(settings.epochs):
        order = shuffler.permutation(len(inputs))
        for start in range(0, len(order), settings.batch_size):
            pick = order[start:start + settings.batch_size]
            xb = ad.Tensor(inputs[pick])
            yb = ad.Tensor(targets[pick])
            pred, _ = model.forward(xb)
            loss = ad.mean_all(ad.square(pred - yb))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                failed, note = True, f"training loss diverged ({loss_value})"
                break
            model.graph.backward(loss)
            optimizer.apply(model.graph)
            model.graph.clear()
        if failed:
            break

    if failed:
        mae = mse = float("nan")
    else:
        final = _train_mse(model, inputs, targets, settings.batch_size)
        preds = model.predict(dataset.evaluation_inputs())[0, :, 0]
        yhat = dataset.denormalize(preds[dataset.test_positions()])
        mae, mse = metrics(dataset.test, yhat)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, config, model.graph)
    return RunReport(task=task.name, variant=config.variant, seed=seed,
                     mae=mae, mse=mse, epochs=settings.epochs,
                     wall_seconds=time.perf_counter() - started,
                     failed=failed, note=note,
                     epoch0_train_mse=epoch0, final_train_mse=final)


# -- run matrix ---------------------------------------------------------------

@dataclass
class MatrixJob:
    config: ModelConfig
    task: TaskSpec
    seed: int
    settings: TrainSettings
    checkpoint_path: Optional[str] = None


def _run_job(job: MatrixJob) -> RunReport:
    return train_model(job.config, job.task, job.seed, job.settings,
                       checkpoint_path=job.checkpoint_path)


def run_matrix(base_config: ModelConfig, task_specs: list[TaskSpec],
               variants: list[str], seeds: list[int],
               settings: TrainSettings, workers: int = 1,
               checkpoint_dir=None, progress=None) -> list[RunReport]:
    """Run every (task, variant, seed) combination, optionally in parallel."""
    jobs = []
    for task in task_specs:
        for variant in variants:
            for seed in seeds:
                path = None
                if checkpoint_dir is not None:
                    path = str(Path(checkpoint_dir) /
                               f"{task.name}_{variant}_seed{seed}.qrwkv")
                jobs.append(MatrixJob(
                    config=dataclasses.replace(base_config, variant=variant),
                    task=task, seed=seed, settings=settings,
                    checkpoint_path=path))
    reports = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for report in pool.map(_run_job, jobs):
                reports.append(report)
                if progress:
                    progress(report)
    else:
        for job in jobs:
            report = _run_job(job)
            reports.append(report)
            if progress:
                progress(report)
    return reports


def write_results_csv(reports: list[RunReport], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task", "variant", "seed", "mae", "mse",
                         "epochs", "wall_seconds"])
        for r in reports:
            writer.writerow([r.task, r.variant, r.seed, repr(r.mae), repr(r.mse),
                             r.epochs, f"{r.wall_seconds:.3f}"])
    return path


def write_markdown_table(reports: list[RunReport], path) -> Path:
    """Aggregate table: per task, mean errors per variant plus the flag."""
    path = Path(path)
    tasks_order = []
    grouped: dict[str, list[RunReport]] = {}
    for r in reports:
        if r.task not in grouped:
            grouped[r.task] = []
            tasks_order.append(r.task)
        grouped[r.task].append(r)
    lines = ["| Task | Model | MAE | MSE | Quantum Better |",
             "| --- | --- | --- | --- | --- |"]
    for task in tasks_order:
        rows = grouped[task]
        flag = "Yes" if compare(rows) else "No"
        for variant in ("quantum", "classical"):
            ok = [r for r in rows if r.variant == variant and not r.failed]
            mae = np.mean([r.mae for r in ok]) if ok else float("nan")
            mse = np.mean([r.mse for r in ok]) if ok else float("nan")
            label = flag if variant == "quantum" else ""
            lines.append(f"| {task} | {variant} | {mae:.4f} | {mse:.4f} | {label} |")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
