"""
Offline training: Smooth L1 offset loss, the mini-batch loop with per-epoch
checkpoints, and finite-difference gradient checking.
"""

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from sesiam_helpers.config import ModelConfig, TrainConfig
from sesiam_helpers.errors import InvalidArgumentError, TrainingDivergedError
from sesiam_helpers.load_sequences import SequenceRecord
from sesiam_helpers.sampling import PatchPair, SequencePairSource

from .model import SiameseSENet, build_model, deserialize_weights, image_to_tensor, serialize_weights

logger = logging.getLogger(__name__)


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")


def smooth_l1(x, sigma: float = 1.0):
    """
    0.5 * sigma^2 * x^2 where |x| <= 1 / sigma^2, |x| - 0.5 / sigma^2 elsewhere.

    Works elementwise on tensors and arrays; a Python number gives a float.
    """
    _check_sigma(sigma)
    sigma2 = sigma * sigma
    if isinstance(x, torch.Tensor):
        abs_x = x.abs()
        return torch.where(abs_x <= 1.0 / sigma2, 0.5 * sigma2 * x * x, abs_x - 0.5 / sigma2)
    abs_x = np.abs(np.asarray(x, dtype=np.float64))
    value = np.where(abs_x <= 1.0 / sigma2, 0.5 * sigma2 * abs_x * abs_x, abs_x - 0.5 / sigma2)
    return float(value) if value.ndim == 0 else value


def offsets_loss(pred, target, sigma: float = 1.0):
    """Sum of `smooth_l1(target - pred)` over the four offsets (last axis)."""
    if isinstance(pred, torch.Tensor) or isinstance(target, torch.Tensor):
        pred = torch.as_tensor(pred)
        target = torch.as_tensor(target, dtype=pred.dtype)
        return smooth_l1(target - pred, sigma).sum(dim=-1)
    residual = np.asarray(target, dtype=np.float64) - np.asarray(pred, dtype=np.float64)
    value = np.sum(smooth_l1(residual, sigma), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def batch_loss(pred: torch.Tensor, target: torch.Tensor, sigma: float = 1.0) -> torch.Tensor:
    """Mean over the batch of the per-sample offset loss."""
    return offsets_loss(pred, target, sigma).mean()


def collate_pairs(pairs: Sequence[PatchPair], dtype=torch.float32):
    z = image_to_tensor(np.stack([pair.template for pair in pairs])).to(dtype)
    x = image_to_tensor(np.stack([pair.detection for pair in pairs])).to(dtype)
    labels = torch.tensor([list(pair.label) for pair in pairs], dtype=dtype)
    provenance = [pair.provenance for pair in pairs]
    return z, x, labels, provenance


@dataclass
class TrainHistory:
    step_losses: List[float] = field(default_factory=list)
    step_seconds: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "step_losses": list(self.step_losses),
            "step_seconds": list(self.step_seconds),
            "epoch_losses": list(self.epoch_losses),
            "epoch_seconds": list(self.epoch_seconds),
        }

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "TrainHistory":
        data = data or {}
        return cls(**{name: list(data.get(name, [])) for name in cls().to_dict()})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(["step", "loss", "wall_clock"])
            for step, (loss, seconds) in enumerate(zip(self.step_losses, self.step_seconds)):
                writer.writerow([step, repr(loss), f"{seconds:.6f}"])


def make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    momentum = config.momentum if config.optimizer == "momentum" else 0.0
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=momentum)


class Trainer:
    """
    Mini-batch training of a `SiameseSENet`.

    Optimizer steps are strictly sequential; only batch preparation may run on
    worker threads (see `SequencePairSource`).
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        model: Optional[SiameseSENet] = None,
        progress: bool = True,
    ):
        self.model_config = model_config
        self.train_config = train_config
        self.model = model if model is not None else build_model(model_config, train_config.seed)
        self.optimizer = make_optimizer(self.model, train_config)
        self.history = TrainHistory()
        self.start_epoch = 0
        self.progress = progress
        self.checkpoints: List[Path] = []

    def resume(self, checkpoint) -> None:
        """Restore weights, optimizer state, history and epoch counter."""
        model, extra = deserialize_weights(checkpoint, expected_config=self.model_config)
        self.model.load_state_dict(model.state_dict())
        self.optimizer = make_optimizer(self.model, self.train_config)
        if extra.get("optimizer_state"):
            self.optimizer.load_state_dict(extra["optimizer_state"])
        self.history = TrainHistory.from_dict(extra.get("history"))
        self.start_epoch = int(extra.get("epoch", 0))
        logger.info("resuming from %s at epoch %d", checkpoint, self.start_epoch)

    def checkpoint(self, epoch: int) -> Optional[Path]:
        if not self.train_config.checkpoint_dir:
            return None
        directory = Path(self.train_config.checkpoint_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"epoch_{epoch:03d}.pt"
        serialize_weights(
            self.model,
            path,
            extra={
                "epoch": epoch,
                "optimizer_state": self.optimizer.state_dict(),
                "train_config": self.train_config.to_dict(),
                "history": self.history.to_dict(),
            },
        )
        self.checkpoints.append(path)
        return path

    def step(self, pairs: Sequence[PatchPair]) -> float:
        z, x, labels, provenance = collate_pairs(pairs)
        self.optimizer.zero_grad()
        loss = batch_loss(self.model(z, x), labels, self.train_config.sigma)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(len(self.history.step_losses), value, provenance)
        loss.backward()
        self.optimizer.step()
        return value

    def train(self, source, resume_from=None) -> Tuple[SiameseSENet, TrainHistory]:
        """
        Run the remaining epochs over `source`.

        Args:
            source: a `SequencePairSource` or `FixedPairSource`.
            resume_from (optional): checkpoint to continue from.

        Returns:
            tuple: the trained model (left in eval mode) and its history.
        """
        if resume_from is not None:
            self.resume(resume_from)
        steps = self.train_config.steps_per_epoch
        self.model.train()
        started = time.perf_counter()
        for epoch in range(self.start_epoch, self.train_config.epochs):
            epoch_started = time.perf_counter()
            epoch_losses = []
            batches = tqdm(
                source.batches(epoch, steps),
                total=steps,
                desc=f"epoch {epoch + 1}/{self.train_config.epochs}",
                disable=not self.progress,
                leave=False,
            )
            for pairs in batches:
                loss = self.step(pairs)
                epoch_losses.append(loss)
                self.history.step_losses.append(loss)
                self.history.step_seconds.append(time.perf_counter() - started)
                batches.set_postfix(loss=f"{loss:.4f}")
            self.history.epoch_losses.append(float(np.mean(epoch_losses)))
            self.history.epoch_seconds.append(time.perf_counter() - epoch_started)
            logger.info(
                "epoch %d/%d: mean loss %.6f (%.1f s)",
                epoch + 1,
                self.train_config.epochs,
                self.history.epoch_losses[-1],
                self.history.epoch_seconds[-1],
            )
            self.checkpoint(epoch + 1)
        self.model.eval()
        return self.model, self.history


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: Sequence[SequenceRecord],
    resume_from=None,
    progress: bool = True,
) -> Tuple[SiameseSENet, TrainHistory]:
    """Train on pairs regenerated from `dataset` every epoch."""
    source = SequencePairSource(
        list(dataset),
        model_config,
        batch_size=train_config.batch_size,
        seed=train_config.seed,
        num_workers=train_config.num_workers,
    )
    trainer = Trainer(model_config, train_config, progress=progress)
    return trainer.train(source, resume_from=resume_from)


@dataclass
class GradientReport:
    """
    Relative error between analytic gradients and central differences taken
    at `step`, per parameter tensor.

    `errors` holds the largest error over the sampled entries of each tensor.
    When perturbing an entry by +/- `step` flips a ReLU or max-pool decision,
    the difference is taken with the activation pattern of the unperturbed
    point held fixed; `kinks` counts those entries and `raw_errors` keeps the
    plain-difference errors of every entry.
    """

    errors: Dict[str, float] = field(default_factory=dict)
    raw_errors: Dict[str, float] = field(default_factory=dict)
    kinks: Dict[str, int] = field(default_factory=dict)
    step: float = 1e-4
    tolerance: float = 1e-3

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self, count: int = 5) -> List[Tuple[str, float]]:
        return sorted(self.errors.items(), key=lambda item: item[1], reverse=True)[:count]


def _relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


class ActivationPatterns:
    """
    Records which units every `nn.ReLU` passes and which element every
    `nn.MaxPool2d` selects during a forward pass, and can replay a recorded
    pattern on a later pass.
    """

    def __init__(self, module: nn.Module):
        self.mode = "off"
        self.patterns: List[torch.Tensor] = []
        self._replay: List[torch.Tensor] = []
        self._stash: Optional[torch.Tensor] = None
        self._handles = []
        for layer in module.modules():
            if isinstance(layer, (nn.ReLU, nn.MaxPool2d)):
                self._handles.append(layer.register_forward_pre_hook(self._before))
                self._handles.append(layer.register_forward_hook(self._after))

    @staticmethod
    def _pattern(layer: nn.Module, x: torch.Tensor) -> torch.Tensor:
        if isinstance(layer, nn.ReLU):
            return x > 0
        _, indices = F.max_pool2d(
            x,
            layer.kernel_size,
            layer.stride,
            layer.padding,
            layer.dilation,
            ceil_mode=layer.ceil_mode,
            return_indices=True,
        )
        return indices

    def _before(self, layer, inputs):
        if self.mode == "record":
            self.patterns.append(self._pattern(layer, inputs[0]))
        elif self.mode == "replay":
            self._stash = inputs[0].clone()

    def _after(self, layer, inputs, output):
        if self.mode != "replay":
            return None
        pattern = self._replay.pop(0)
        if isinstance(layer, nn.ReLU):
            return self._stash * pattern
        flat = self._stash.flatten(2).gather(2, pattern.flatten(2))
        return flat.view(pattern.shape)

    def record(self, fn: Callable[[], torch.Tensor]) -> Tuple[float, List[torch.Tensor]]:
        self.mode, self.patterns = "record", []
        try:
            value = float(fn())
        finally:
            self.mode = "off"
        return value, self.patterns

    def replay(self, fn: Callable[[], torch.Tensor], patterns: List[torch.Tensor]) -> float:
        self.mode, self._replay = "replay", list(patterns)
        try:
            return float(fn())
        finally:
            self.mode, self._stash = "off", None

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()


def _same_patterns(a: List[torch.Tensor], b: List[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def check_gradients(
    module: nn.Module,
    loss_fn: Callable[[nn.Module], torch.Tensor],
    step: float = 1e-4,
    entries: int = 4,
    tolerance: float = 1e-3,
    seed: int = 0,
) -> GradientReport:
    """
    Compare autograd gradients with central finite differences.

    Works on a float64 copy of `module`. For every named parameter a few
    entries are sampled and d L / d p is compared with
    (L(p + h e) - L(p - h e)) / 2h at h = `step`.

    Args:
        module: the network; left unchanged.
        loss_fn: maps the float64 module to a scalar loss.
        step: finite-difference step.
        entries: sampled entries per parameter tensor (all of them if fewer).
        tolerance: threshold used by `GradientReport.passed`.
        seed: seed of the entry sampler.

    Returns:
        GradientReport
    """
    checked = copy.deepcopy(module).double()
    checked.zero_grad()
    loss_fn(checked).backward()
    generator = torch.Generator().manual_seed(seed)
    report = GradientReport(step=step, tolerance=tolerance)
    patterns = ActivationPatterns(checked)

    def loss():
        return loss_fn(checked)

    try:
        with torch.no_grad():
            _, base = patterns.record(loss)
            for name, parameter in checked.named_parameters():
                if parameter.grad is None:
                    continue
                gradient = parameter.grad.detach().flatten()
                flat = parameter.data.view(-1)
                count = min(entries, flat.numel())
                chosen = torch.randperm(flat.numel(), generator=generator)[:count]
                worst, worst_raw, kinks = 0.0, 0.0, 0
                for index in chosen.tolist():
                    original = float(flat[index])
                    flat[index] = original + step
                    upper, upper_patterns = patterns.record(loss)
                    flat[index] = original - step
                    lower, lower_patterns = patterns.record(loss)
                    analytic = float(gradient[index])
                    raw = _relative_error(analytic, (upper - lower) / (2.0 * step))
                    error = raw
                    if not (_same_patterns(upper_patterns, base) and _same_patterns(lower_patterns, base)):
                        kinks += 1
                        lower = patterns.replay(loss, base)
                        flat[index] = original + step
                        upper = patterns.replay(loss, base)
                        error = _relative_error(analytic, (upper - lower) / (2.0 * step))
                    flat[index] = original
                    worst, worst_raw = max(worst, error), max(worst_raw, raw)
                report.errors[name] = worst
                report.raw_errors[name] = worst_raw
                report.kinks[name] = kinks
    finally:
        patterns.close()
    return report


def gradient_check(
    model_config: ModelConfig,
    sample: Sequence[PatchPair],
    tolerance: float = 1e-3,
    sigma: float = 1.0,
    seed: int = 0,
    step: float = 1e-4,
) -> GradientReport:
    """
    Gradient check of the full network on one batch of pairs.

    The model is checked in train mode: batch-norm normalizes with the batch
    statistics, which keeps activations of a freshly initialized network at
    unit scale. Use at least two pairs.
    """
    pairs = [sample] if isinstance(sample, PatchPair) else list(sample)
    model = build_model(model_config, seed).train()
    z, x, labels, _ = collate_pairs(pairs, dtype=torch.float64)

    def loss_fn(module):
        return batch_loss(module(z, x), labels, sigma)

    report = check_gradients(model, loss_fn, step=step, tolerance=tolerance, seed=seed)
    logger.info(
        "gradient check at step %.0e: max relative error %.3e (%d entries crossed a kink)",
        step,
        report.max_error,
        sum(report.kinks.values()),
    )
    return report
