"""Training loop, losses and evaluation for the conditioned LSTM amp model."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, ExampleTriple, condition_concat, minibatch_iter
from .nn.adam import AdamState, adam_update
from .nn.checkpoint import Checkpoint, save_checkpoint
from .nn.lstm import LstmState, batch_backward, batch_forward, lstm_forward

log = logging.getLogger(__name__)

LOSSES = ("esr", "mse")


class TrainingError(RuntimeError):
    pass


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((target - pred) ** 2))


def esr_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Error energy over target energy, both summed across the whole batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    energy = float(np.sum(target**2))
    if energy == 0.0:
        raise ValueError("ESR is undefined for a target with zero energy")
    return float(np.sum((target - pred) ** 2)) / energy


def loss_and_grad(pred: np.ndarray, target: np.ndarray, kind: str, warmup: int = 0):
    """Loss over samples ``warmup:`` of each row and its gradient w.r.t. ``pred`` (zero in the warm-up)."""
    p = np.asarray(pred, dtype=np.float64)[:, warmup:]
    t = np.asarray(target, dtype=np.float64)[:, warmup:]
    err = p - t
    if kind == "mse":
        loss = float(np.mean(err**2))
        g = 2.0 * err / err.size
    elif kind == "esr":
        energy = float(np.sum(t**2))
        if energy == 0.0:
            raise ValueError("ESR is undefined for a target with zero energy")
        loss = float(np.sum(err**2)) / energy
        g = 2.0 * err / energy
    else:
        raise ValueError(f"unknown loss {kind!r}")
    grad = np.zeros(np.shape(pred))
    grad[:, warmup:] = g
    return loss, grad


@dataclass
class TrainConfig:
    hidden_size: int = 32
    batch_size: int = 4
    iterations: int = 20000
    learning_rate: float = 1e-3
    final_learning_rate: float | None = None  # exponential decay target; None keeps lr constant
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: str = "esr"
    warmup: int = 1000
    truncation: int | None = None  # backprop window length in samples; None = whole segment
    bptt_warmup: bool = False  # also backpropagate into the warm-up samples
    seed: int = 0
    validate_every: int = 1000
    validate_at: tuple[int, ...] = ()  # extra iterations to validate at
    checkpoint_every: int | None = None
    checkpoint_path: str | None = None
    log_every: int = 200

    def validate(self, segment_length: int | None = None):
        for name in ("hidden_size", "batch_size", "iterations", "validate_every", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("learning_rate", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if segment_length is not None and self.warmup >= segment_length:
            raise ValueError(f"warmup {self.warmup} must be shorter than the segment ({segment_length})")
        if self.truncation is not None and self.truncation < 1:
            raise ValueError("truncation must be positive")

    def lr_at(self, iteration: int) -> float:
        if self.final_learning_rate is None or self.iterations <= 1:
            return self.learning_rate
        frac = iteration / (self.iterations - 1)
        return self.learning_rate * (self.final_learning_rate / self.learning_rate) ** frac


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)  # (iteration, mean ESR)
    best_iteration: int = -1
    best_val_esr: float = math.inf
    seconds: float = 0.0
    seconds_validating: float = 0.0

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,train_loss,val_esr\n")
            val = dict(self.validation)
            for i, loss in enumerate(self.train_loss, start=1):
                v = val.get(i)
                fh.write(f"{i},{loss!r},{'' if v is None else repr(v)}\n")


@dataclass
class ValidationResult:
    mean_esr: float
    table: list[tuple[str, float]]  # sorted worst first


def model_output(ckpt: Checkpoint, example_input: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Whole-segment prediction from a zero state, via the streaming kernel."""
    x = condition_concat(example_input, controls)
    y, _ = lstm_forward(ckpt.lstm, ckpt.head, x, LstmState.zeros(ckpt.hidden_size))
    return y


def validate(ckpt: Checkpoint, examples: list[ExampleTriple], warmup: int | None = None) -> ValidationResult:
    """Per-example ESR (batch size 1) over the samples after the warm-up."""
    if not examples:
        raise ValueError("no examples to validate on")
    w = ckpt.warmup if warmup is None else warmup
    rows = []
    for e in examples:
        y = model_output(ckpt, e.input, e.controls)
        rows.append((e.id, esr_loss(y[w:], e.target[w:])))
    rows.sort(key=lambda r: r[1], reverse=True)
    return ValidationResult(float(np.mean([r[1] for r in rows])), rows)


def train(dataset: Dataset, config: TrainConfig, init: Checkpoint | None = None) -> tuple[Checkpoint, TrainReport]:
    config.validate(dataset.segment_length)
    if not dataset.train:
        raise TrainingError("dataset has no training examples")
    val_examples = dataset.val
    rng = np.random.default_rng(config.seed)
    if init is None:
        ckpt = Checkpoint.fresh(config.hidden_size, dataset.control_names, dataset.sample_rate, rng, config.warmup)
    else:
        if init.control_names != dataset.control_names:
            raise TrainingError("initial checkpoint controls do not match the dataset")
        ckpt = init
    ckpt.warmup = config.warmup
    params = ckpt.param_dict()
    adam = AdamState.for_params(params, learning_rate=config.learning_rate, beta1=config.beta1,
                                beta2=config.beta2, epsilon=config.epsilon)
    batches = minibatch_iter(dataset, config.batch_size, seed=config.seed + 1)
    report = TrainReport()
    best = ckpt
    t0 = time.perf_counter()
    window = config.truncation or (dataset.segment_length - config.warmup)
    it = 0
    while it < config.iterations:
        batch = next(batches)
        x = condition_concat(batch.inputs, batch.controls)
        # warm-up pass without gradient, then one update per backprop window
        h = c = None
        start = 0
        if config.truncation is not None and config.warmup > 0:
            _, cache = batch_forward(ckpt.lstm, ckpt.head, x[:, :config.warmup])
            h, c = cache.final_state
            start = config.warmup
        while start < dataset.segment_length and it < config.iterations:
            if config.truncation is None:
                stop, skip = dataset.segment_length, config.warmup
            else:
                stop, skip = min(start + window, dataset.segment_length), 0
            y, cache = batch_forward(ckpt.lstm, ckpt.head, x[:, start:stop], h, c)
            loss, dy = loss_and_grad(y, batch.targets[:, start:stop], config.loss, skip)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at iteration {it + 1} on batch {batch.ids}")
            t_stop = skip if not config.bptt_warmup else 0
            g_lstm, g_head = batch_backward(ckpt.lstm, ckpt.head, cache, dy, t_stop)
            grads = {f"lstm.{k}": v for k, v in g_lstm.arrays().items()}
            grads.update({f"head.{k}": v for k, v in g_head.arrays().items()})
            adam, params = adam_update(adam, params, grads, learning_rate=config.lr_at(it))
            ckpt = ckpt.with_params(params)
            h, c = cache.final_state
            start = stop
            it += 1
            report.train_loss.append(loss)
            if it % config.log_every == 0:
                log.info("iter %d loss %.5f (%.1fs)", it, loss, time.perf_counter() - t0)
            if val_examples and (it % config.validate_every == 0 or it == config.iterations
                                 or it in config.validate_at):
                tv = time.perf_counter()
                res = validate(ckpt, val_examples, config.warmup)
                report.seconds_validating += time.perf_counter() - tv
                report.validation.append((it, res.mean_esr))
                log.info("iter %d validation ESR %.5f", it, res.mean_esr)
                if res.mean_esr < report.best_val_esr:
                    report.best_val_esr = res.mean_esr
                    report.best_iteration = it
                    best = ckpt
            if (config.checkpoint_every and config.checkpoint_path and it % config.checkpoint_every == 0):
                save_checkpoint(best if val_examples else ckpt, config.checkpoint_path)
            if config.truncation is None:
                break
    report.seconds = time.perf_counter() - t0
    final = best if val_examples else ckpt
    final.extra = {
        "train_config": asdict(config),
        "best_iteration": report.best_iteration,
        "best_val_esr": report.best_val_esr if val_examples else None,
        "iterations": it,
    }
    return final, report


@dataclass
class InterpolationReport:
    seen: list[tuple[np.ndarray, float]]
    unseen: list[tuple[np.ndarray, float]]

    @property
    def seen_mean(self) -> float:
        return float(np.mean([e for _, e in self.seen]))

    @property
    def unseen_mean(self) -> float:
        return float(np.mean([e for _, e in self.unseen])) if self.unseen else float("nan")

    @property
    def ratio(self) -> float:
        return self.unseen_mean / self.seen_mean if self.unseen else float("nan")


def midpoint_probes(train_configs: np.ndarray, n: int, rng: np.random.Generator):
    """Pick ``n`` training configurations and the midpoint to each one's nearest training neighbour."""
    configs = np.asarray(train_configs, dtype=np.float64)
    picks = rng.choice(len(configs), size=min(n, len(configs)), replace=False)
    seen = configs[picks]
    dist = np.abs(configs[picks, None, :] - configs[None, :, :]).sum(axis=2)
    dist[np.arange(len(picks)), picks] = np.inf
    partners = configs[np.argmin(dist, axis=1)]
    return seen, 0.5 * (seen + partners)


def control_interpolation_eval(ckpt: Checkpoint, dataset: Dataset, render, draw_input,
                               probes: int = 50, seed: int = 0) -> InterpolationReport:
    """Compare model ESR at training configurations against held-out midpoints.

    ``render(controls, x)`` produces fresh ground truth for input ``x`` and
    ``draw_input(rng)`` returns an input segment; probe k uses the same input
    segment for its seen and its unseen configuration.
    """
    rng = np.random.default_rng(seed)
    w = ckpt.warmup
    if not dataset.controls:
        x = draw_input(rng)
        y = model_output(ckpt, x, np.zeros(0))
        return InterpolationReport([(np.zeros(0), esr_loss(y[w:], render(np.zeros(0), x)[w:]))], [])
    train_cfgs = np.array([e.controls for e in dataset.train]) if dataset.train else \
        np.array([e.controls for e in dataset.examples])
    seen_cfgs, unseen_cfgs = midpoint_probes(train_cfgs, probes, rng)
    seen, unseen = [], []
    for s_cfg, u_cfg in zip(seen_cfgs, unseen_cfgs):
        x = draw_input(rng)
        for cfg, bucket in ((s_cfg, seen), (u_cfg, unseen)):
            target = render(cfg, x)
            y = model_output(ckpt, x, cfg)
            bucket.append((cfg, esr_loss(y[w:], target[w:])))
    return InterpolationReport(seen, unseen)
