"""Adversarial domain adaptation objectives and the training loop.

Four methods share one network and one loop:

* ``source_only``  - classifier cross-entropy on labeled source data only
* ``dann``         - + domain discriminator on features, via gradient reversal
* ``conditional``  - discriminator reads features (x) classifier predictions
* ``proposed``     - conditional, with target inputs mixed up inside the batch

A single backward pass realises the min-max game: the discriminator
minimises its domain cross-entropy while a gradient-scaling node with
factor ``-lambda_d`` between the features and the discriminator makes the
extractor maximise it.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics as M
from . import tensor as T
from .errors import ParameterError, ShapeError
from .model import CONDITIONAL, PLAIN, DiagnosisNet


class Method(str, enum.Enum):
    SourceOnly = "source-only"
    DANN = "dann"
    Conditional = "conditional"
    AugmentedConditional = "proposed"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"sourceonly": cls.SourceOnly, "source": cls.SourceOnly, "cdan": cls.Conditional,
                   "augmented-conditional": cls.AugmentedConditional,
                   "augmentedconditional": cls.AugmentedConditional}
        for m in cls:
            if m.value == key or m.name.lower() == key.replace("-", ""):
                return m
        if key.replace("-", "") in aliases:
            return aliases[key.replace("-", "")]
        raise ParameterError(f"unknown method {value!r}")

    @property
    def disc_mode(self) -> str:
        return CONDITIONAL if self in (Method.Conditional, Method.AugmentedConditional) else PLAIN


@dataclass
class TrainConfig:
    method: Method = Method.AugmentedConditional
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    lambda_d: float = 1.0
    # "constant" or "ramp" (2 / (1 + exp(-10 p)) - 1 over training progress p)
    lambda_schedule: str = "constant"
    mixup_alpha: float = 1.0
    # mix target batches only, or source and target ("both")
    mixup_scope: str = "target"
    # one lambda per batch or one per sample
    mixup_granularity: str = "batch"
    seed: int = 0
    dropout_rate: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be >= 2")
        if self.lambda_d < 0:
            raise ParameterError("lambda_d must be >= 0")
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")
        if self.mixup_alpha <= 0:
            raise ParameterError("mixup alpha must be positive")
        if self.lambda_schedule not in ("constant", "ramp"):
            raise ParameterError(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.mixup_scope not in ("target", "both"):
            raise ParameterError(f"unknown mixup scope {self.mixup_scope!r}")
        if self.mixup_granularity not in ("batch", "sample"):
            raise ParameterError(f"unknown mixup granularity {self.mixup_granularity!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        return d

    def lambda_at(self, progress: float) -> float:
        if self.lambda_schedule == "ramp":
            return self.lambda_d * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)
        return self.lambda_d


# ------------------------------------------------------------------ building blocks

def multilinear_map(e: T.Tensor, y: T.Tensor) -> T.Tensor:
    """Per-row outer product ``e_b (x) y_b`` flattened as ``i * K + k``."""
    return T.outer_flatten(T.as_tensor(e), T.as_tensor(y))


@dataclass
class MixupBatch:
    e_tilde: T.Tensor
    y_tilde: T.Tensor
    z_tilde: T.Tensor
    lambda_draws: np.ndarray
    perm: np.ndarray


def mixup_augment(e: T.Tensor, y_hat, alpha: float, rng: np.random.Generator,
                  granularity: str = "batch", lam=None, perm=None) -> MixupBatch:
    """Interpolate features and pseudo-labels with a shuffled copy of the batch.

    ``lambda ~ Beta(alpha, alpha)``; one draw per batch by default. ``lam``
    and ``perm`` override the random draws.
    """
    e = T.as_tensor(e)
    y_hat = T.as_tensor(y_hat, e.dtype)
    batch = e.shape[0]
    if batch < 2:
        raise ParameterError("mixup needs a batch of at least two samples")
    if y_hat.shape[0] != batch:
        raise ShapeError("features and pseudo-labels differ in batch size")
    if perm is None:
        perm = rng.permutation(batch)
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(batch)):
        raise ParameterError("perm must be a permutation of the batch")
    if lam is None:
        n = 1 if granularity == "batch" else batch
        lam = rng.beta(alpha, alpha, size=n)
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    if np.any(lam < 0) or np.any(lam > 1):
        raise ParameterError("mixing weights must lie in [0, 1]")
    if lam.size not in (1, batch):
        raise ShapeError("need one mixing weight per batch or per sample")
    w = lam.reshape(-1, 1).astype(e.dtype)
    e_t = T.add(T.mul(e, w), T.mul(T.take(e, perm), 1 - w))
    y_t = T.add(T.mul(y_hat, w), T.mul(T.take(y_hat, perm), 1 - w))
    return MixupBatch(e_t, y_t, multilinear_map(e_t, y_t), lam, perm)


@dataclass
class StepRngs:
    """Independent random streams, so no method perturbs another's draws."""

    source_dropout: np.random.Generator
    target_dropout: np.random.Generator
    mixup: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "StepRngs":
        a, b, c = np.random.SeedSequence([seed, 1]).spawn(3)
        return cls(np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c))


@dataclass
class Losses:
    total: T.Tensor
    clf: float
    disc: float


def combined_loss(net: DiagnosisNet, xs, ys, xt, config: TrainConfig, rngs: StepRngs,
                  lambda_d: Optional[float] = None, training: bool = True) -> Losses:
    """Classifier loss on source plus domain loss on source (0) and target (1).

    The domain term reaches the extractor through a gradient-scaling node
    with factor ``-lambda_d``; pseudo-labels entering the multilinear map are
    detached, so the domain loss never updates the classifier head.
    """
    method = config.method
    lam_d = config.lambda_d if lambda_d is None else lambda_d
    if method is not Method.SourceOnly and net.mode != method.disc_mode:
        raise ShapeError(f"{method.value} needs a {method.disc_mode} discriminator, model is {net.mode}")

    fs = net.features(xs, training, rngs.source_dropout)
    logits_s = net.classifier_logits(fs)
    clf = T.cross_entropy(logits_s, ys)
    if method is Method.SourceOnly:
        return Losses(clf, float(clf.data), float("nan"))

    ft = net.features(xt, training, rngs.target_dropout)
    if method is Method.DANN:
        zs, zt = fs, ft
    else:
        ps = T.softmax(logits_s).detach()
        pt = T.softmax(net.classifier_logits(ft.detach())).detach()
        if method is Method.Conditional:
            zs, zt = multilinear_map(fs, ps), multilinear_map(ft, pt)
        else:
            zt = mixup_augment(ft, pt, config.mixup_alpha, rngs.mixup, config.mixup_granularity).z_tilde
            if config.mixup_scope == "both":
                zs = mixup_augment(fs, ps, config.mixup_alpha, rngs.mixup, config.mixup_granularity).z_tilde
            else:
                zs = multilinear_map(fs, ps)

    d_logits = T.concat([net.discriminator_logits(T.grad_scale(zs, -lam_d)),
                         net.discriminator_logits(T.grad_scale(zt, -lam_d))])
    domain = np.concatenate([np.zeros(zs.shape[0], int), np.ones(zt.shape[0], int)])
    disc = T.cross_entropy(d_logits, domain)
    return Losses(T.add(clf, disc), float(clf.data), float(disc.data))


# ------------------------------------------------------------------ training loop

@dataclass
class EpochLog:
    epoch: int
    clf_loss: float
    disc_loss: float
    lambda_d: float
    seconds: float
    seed: int = 0
    eval: dict = field(default_factory=dict)

    def format(self) -> str:
        return M.format_report(self.eval, epoch=self.epoch, seed=self.seed, clf_loss=self.clf_loss,
                               disc_loss=self.disc_loss, lambda_d=self.lambda_d, seconds=self.seconds)


@dataclass
class TrainResult:
    net: DiagnosisNet
    log: list[EpochLog]
    config: TrainConfig


class _Cycler:
    """Yields index batches of a requested size, reshuffling after each pass."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, size: int) -> np.ndarray:
        out = []
        while size > 0:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + size]
            out.append(chunk)
            self.pos += chunk.size
            size -= chunk.size
        return np.concatenate(out)


def build_net(n_classes: int, config: TrainConfig, input_len: int = 1000) -> DiagnosisNet:
    return DiagnosisNet(n_classes, config.method.disc_mode, config.dropout_rate, seed=config.seed,
                        dtype=np.dtype(config.dtype), input_len=input_len)


def train(source_x: np.ndarray, source_y: np.ndarray, target_x: np.ndarray, config: TrainConfig,
          n_classes: Optional[int] = None, eval_x: Optional[np.ndarray] = None,
          eval_y: Optional[np.ndarray] = None, log_fn: Optional[Callable[[EpochLog], None]] = None,
          net: Optional[DiagnosisNet] = None) -> TrainResult:
    """Train on labeled source spectra and unlabeled target spectra.

    Each step pairs one source batch with an equally sized target batch; the
    target set is cycled with reshuffling. An epoch is one pass over the
    source set (a trailing batch smaller than two is dropped). When
    ``eval_x``/``eval_y`` are given, target metrics are logged every epoch.
    """
    source_x = np.asarray(source_x)
    source_y = np.asarray(source_y, dtype=int)
    target_x = np.asarray(target_x)
    if source_x.shape[0] == 0 or target_x.shape[0] == 0:
        raise ParameterError("source and target datasets must be non-empty")
    if source_x.shape[0] != source_y.shape[0]:
        raise ShapeError("one label per source sample required")
    if np.any(source_y < 0):
        raise ParameterError("every source sample needs a label")
    if n_classes is None:
        n_classes = int(source_y.max()) + 1
    dtype = np.dtype(config.dtype)
    source_x = source_x.astype(dtype)
    target_x = target_x.astype(dtype)

    if net is None:
        net = build_net(n_classes, config, source_x.shape[1])
    params = net.parameters()
    opt = T.Adam(params, lr=config.lr)
    order_ss, step_ss = np.random.SeedSequence([config.seed, 2]).spawn(2)
    order_rng = np.random.default_rng(order_ss)
    tgt_cycle = _Cycler(target_x.shape[0], np.random.default_rng(step_ss))
    rngs = StepRngs.from_seed(config.seed)

    n_src = source_x.shape[0]
    steps_per_epoch = max(1, n_src // config.batch_size + (1 if n_src % config.batch_size >= 2 else 0))
    total_steps = steps_per_epoch * config.epochs
    step = 0
    log: list[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = order_rng.permutation(n_src)
        clf_sum = disc_sum = 0.0
        n_batches = 0
        lam = config.lambda_at(0.0)
        for start in range(0, n_src, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if idx.size < 2:
                continue
            lam = config.lambda_at(step / max(total_steps - 1, 1))
            tidx = tgt_cycle.take(idx.size)
            opt.zero_grad()
            losses = combined_loss(net, source_x[idx], source_y[idx], target_x[tidx], config, rngs, lam)
            T.backward(losses.total, params)
            opt.step()
            clf_sum += losses.clf
            disc_sum += 0.0 if math.isnan(losses.disc) else losses.disc
            n_batches += 1
            step += 1
        entry = EpochLog(epoch, clf_sum / max(n_batches, 1),
                         float("nan") if config.method is Method.SourceOnly else disc_sum / max(n_batches, 1),
                         lam, time.perf_counter() - t0, config.seed)
        if eval_x is not None and eval_y is not None:
            entry.eval = M.evaluate(eval_y, net.predict(eval_x), n_classes)
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)
    return TrainResult(net, log, config)


def evaluate(net: DiagnosisNet, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    return M.evaluate(y, net.predict(x), net.n_classes)
