"""Feature extractor, classifier and domain discriminator.

    extractor   : 3 x (conv k=3, 10 ch, ReLU, dropout) -> flatten -> dense 256, ReLU, dropout
    classifier  : dense 256, ReLU -> dense K (softmax)
    discriminator: dense 512, ReLU -> dense 2 (softmax)

The discriminator reads 256 features (plain adversarial alignment) or the
256*K multilinear features-times-predictions map (conditional modes).
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError

INPUT_LEN = 1000
CONV_CHANNELS = 10
KERNEL = 3
N_CONV = 3
FEATURES = 256
CLS_HIDDEN = 256
DISC_HIDDEN = 512

PLAIN = "plain"
CONDITIONAL = "conditional"

EXTRACTOR_KEYS = ("conv0.w", "conv0.b", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b")
CLASSIFIER_KEYS = ("cls0.w", "cls0.b", "cls1.w", "cls1.b")
DISCRIMINATOR_KEYS = ("disc0.w", "disc0.b", "disc1.w", "disc1.b")


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class DiagnosisNet:
    """Parameters and forward passes of the three sub-networks."""

    def __init__(self, n_classes: int, mode: str = PLAIN, dropout_rate: float = 0.5,
                 seed: int = 0, dtype=np.float32, input_len: int = INPUT_LEN):
        if n_classes < 2:
            raise ParameterError("need at least two classes")
        if mode not in (PLAIN, CONDITIONAL):
            raise ParameterError(f"unknown discriminator mode {mode!r}")
        if not 0 <= dropout_rate < 1:
            raise ParameterError("dropout rate must lie in [0, 1)")
        self.n_classes = n_classes
        self.mode = mode
        self.dropout_rate = dropout_rate
        self.dtype = np.dtype(dtype)
        self.input_len = input_len
        self.flat_len = CONV_CHANNELS * (input_len - N_CONV * (KERNEL - 1))
        if self.flat_len <= 0:
            raise ParameterError(f"input length {input_len} too short for {N_CONV} convolutions")

        # independent streams so the discriminator width never shifts f/g init
        ext_ss, cls_ss, disc_ss = np.random.SeedSequence(seed).spawn(3)
        rng = np.random.default_rng(ext_ss)
        p = {}
        cin = 1
        for i in range(N_CONV):
            p[f"conv{i}.w"] = _uniform(rng, (CONV_CHANNELS, cin, KERNEL), cin * KERNEL, self.dtype)
            p[f"conv{i}.b"] = np.zeros(CONV_CHANNELS, self.dtype)
            cin = CONV_CHANNELS
        p["fc.w"] = _uniform(rng, (self.flat_len, FEATURES), self.flat_len, self.dtype)
        p["fc.b"] = np.zeros(FEATURES, self.dtype)
        rng = np.random.default_rng(cls_ss)
        p["cls0.w"] = _uniform(rng, (FEATURES, CLS_HIDDEN), FEATURES, self.dtype)
        p["cls0.b"] = np.zeros(CLS_HIDDEN, self.dtype)
        p["cls1.w"] = _uniform(rng, (CLS_HIDDEN, n_classes), CLS_HIDDEN, self.dtype)
        p["cls1.b"] = np.zeros(n_classes, self.dtype)
        rng = np.random.default_rng(disc_ss)
        din = self.disc_input_width
        p["disc0.w"] = _uniform(rng, (din, DISC_HIDDEN), din, self.dtype)
        p["disc0.b"] = np.zeros(DISC_HIDDEN, self.dtype)
        p["disc1.w"] = _uniform(rng, (DISC_HIDDEN, 2), DISC_HIDDEN, self.dtype)
        p["disc1.b"] = np.zeros(2, self.dtype)
        self.params = {k: T.parameter(v, name=k) for k, v in p.items()}

    @property
    def disc_input_width(self) -> int:
        return FEATURES * (self.n_classes if self.mode == CONDITIONAL else 1)

    def group(self, keys) -> list[T.Tensor]:
        return [self.params[k] for k in keys]

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def n_parameters(self, keys=None) -> int:
        keys = self.params.keys() if keys is None else keys
        return sum(self.params[k].data.size for k in keys)

    # ------------------------------------------------------------ forward

    def _input(self, x) -> T.Tensor:
        if isinstance(x, T.Tensor):
            data = x
        else:
            data = T.Tensor(np.asarray(x, dtype=self.dtype))
        if data.data.ndim == 2:
            data = T.reshape(data, (data.shape[0], 1, data.shape[1]))
        if data.data.ndim != 3 or data.shape[1] != 1 or data.shape[2] != self.input_len:
            raise ShapeError(f"expected input [batch, {self.input_len}], got {data.shape}")
        return data

    def features(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> T.Tensor:
        """Extractor output ``[batch, 256]``."""
        p = self.params
        h = self._input(x)
        for i in range(N_CONV):
            h = T.conv1d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            h = T.dropout(T.relu(h), self.dropout_rate, training, rng)
        h = T.flatten(h)
        h = T.relu(T.dense(h, p["fc.w"], p["fc.b"]))
        return T.dropout(h, self.dropout_rate, training, rng)

    def classifier_logits(self, f: T.Tensor) -> T.Tensor:
        if f.data.ndim != 2 or f.shape[1] != FEATURES:
            raise ShapeError(f"classifier expects [batch, {FEATURES}], got {f.shape}")
        p = self.params
        h = T.relu(T.dense(f, p["cls0.w"], p["cls0.b"]))
        return T.dense(h, p["cls1.w"], p["cls1.b"])

    def classify(self, f: T.Tensor) -> T.Tensor:
        return T.softmax(self.classifier_logits(f))

    def discriminator_logits(self, z: T.Tensor) -> T.Tensor:
        if z.data.ndim != 2 or z.shape[1] != self.disc_input_width:
            raise ShapeError(
                f"discriminator in {self.mode} mode expects width {self.disc_input_width}, got {z.shape}")
        p = self.params
        h = T.relu(T.dense(z, p["disc0.w"], p["disc0.b"]))
        return T.dense(h, p["disc1.w"], p["disc1.b"])

    def discriminate(self, z: T.Tensor) -> T.Tensor:
        """Domain probabilities ``[batch, 2]``: column 0 source, column 1 target."""
        return T.softmax(self.discriminator_logits(z))

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        out = []
        for i in range(0, x.shape[0], batch_size):
            out.append(self.classify(self.features(x[i:i + batch_size])).data)
        if not out:
            return np.zeros((0, self.n_classes), self.dtype)
        return np.concatenate(out)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)

    # ------------------------------------------------------------ persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(self.dtype)

    def save(self, path, extra: Optional[dict] = None):
        header = {"n_classes": self.n_classes, "mode": self.mode, "dropout_rate": self.dropout_rate,
                  "input_len": self.input_len}
        if extra:
            header.update(extra)
        T.save_checkpoint(path, self.state_dict(), header)

    @classmethod
    def load(cls, path) -> tuple["DiagnosisNet", dict]:
        header, state = T.load_checkpoint(path)
        net = cls(header["n_classes"], header["mode"], header.get("dropout_rate", 0.5),
                  input_len=header.get("input_len", INPUT_LEN))
        net.load_state_dict(state)
        return net, header
