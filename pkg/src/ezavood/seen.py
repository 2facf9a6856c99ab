"""Seen expert: a 3-layer ReLU MLP over fused features trained with cross-entropy.

The same trained parameters supply the logits behind the energy score, so
the detector needs no network of its own.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LabelMap, assert_seen_only
from .errors import DimensionError, NumericalError, ValidationError
from .numerics import Adam, logsumexp, make_rng, softmax

log = logging.getLogger(__name__)


@dataclass(eq=False)
class MlpParams:
    """Weights are stored (fan_in, fan_out) so a batch is ``x @ W + b``.

    ``classes`` maps logit position to global class index.  ``loss_history``
    is the mean training loss per epoch; it is informational and not
    serialized.
    """

    weights: list
    biases: list
    classes: np.ndarray
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {i} input does not match layer {i - 1} output")
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.classes.size != self.weights[-1].shape[1]:
            raise DimensionError("one class index per output logit is required")

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays):
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.classes.copy())

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def from_flat(self, vec):
        out, pos = [], 0
        for a in self.arrays:
            out.append(np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return self.with_arrays(out)

    def equals(self, other):
        return (
            len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays))
            and np.array_equal(self.classes, other.classes)
        )


@dataclass
class TrainConfig:
    hidden_dims: tuple = (512, 512)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    def validate(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


def init_mlp(dims, seed, classes=None):
    """Fan-in uniform init: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), b = 0."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValidationError(f"all layer dims must be >= 1, got {dims}")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if classes is None:
        classes = np.arange(dims[-1])
    return MlpParams(weights, biases, classes)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise DimensionError(f"expected input dim {params.weights[0].shape[0]}, got {x.shape[-1]}")
    return x


def _forward_cache(params, x):
    acts = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return pre, acts


def forward(params, x):
    """Logits for one sample (1-D input) or a batch (2-D input)."""
    x = _check_input(params, x)
    single = x.ndim == 1
    _, acts = _forward_cache(params, np.atleast_2d(x))
    out = acts[-1]
    if not np.all(np.isfinite(out)):
        raise NumericalError("MLP produced non-finite logits")
    return out[0] if single else out


def cross_entropy(logits, label):
    """logsumexp(logits) - logits[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= int(label) < logits.shape[-1]:
        raise ValidationError(f"label {label} out of range for {logits.shape[-1]} logits")
    return logsumexp(logits) - float(logits[int(label)])


def loss_and_grad(params, x, y):
    """Mean cross-entropy over a batch and its gradient for every array.

    ``y`` holds dense logit indices.  Gradients come back in the order of
    ``params.arrays``.
    """
    x = _check_input(params, np.atleast_2d(x))
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    pre, acts = _forward_cache(params, x)
    logits = acts[-1]
    if np.any(y < 0) or np.any(y >= logits.shape[1]):
        raise ValidationError("label out of range")
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(n), y]))

    delta = softmax(logits, axis=1)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0)
    return loss, grads


def train_seen(view, cfg, log_every=0):
    """Mini-batch Adam on mean cross-entropy over a train-seen view.

    Output logits follow ascending order of the seen classes present in
    ``view``; ``MlpParams.classes`` records that order.
    """
    cfg.validate()
    if view.n_samples == 0:
        raise ValidationError("training view is empty")
    assert_seen_only(view, "seen-expert training")
    label_map = LabelMap(view.seen_classes)
    y = label_map.to_dense(view.labels)
    dims = [view.dim, *cfg.hidden_dims, len(label_map)]
    params = init_mlp(dims, cfg.seed, classes=label_map.classes)
    if cfg.epochs == 0:
        return params

    rng = make_rng(cfg.seed + 1)
    arrays = params.arrays
    opt = Adam([a.shape for a in arrays], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    history = []
    n = view.n_samples
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(params, view.features[idx], y[idx])
            total += loss * idx.size
            arrays = opt.step(arrays, grads)
            params = params.with_arrays(arrays)
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise NumericalError(f"training loss diverged at epoch {epoch}")
        if log_every and (epoch + 1) % log_every == 0:
            log.info("seen expert epoch %d loss %.6f", epoch + 1, history[-1])
    params.loss_history = history
    return params


def predict_seen(params, x):
    """Global class index of the largest logit; ties go to the lowest position."""
    logits = forward(params, x)
    return params.classes[np.argmax(logits, axis=-1)]
