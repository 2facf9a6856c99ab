"""Unseen expert: a two-branch encoder/projector/decoder aligner.

Sample branch:  x -> o = relu(x We + be) -> theta_o = o Wp + bp -> rho_o = theta_o Wd + bd
Text branch:    t -> w = relu(t Ue + ce) -> theta_w = w Up + cp -> rho_w = theta_w Ud + cd

Training (seen classes only) minimizes the unweighted sum of a softmax
cross-entropy over sample/class-text dot products, a reconstruction MSE of
both rho terms against w, and a regression MSE between theta_o and
theta_w.  Prediction picks the candidate class whose theta_w is nearest to
theta_o in Euclidean distance.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .data import LabelMap, assert_seen_only
from .errors import ConfigError, DimensionError, NumericalError, ValidationError
from .numerics import Adam, logsumexp, make_rng, softmax

log = logging.getLogger(__name__)

LAYERS = (
    "sample_encoder",
    "text_encoder",
    "sample_projector",
    "text_projector",
    "sample_decoder",
    "text_decoder",
)
LOSS_TERMS = ("xe", "rec", "reg")


@dataclass(eq=False)
class AlignerParams:
    """Six affine layers, each a (weight, bias) pair with weight (fan_in, fan_out)."""

    layers: dict
    normalize: bool = False

    def __post_init__(self):
        missing = set(LAYERS) - set(self.layers)
        if missing:
            raise DimensionError(f"missing layers: {sorted(missing)}")
        for name in LAYERS:
            w, b = self.layers[name]
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"{name}: bias {b.shape} does not match weight {w.shape}")
        L = self.layers
        chain = [
            ("sample_encoder", "sample_projector"),
            ("text_encoder", "text_projector"),
            ("sample_projector", "sample_decoder"),
            ("text_projector", "text_decoder"),
        ]
        for a, b in chain:
            if L[a][0].shape[1] != L[b][0].shape[0]:
                raise DimensionError(f"{a} output does not feed {b}")
        if L["sample_encoder"][0].shape[1] != L["text_encoder"][0].shape[1]:
            raise DimensionError("both encoders must share the embedding width")
        if L["sample_projector"][0].shape[1] != L["text_projector"][0].shape[1]:
            raise DimensionError("both projectors must share the projection width")
        if L["sample_decoder"][0].shape[1] != L["sample_encoder"][0].shape[1]:
            raise DimensionError("decoders must reconstruct the embedding width")

    @property
    def arrays(self):
        out = []
        for name in LAYERS:
            out += list(self.layers[name])
        return out

    def with_arrays(self, arrays):
        layers = {name: (arrays[2 * i], arrays[2 * i + 1]) for i, name in enumerate(LAYERS)}
        return AlignerParams(layers, self.normalize)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def from_flat(self, vec):
        out, pos = [], 0
        for a in self.arrays:
            out.append(np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return self.with_arrays(out)

    @property
    def dims(self):
        """(D, D_t, d_e, d_p)."""
        L = self.layers
        return (
            L["sample_encoder"][0].shape[0],
            L["text_encoder"][0].shape[0],
            L["sample_encoder"][0].shape[1],
            L["sample_projector"][0].shape[1],
        )

    def equals(self, other):
        return self.normalize == other.normalize and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays)
        )


@dataclass
class AlignerConfig:
    embed_dim: int = 512
    proj_dim: int = 64
    normalize: bool = False
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    def validate(self):
        if self.embed_dim < 1 or self.proj_dim < 1:
            raise ValidationError("aligner widths must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")


def init_aligner(dim_feature, dim_text, embed_dim, proj_dim, seed, normalize=False):
    shapes = {
        "sample_encoder": (dim_feature, embed_dim),
        "text_encoder": (dim_text, embed_dim),
        "sample_projector": (embed_dim, proj_dim),
        "text_projector": (embed_dim, proj_dim),
        "sample_decoder": (proj_dim, embed_dim),
        "text_decoder": (proj_dim, embed_dim),
    }
    if min(min(s) for s in shapes.values()) < 1:
        raise ValidationError("aligner dims must be >= 1")
    rng = make_rng(seed)
    layers = {}
    for name in LAYERS:
        fan_in, fan_out = shapes[name]
        bound = np.sqrt(6.0 / fan_in)
        layers[name] = (rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out))
    return AlignerParams(layers, normalize)


def _branch(params, x, prefix):
    we, be = params.layers[f"{prefix}_encoder"]
    wp, bp = params.layers[f"{prefix}_projector"]
    wd, bd = params.layers[f"{prefix}_decoder"]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != we.shape[0]:
        raise DimensionError(f"{prefix} branch expects dim {we.shape[0]}, got {x.shape[-1]}")
    z = x @ we + be
    h = np.maximum(z, 0.0)
    theta = h @ wp + bp
    rho = theta @ wd + bd
    return z, h, theta, rho


def encode_sample(params, x):
    """(o, theta_o, rho_o) for one sample or a batch."""
    _, o, theta, rho = _branch(params, x, "sample")
    return o, theta, rho


def encode_text(params, t):
    """(w, theta_w, rho_w) for one class embedding or a batch."""
    _, w, theta, rho = _branch(params, t, "text")
    return w, theta, rho


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, 1e-12), norm


def _unit_backward(g, unit, norm):
    return (g - unit * np.sum(g * unit, axis=-1, keepdims=True)) / np.maximum(norm, 1e-12)


def loss_xe(theta_o, theta_w_table, labels):
    """Mean over the batch of -log softmax(theta_w_table @ theta_o)[label]."""
    theta_o = np.atleast_2d(theta_o)
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = theta_w_table.shape[0]
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise ValidationError(f"labels must index the {n_cls}-row class table")
    sims = theta_o @ theta_w_table.T
    return float(np.mean(logsumexp(sims, axis=1) - sims[np.arange(labels.size), labels]))


def _mse_rows(a, b):
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return np.mean((a - b) ** 2, axis=1)


def loss_rec(rho_o, rho_w, w):
    """Batch mean of mse(rho_o, w) + mse(rho_w, w)."""
    return float(np.mean(_mse_rows(rho_o, w) + _mse_rows(rho_w, w)))


def loss_reg(theta_o, theta_w):
    """Batch mean of mse(theta_o, theta_w)."""
    return float(np.mean(_mse_rows(theta_o, theta_w)))


def losses_and_grad(params, x, labels, text_table, terms=LOSS_TERMS):
    """Loss values and gradient of their sum over ``terms``.

    ``labels`` index rows of ``text_table`` (the seen-class embeddings).
    Returns ``(values, grads)`` where ``values`` maps each term name plus
    ``"total"`` to a float, and ``grads`` follows ``params.arrays``.
    """
    terms = tuple(terms)
    if set(terms) - set(LOSS_TERMS):
        raise ValidationError(f"unknown loss terms {terms}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if labels.shape != (n,):
        raise DimensionError("one label per sample is required")
    if np.any(labels < 0) or np.any(labels >= text_table.shape[0]):
        raise ValidationError("labels must index the class table")

    zo, o, th_o, rho_o = _branch(params, x, "sample")
    zw, w_tab, th_w, rho_w = _branch(params, text_table, "text")
    w = w_tab[labels]
    d_e, d_p = o.shape[1], th_o.shape[1]

    g_th_o = np.zeros_like(th_o)
    g_rho_o = np.zeros_like(rho_o)
    g_th_w = np.zeros_like(th_w)
    g_rho_w = np.zeros_like(rho_w)
    g_w_tab = np.zeros_like(w_tab)
    values = {}

    if params.normalize:
        s_o, n_o = _unit(th_o)
        s_w, n_w = _unit(th_w)
    else:
        s_o, s_w = th_o, th_w
    sims = s_o @ s_w.T
    values["xe"] = float(np.mean(logsumexp(sims, axis=1) - sims[np.arange(n), labels]))
    if "xe" in terms:
        d_sims = softmax(sims, axis=1)
        d_sims[np.arange(n), labels] -= 1.0
        d_sims /= n
        g_so = d_sims @ s_w
        g_sw = d_sims.T @ s_o
        if params.normalize:
            g_so = _unit_backward(g_so, s_o, n_o)
            g_sw = _unit_backward(g_sw, s_w, n_w)
        g_th_o += g_so
        g_th_w += g_sw

    rho_w_g = rho_w[labels]
    values["rec"] = float(np.mean(np.mean((rho_o - w) ** 2, axis=1) + np.mean((rho_w_g - w) ** 2, axis=1)))
    if "rec" in terms:
        r1 = 2.0 * (rho_o - w) / (n * d_e)
        r2 = 2.0 * (rho_w_g - w) / (n * d_e)
        g_rho_o += r1
        np.add.at(g_rho_w, labels, r2)
        np.add.at(g_w_tab, labels, -(r1 + r2))

    th_w_g = th_w[labels]
    values["reg"] = float(np.mean(np.mean((th_o - th_w_g) ** 2, axis=1)))
    if "reg" in terms:
        r = 2.0 * (th_o - th_w_g) / (n * d_p)
        g_th_o += r
        np.add.at(g_th_w, labels, -r)

    values["total"] = float(sum(values[t] for t in terms))

    grads = {}
    for prefix, inp, z, h, th, g_th, g_rho, g_h_extra in (
        ("sample", x, zo, o, th_o, g_th_o, g_rho_o, None),
        ("text", text_table, zw, w_tab, th_w, g_th_w, g_rho_w, g_w_tab),
    ):
        wp = params.layers[f"{prefix}_projector"][0]
        wd = params.layers[f"{prefix}_decoder"][0]
        grads[f"{prefix}_decoder"] = (th.T @ g_rho, g_rho.sum(axis=0))
        g_th = g_th + g_rho @ wd.T
        grads[f"{prefix}_projector"] = (h.T @ g_th, g_th.sum(axis=0))
        g_h = g_th @ wp.T
        if g_h_extra is not None:
            g_h = g_h + g_h_extra
        g_z = g_h * (z > 0)
        grads[f"{prefix}_encoder"] = (inp.T @ g_z, g_z.sum(axis=0))
    flat = []
    for name in LAYERS:
        flat += list(grads[name])
    return values, flat


def total_loss(params, x, labels, text_table, terms=LOSS_TERMS):
    return losses_and_grad(params, x, labels, text_table, terms)[0]["total"]


def train_unseen(view, table, cfg, log_every=0):
    """Adam on the unweighted sum of the three losses over a train-seen view.

    ``table`` is the full ClassEmbeddingTable; only rows of the seen classes
    present in ``view`` are touched.
    """
    cfg.validate()
    if view.n_samples == 0:
        raise ValidationError("training view is empty")
    assert_seen_only(view, "unseen-expert training")
    label_map = LabelMap(view.seen_classes)
    y = label_map.to_dense(view.labels)
    text_seen = table.embeddings[label_map.classes]
    params = init_aligner(view.dim, table.dim, cfg.embed_dim, cfg.proj_dim, cfg.seed, cfg.normalize)
    if cfg.epochs == 0:
        return params, []

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
            values, grads = losses_and_grad(params, view.features[idx], y[idx], text_seen)
            total += values["total"] * idx.size
            arrays = opt.step(arrays, grads)
            params = params.with_arrays(arrays)
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise NumericalError(f"aligner loss diverged at epoch {epoch}")
        if log_every and (epoch + 1) % log_every == 0:
            log.info("unseen expert epoch %d loss %.6f", epoch + 1, history[-1])
    return params, history


def predict_nn(params, x, candidate_embeddings):
    """Index of the nearest candidate in projection space (ties -> lowest index)."""
    cands = np.atleast_2d(np.asarray(candidate_embeddings, dtype=np.float64))
    if cands.shape[0] == 0 or cands.size == 0:
        raise ValidationError("candidate set is empty")
    _, th_o, _ = encode_sample(params, x)
    _, th_w, _ = encode_text(params, cands)
    if params.normalize:
        th_o, _ = _unit(th_o)
        th_w, _ = _unit(th_w)
    return nearest_index(th_o, th_w)


def nearest_index(queries, anchors):
    """Argmin Euclidean distance from each query to the anchor rows."""
    q = np.atleast_2d(queries)
    diff = q[:, None, :] - anchors[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    out = np.argmin(dist, axis=1)
    return int(out[0]) if np.ndim(queries) == 1 else out


class UnseenExpert(Protocol):
    """Anything that maps features to a class drawn from ``candidates``.

    ``labels`` carries ground truth for diagnostic experts only; real
    experts must ignore it.
    """

    def predict(self, features, candidates, labels=None) -> np.ndarray: ...


class AlignerExpert:
    def __init__(self, params, table):
        self.params = params
        self.table = table

    def predict(self, features, candidates, labels=None):
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.size == 0:
            raise ValidationError("candidate set is empty")
        features = np.atleast_2d(features)
        if features.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        idx = predict_nn(self.params, features, self.table.embeddings[candidates])
        return candidates[np.atleast_1d(idx)]


class OracleExpert:
    """Returns the true label when it is a candidate, else the first candidate."""

    def predict(self, features, candidates, labels=None):
        if labels is None:
            raise ConfigError("the oracle expert needs ground-truth labels")
        candidates = np.asarray(candidates, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        return np.where(np.isin(labels, candidates), labels, candidates[0])


def _build_aligner(train_view, table, cfg):
    params, history = train_unseen(train_view, table, cfg)
    expert = AlignerExpert(params, table)
    expert.history = history
    return expert


def _build_oracle(train_view, table, cfg):
    return OracleExpert()


UNSEEN_EXPERTS: dict = {"aligner": _build_aligner, "oracle": _build_oracle}


def register_unseen_expert(name, factory: Callable):
    """Register ``factory(train_view, table, aligner_cfg) -> UnseenExpert``."""
    UNSEEN_EXPERTS[name] = factory


def build_unseen_expert(name, train_view, table, cfg):
    try:
        factory = UNSEEN_EXPERTS[name]
    except KeyError:
        raise ConfigError(f"unseen expert {name!r} is not registered") from None
    return factory(train_view, table, cfg)
