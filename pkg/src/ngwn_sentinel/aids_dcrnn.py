"""Anomaly-based IDS: convolution front end, gated recurrent cell, softmax head.

Flow features become byte images; a conv + max-pool stage extracts local
structure, the pooled rows are fed top-to-bottom through a GRU, and the final
hidden state is mapped to (p_normal, p_malicious). Everything is plain numpy
in float64 with a hand-written backward pass.

The update gate keeps an extra input term, ``c = sigmoid(Wc [I, y] + Py + bc)``,
where ``P`` projects the input onto the hidden size.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_ingest import ByteImage, MinMaxScaler, rescale_to_image

MAGIC = b"DCR1"

PARAM_ORDER = ("Wk", "bk", "Wc", "Pc", "bc", "Wb", "bb", "Wh", "bh", "Wd", "bd")


class DcrnnError(Exception):
    pass


class NonIntegral(DcrnnError, ValueError):
    pass


class NonPositive(DcrnnError, ValueError):
    pass


class DimMismatch(DcrnnError, ValueError):
    pass


class SingleClass(DcrnnError, ValueError):
    pass


def conv_output_len(I_l: int, Kr: int, Q: int, SK: int) -> int:
    """(I_l - Kr + 2Q) / SK + 1, rejecting inexact division."""
    if SK < 1:
        raise NonPositive("stride must be >= 1")
    span = I_l - Kr + 2 * Q
    if span < 0:
        raise NonPositive(f"kernel {Kr} larger than padded input {I_l + 2 * Q}")
    if span % SK:
        raise NonIntegral(f"({I_l} - {Kr} + 2*{Q}) / {SK} is not an integer")
    return span // SK + 1


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def tanh_act(t):
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    e = np.exp(-2.0 * a)
    out = np.sign(t) * (1.0 - e) / (1.0 + e)
    return out if out.ndim else float(out)


def _sigmoid_grad(s):
    return s * (1.0 - s)


def _tanh_grad(h):
    return 1.0 - h * h


@dataclass(frozen=True)
class DcrnnConfig:
    height: int = 8
    width: int = 8
    filters: int = 8
    kernel: int = 3
    padding: int = 1
    stride: int = 1
    pool: int = 2
    hidden: int = 16

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Declared tensor shapes per layer (per sample)."""
        cv = conv_output_len(self.height, self.kernel, self.padding, self.stride)
        cu = conv_output_len(self.width, self.kernel, self.padding, self.stride)
        pv = conv_output_len(cv, self.pool, 0, self.pool)
        pu = conv_output_len(cu, self.pool, 0, self.pool)
        return {
            "conv": (cv, cu, self.filters),
            "pool": (pv, pu, self.filters),
            "sequence": (pv, pu * self.filters),
            "hidden": (self.hidden,),
            "logits": (2,),
        }

    @property
    def input_size(self) -> int:
        return self.layer_shapes()["sequence"][1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        H, D, K, k = self.hidden, self.input_size, self.filters, self.kernel
        return {
            "Wk": (K, k * k), "bk": (K,),
            "Wc": (H, H + D), "Pc": (H, D), "bc": (H,),
            "Wb": (H, H + D), "bb": (H,),
            "Wh": (H, H + D), "bh": (H,),
            "Wd": (2, H), "bd": (2,),
        }


@dataclass(frozen=True)
class GruCell:
    Wc: np.ndarray
    Pc: np.ndarray
    bc: np.ndarray
    Wb: np.ndarray
    bb: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray

    @property
    def hidden(self) -> int:
        return self.Wc.shape[0]

    @property
    def input_size(self) -> int:
        return self.Pc.shape[1]


def gru_step(cell: GruCell, y_t, I_prev) -> np.ndarray:
    """One recurrent step for a single input vector."""
    y_t = np.asarray(y_t, dtype=np.float64)
    I_prev = np.asarray(I_prev, dtype=np.float64)
    if y_t.shape != (cell.input_size,) or I_prev.shape != (cell.hidden,):
        raise DimMismatch(f"input {y_t.shape} / state {I_prev.shape} do not fit the cell")
    return _gru_forward(cell.__dict__, y_t[None, :], I_prev[None, :])[0][0]


def _gru_forward(p, y, I_prev):
    H = I_prev.shape[1]
    cat1 = np.concatenate([I_prev, y], axis=1)
    c = sigmoid(cat1 @ p["Wc"].T + y @ p["Pc"].T + p["bc"])
    b = sigmoid(cat1 @ p["Wb"].T + p["bb"])
    cat2 = np.concatenate([b * I_prev, y], axis=1)
    cand = tanh_act(cat2 @ p["Wh"].T + p["bh"])
    I_new = (1.0 - c) * I_prev + c * cand
    return I_new, (I_prev, y, cat1, c, b, cat2, cand, H)


@dataclass(frozen=True, eq=False)
class DcrnnModel:
    config: DcrnnConfig
    params: dict = field(repr=False)

    def __post_init__(self):
        shapes = self.config.param_shapes()
        for name in PARAM_ORDER:
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise DimMismatch(f"parameter {name} has shape {arr.shape}, expected {shapes[name]}")

    @classmethod
    def init(cls, config: DcrnnConfig | None = None, seed: int = 0) -> "DcrnnModel":
        config = config or DcrnnConfig()
        rng = np.random.default_rng(seed)
        shapes = config.param_shapes()
        H, D, K, k = config.hidden, config.input_size, config.filters, config.kernel
        fans = {
            "Wk": (k * k, K * k * k),
            "Wc": (H + D, H), "Pc": (D, H), "Wb": (H + D, H), "Wh": (H + D, H),
            "Wd": (H, 2),
        }
        params = {}
        for name in PARAM_ORDER:
            if name in fans:
                r = np.sqrt(6.0 / sum(fans[name]))
                params[name] = rng.uniform(-r, r, size=shapes[name])
            else:
                params[name] = np.zeros(shapes[name])
        return cls(config, params)

    @property
    def cell(self) -> GruCell:
        return GruCell(**{k: self.params[k] for k in ("Wc", "Pc", "bc", "Wb", "bb", "Wh", "bh")})

    def n_params(self) -> int:
        return sum(self.params[k].size for k in PARAM_ORDER)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def with_flat(self, vec: np.ndarray) -> "DcrnnModel":
        out, off = {}, 0
        for k in PARAM_ORDER:
            shape = self.params[k].shape
            size = int(np.prod(shape))
            out[k] = np.array(vec[off:off + size], dtype=np.float64).reshape(shape)
            off += size
        return DcrnnModel(self.config, out)

    def save(self, path: str | Path) -> None:
        c = self.config
        head = struct.pack("<8I", c.height, c.width, c.filters, c.kernel, c.padding, c.stride,
                           c.pool, c.hidden)
        Path(path).write_bytes(MAGIC + head + self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "DcrnnModel":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise DcrnnError(f"{path}: not a DCR1 model file")
        config = DcrnnConfig(*struct.unpack_from("<8I", data, 4))
        vec = np.frombuffer(data, dtype="<f8", offset=4 + 32)
        model = cls.init(config)
        if vec.size != model.n_params():
            raise DcrnnError(f"{path}: expected {model.n_params()} parameters, found {vec.size}")
        return model.with_flat(vec)


def _as_batch(config: DcrnnConfig, images) -> np.ndarray:
    if isinstance(images, ByteImage):
        images = images.as_array()[None]
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (config.height, config.width):
        raise DimMismatch(f"image batch {x.shape[1:]} does not match model input "
                          f"{(config.height, config.width)}")
    return x / 255.0


def _im2col(x: np.ndarray, k: int, Q: int, SK: int, out_v: int, out_u: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (Q, Q), (Q, Q)))
    cols = np.empty((x.shape[0], out_v, out_u, k * k))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i * k + j] = xp[:, i:i + SK * out_v:SK, j:j + SK * out_u:SK]
    return cols


def _forward(model: DcrnnModel, x: np.ndarray, keep: bool = False):
    cfg, p = model.config, model.params
    shapes = cfg.layer_shapes()
    cv, cu, K = shapes["conv"]
    pv, pu, _ = shapes["pool"]
    B, s = x.shape[0], cfg.pool
    cols = _im2col(x, cfg.kernel, cfg.padding, cfg.stride, cv, cu)
    z1 = cols @ p["Wk"].T + p["bk"]
    a1 = np.maximum(z1, 0.0)
    blocks = a1.reshape(B, pv, s, pu, s, K).transpose(0, 1, 3, 5, 2, 4).reshape(B, pv, pu, K, s * s)
    arg = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    I = np.zeros((B, cfg.hidden))
    steps = []
    for t in range(pv):
        y = pooled[:, t].reshape(B, pu * K)
        I, cache = _gru_forward(p, y, I)
        steps.append(cache)
    logits = I @ p["Wd"].T + p["bd"]
    logits = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(logits)
    probs = ex / ex.sum(axis=1, keepdims=True)
    measured = {
        "conv": z1.shape[1:], "pool": pooled.shape[1:], "sequence": (len(steps), steps[0][1].shape[1]),
        "hidden": I.shape[1:], "logits": probs.shape[1:],
    }
    cache = (cols, z1, arg, pooled, steps, I) if keep else None
    return probs, cache, measured


def forward(model: DcrnnModel, images) -> np.ndarray:
    """Class probabilities (p_normal, p_malicious); one row per image."""
    probs, _, _ = _forward(model, _as_batch(model.config, images))
    return probs


def measured_shapes(model: DcrnnModel, images) -> dict[str, tuple[int, ...]]:
    return _forward(model, _as_batch(model.config, images))[2]


def loss_and_grads(model: DcrnnModel, images, labels) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its gradient per parameter."""
    cfg, p = model.config, model.params
    x = _as_batch(cfg, images)
    labels = np.asarray(labels, dtype=np.int64)
    probs, (cols, z1, arg, pooled, steps, I_T), _ = _forward(model, x, keep=True)
    B = x.shape[0]
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(B), labels], 1e-300))))

    g = {k: np.zeros_like(p[k]) for k in PARAM_ORDER}
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    g["Wd"] = dlogits.T @ I_T
    g["bd"] = dlogits.sum(axis=0)
    dI = dlogits @ p["Wd"]

    dpooled = np.zeros_like(pooled)
    pv, pu, K = pooled.shape[1:]
    for t in range(len(steps) - 1, -1, -1):
        I_prev, y, cat1, c, b, cat2, cand, H = steps[t]
        dcand = dI * c
        dc = dI * (cand - I_prev)
        dI_prev = dI * (1.0 - c)

        dzh = dcand * _tanh_grad(cand)
        g["Wh"] += dzh.T @ cat2
        g["bh"] += dzh.sum(axis=0)
        dcat2 = dzh @ p["Wh"]
        dr = dcat2[:, :H]
        dy = dcat2[:, H:].copy()
        db = dr * I_prev
        dI_prev += dr * b

        dzb = db * _sigmoid_grad(b)
        g["Wb"] += dzb.T @ cat1
        g["bb"] += dzb.sum(axis=0)
        dcat1 = dzb @ p["Wb"]

        dzc = dc * _sigmoid_grad(c)
        g["Wc"] += dzc.T @ cat1
        g["Pc"] += dzc.T @ y
        g["bc"] += dzc.sum(axis=0)
        dcat1 += dzc @ p["Wc"]
        dy += dzc @ p["Pc"]

        dI_prev += dcat1[:, :H]
        dy += dcat1[:, H:]
        dpooled[:, t] = dy.reshape(B, pu, K)
        dI = dI_prev

    s = cfg.pool
    dblocks = np.zeros(dpooled.shape + (s * s,))
    np.put_along_axis(dblocks, arg[..., None], dpooled[..., None], axis=-1)
    da1 = dblocks.reshape(B, pv, pu, K, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(z1.shape)
    dz1 = da1 * (z1 > 0)
    g["Wk"] = dz1.reshape(-1, K).T @ cols.reshape(-1, cols.shape[-1])
    g["bk"] = dz1.reshape(-1, K).sum(axis=0)
    return loss, g


def grad_check(model: DcrnnModel, image, label: int, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    _, g = loss_and_grads(model, image, [label])
    analytic = np.concatenate([g[k].ravel() for k in PARAM_ORDER])
    base = model.flat()
    worst = 0.0
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += eps
        minus[i] -= eps
        lp, _ = loss_and_grads(model.with_flat(plus), image, [label])
        lm, _ = loss_and_grads(model.with_flat(minus), image, [label])
        numeric = (lp - lm) / (2 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning rate must be >= 0, epochs and batch size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


def train(model: DcrnnModel, images, labels, config: TrainConfig | None = None
          ) -> tuple[DcrnnModel, list[float]]:
    """Mini-batch descent on cross-entropy; returns the model and per-epoch loss.

    The recorded loss is evaluated on the full training set after each epoch.
    """
    config = config or TrainConfig()
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise SingleClass("training data must contain both classes")
    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in model.params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, tiny = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, g = loss_and_grads(DcrnnModel(model.config, params), x[idx], y[idx])
            step += 1
            for k in PARAM_ORDER:
                if config.optimizer == "sgd":
                    params[k] -= config.learning_rate * g[k]
                    continue
                m[k] = b1 * m[k] + (1 - b1) * g[k]
                v2[k] = b2 * v2[k] + (1 - b2) * g[k] ** 2
                mhat = m[k] / (1 - b1 ** step)
                vhat = v2[k] / (1 - b2 ** step)
                params[k] -= config.learning_rate * mhat / (np.sqrt(vhat) + tiny)
        current = DcrnnModel(model.config, params)
        losses.append(loss_and_grads(current, x, y)[0])
    return DcrnnModel(model.config, {k: v.copy() for k, v in params.items()}), losses


def accuracy(model: DcrnnModel, images, labels) -> float:
    probs = forward(model, images)
    return float(np.mean(predict_from_probs(probs) == np.asarray(labels)))


class Verdict(enum.Enum):
    NORMAL = "Normal"
    MALICIOUS = "Malicious"


def predict_from_probs(probs: np.ndarray) -> np.ndarray:
    # ties classify as normal
    probs = np.atleast_2d(probs)
    return (probs[:, 1] > probs[:, 0]).astype(np.int8)


def verdict_from_probs(probs) -> Verdict:
    return Verdict.MALICIOUS if predict_from_probs(np.asarray(probs))[0] else Verdict.NORMAL


def classify_suspicious(model: DcrnnModel, fv, scaler: MinMaxScaler) -> tuple[Verdict, float]:
    """Verdict for one flow vector plus its malicious probability."""
    img = rescale_to_image(fv, model.config.width, model.config.height, scaler)
    probs = forward(model, img)[0]
    return verdict_from_probs(probs), float(probs[1])
