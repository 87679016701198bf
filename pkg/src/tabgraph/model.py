"""A small maskable attention regressor over feature tokens.

Each input feature becomes a token ``x_j * W_j + b_j``; node-level models also
append a learnable target token and read the prediction off its final
embedding, graph-level models mean-pool the feature tokens. Layers are
pre-norm transformer blocks (multi-head self-attention + GELU feed-forward),
written directly in numpy with a hand-derived backward pass.

Attention can be restricted to the true graph ("pruned" mode): disallowed
logits are pushed to -1e9 before the softmax and the resulting weights are
zeroed exactly afterwards.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as K
from .core import BinaryAdjacency, Dataset, SeededRng, TOL, symmetrize
from .errors import NonFiniteLoss

log = logging.getLogger(__name__)

MASK_LOGIT = -1e9
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 3
    embed_dim: int = 32
    n_heads: int = 4
    readout: str = "node"
    mask_mode: str = "full"
    ffn_factor: float = 4 / 3
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 256
    max_epochs: int = 400
    patience: int = 10

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("need at least one layer")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.readout not in ("node", "graph"):
            raise ValueError(f"readout must be 'node' or 'graph', got {self.readout!r}")
        if self.mask_mode not in ("full", "pruned"):
            raise ValueError(f"mask_mode must be 'full' or 'pruned', got {self.mask_mode!r}")

    @property
    def ffn_dim(self) -> int:
        return max(1, int(round(self.embed_dim * self.ffn_factor)))

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray

    def __post_init__(self):
        a = np.array(self.allowed, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("mask must be square")
        a[np.diag_indices(a.shape[0])] = True
        a.setflags(write=False)
        object.__setattr__(self, "allowed", a)

    @property
    def t(self) -> int:
        return self.allowed.shape[0]

    @property
    def bias(self) -> np.ndarray:
        return np.where(self.allowed, 0.0, MASK_LOGIT)


def token_count(p: int, readout: str) -> int:
    return p if readout == "node" else p - 1


def build_mask(
    p: int, target_index: int, readout: str, mode: str, truth: BinaryAdjacency | None = None
) -> AttentionMask:
    """Token mask; feature tokens follow column order with the target removed,
    and node-level models put the target token last."""
    t = token_count(p, readout)
    if mode == "full":
        return AttentionMask(np.ones((t, t), dtype=bool))
    if mode != "pruned":
        raise ValueError(f"unknown mask mode {mode!r}")
    if truth is None:
        raise ValueError("pruned mode needs the true adjacency")
    sym = symmetrize(truth).entries.astype(bool)
    order = [j for j in range(p) if j != target_index]
    if readout == "node":
        order.append(target_index)
    return AttentionMask(sym[np.ix_(order, order)])


@dataclass(frozen=True)
class AttentionRecord:
    tensor: np.ndarray  # (samples, layers, heads, t, t)

    @property
    def shape(self):
        return self.tensor.shape


# -- parameters --------------------------------------------------------------

LAYER_KEYS = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
              "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


def init_params(cfg: ModelConfig, n_features: int, rng) -> dict[str, np.ndarray]:
    gen = rng if isinstance(rng, np.random.Generator) else SeededRng(int(rng)).generator()
    d, f = cfg.embed_dim, cfg.ffn_dim

    def unif(shape, fan_in):
        s = 1.0 / math.sqrt(fan_in)
        return gen.uniform(-s, s, size=shape)

    params = {"tok_w": unif((n_features, d), d), "tok_b": unif((n_features, d), d)}
    if cfg.readout == "node":
        params["target_token"] = unif((d,), d)
    for l in range(cfg.n_layers):
        params.update({
            f"l{l}.ln1_g": np.ones(d), f"l{l}.ln1_b": np.zeros(d),
            f"l{l}.wq": unif((d, d), d), f"l{l}.bq": np.zeros(d),
            f"l{l}.wk": unif((d, d), d), f"l{l}.bk": np.zeros(d),
            f"l{l}.wv": unif((d, d), d), f"l{l}.bv": np.zeros(d),
            f"l{l}.wo": unif((d, d), d), f"l{l}.bo": np.zeros(d),
            f"l{l}.ln2_g": np.ones(d), f"l{l}.ln2_b": np.zeros(d),
            f"l{l}.w1": unif((d, f), d), f"l{l}.b1": np.zeros(f),
            f"l{l}.w2": unif((f, d), f), f"l{l}.b2": np.zeros(d),
        })
    params["lnf_g"] = np.ones(d)
    params["lnf_b"] = np.zeros(d)
    params["head_w"] = unif((d,), d)
    params["head_b"] = np.zeros(1)
    return params


def parameter_count(cfg: ModelConfig, n_features: int) -> int:
    d, f = cfg.embed_dim, cfg.ffn_dim
    per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d)
    return (2 * n_features * d + (d if cfg.readout == "node" else 0)
            + cfg.n_layers * per_layer + 2 * d + d + 1)


# -- forward / backward ------------------------------------------------------

def _heads(m, B, t, H):
    return np.ascontiguousarray(m.reshape(B, t, H, -1).transpose(0, 2, 1, 3))


def _merge(m, B, t):
    return m.transpose(0, 2, 1, 3).reshape(B * t, -1)


def tokenize(x, params, cfg: ModelConfig) -> np.ndarray:
    """(B, p-1) standardized features -> (B, t, d) tokens."""
    x = np.asarray(x, dtype=np.float64)
    tokens = x[:, :, None] * params["tok_w"] + params["tok_b"]
    if cfg.readout == "node":
        tgt = np.broadcast_to(params["target_token"], (x.shape[0], 1, cfg.embed_dim))
        tokens = np.concatenate([tokens, tgt], axis=1)
    return tokens


def attention_layer(x, params, prefix, cfg: ModelConfig, mask: AttentionMask):
    """One pre-norm block on (B, t, d) tokens.

    Returns ``(output, cache)``; ``cache["attn"]`` holds the (B, H, t, t)
    attention weights.
    """
    B, t, d = x.shape
    if mask.t != t:
        raise ValueError(f"mask covers {mask.t} tokens, input has {t}")
    H = cfg.n_heads
    P = lambda k: params[f"{prefix}.{k}"]
    x2 = np.ascontiguousarray(x.reshape(B * t, d))

    n1, xh1, rs1 = K.ln_forward(x2, P("ln1_g"), P("ln1_b"))
    q = _heads(n1 @ P("wq") + P("bq"), B, t, H)
    k = _heads(n1 @ P("wk") + P("bk"), B, t, H)
    v = _heads(n1 @ P("wv") + P("bv"), B, t, H)
    scale = 1.0 / math.sqrt(d // H)
    s = (q @ k.transpose(0, 1, 3, 2)).reshape(B * H, t, t)
    a = K.masked_softmax(s, scale, mask.bias, mask.allowed).reshape(B, H, t, t)
    o = _merge(a @ v, B, t)
    x1 = x2 + o @ P("wo") + P("bo")

    n2, xh2, rs2 = K.ln_forward(x1, P("ln2_g"), P("ln2_b"))
    u = n2 @ P("w1") + P("b1")
    g, th = K.gelu_forward(u)
    out = x1 + g @ P("w2") + P("b2")
    cache = dict(n1=n1, ln1=(xh1, rs1), q=q, k=k, v=v, attn=a, o=o, n2=n2, ln2=(xh2, rs2),
                 u=u, g=g, th=th, scale=scale)
    return out.reshape(B, t, d), cache


def _attention_backward(dout, params, prefix, cfg, cache, grads):
    """Backward through one block; ``dout`` and the return value are (B*t, d)."""
    B, H, t, _ = cache["attn"].shape
    P = lambda k: params[f"{prefix}.{k}"]

    # feed-forward branch
    grads[f"{prefix}.w2"] = cache["g"].T @ dout
    grads[f"{prefix}.b2"] = dout.sum(axis=0)
    du = K.gelu_backward(dout @ P("w2").T, cache["u"], cache["th"])
    grads[f"{prefix}.w1"] = cache["n2"].T @ du
    grads[f"{prefix}.b1"] = du.sum(axis=0)
    dx1n, grads[f"{prefix}.ln2_g"], grads[f"{prefix}.ln2_b"] = K.ln_backward(
        du @ P("w1").T, P("ln2_g"), *cache["ln2"])
    dx1 = dout + dx1n

    # attention branch
    grads[f"{prefix}.wo"] = cache["o"].T @ dx1
    grads[f"{prefix}.bo"] = dx1.sum(axis=0)
    do = _heads(dx1 @ P("wo").T, B, t, H)
    a, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = K.softmax_backward(a.reshape(B * H, t, t), da.reshape(B * H, t, t),
                            cache["scale"]).reshape(B, H, t, t)
    dq = _merge(ds @ k, B, t)
    dk = _merge(ds.transpose(0, 1, 3, 2) @ q, B, t)
    dv = _merge(dv, B, t)
    n1 = cache["n1"]
    for name, dm in (("q", dq), ("k", dk), ("v", dv)):
        grads[f"{prefix}.w{name}"] = n1.T @ dm
        grads[f"{prefix}.b{name}"] = dm.sum(axis=0)
    dn1 = dq @ P("wq").T + dk @ P("wk").T + dv @ P("wv").T
    dxn, grads[f"{prefix}.ln1_g"], grads[f"{prefix}.ln1_b"] = K.ln_backward(dn1, P("ln1_g"), *cache["ln1"])
    return dx1 + dxn


def forward(x, params, cfg: ModelConfig, mask: AttentionMask, record: bool = False, keep_cache: bool = False):
    """Predictions for a batch of standardized feature rows.

    Returns ``(pred, extras)``; ``extras["attention"]`` is (B, L, H, t, t) when
    ``record`` is set, ``extras["cache"]`` feeds :func:`backward`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = tokenize(x, params, cfg)
    B, t, d = h.shape
    caches = []
    for l in range(cfg.n_layers):
        h, c = attention_layer(h, params, f"l{l}", cfg, mask)
        caches.append(c)
    hf, xhf, rsf = K.ln_forward(h.reshape(B * t, d), params["lnf_g"], params["lnf_b"])
    hf = hf.reshape(B, t, d)
    pooled = hf[:, -1, :] if cfg.readout == "node" else hf.mean(axis=1)
    pred = pooled @ params["head_w"] + params["head_b"][0]
    extras = {}
    if record:
        extras["attention"] = np.stack([c["attn"] for c in caches], axis=1)
    if keep_cache:
        extras["cache"] = dict(x=x, layers=caches, shape=(B, t, d), lnf=(xhf, rsf), pooled=pooled)
    return pred, extras


def backward(dpred, params, cfg: ModelConfig, cache) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dpred * pred)`` with respect to every parameter."""
    grads = {}
    x = cache["x"]
    B, t, d = cache["shape"]
    grads["head_w"] = cache["pooled"].T @ dpred
    grads["head_b"] = np.array([dpred.sum()])
    dpooled = dpred[:, None] * params["head_w"]
    dhf = np.zeros((B, t, d))
    if cfg.readout == "node":
        dhf[:, -1, :] = dpooled
    else:
        dhf[:] = dpooled[:, None, :] / t
    dh, grads["lnf_g"], grads["lnf_b"] = K.ln_backward(dhf.reshape(B * t, d), params["lnf_g"], *cache["lnf"])
    for l in reversed(range(cfg.n_layers)):
        dh = _attention_backward(dh, params, f"l{l}", cfg, cache["layers"][l], grads)
    dh = dh.reshape(B, t, d)
    n_feat = x.shape[1]
    dtok = dh[:, :n_feat, :]
    grads["tok_w"] = (dtok * x[:, :, None]).sum(axis=0)
    grads["tok_b"] = dtok.sum(axis=0)
    if cfg.readout == "node":
        grads["target_token"] = dh[:, -1, :].sum(axis=0)
    return {k: grads[k] for k in params}


def mse_loss_and_grads(x, y, params, cfg, mask):
    pred, extras = forward(x, params, cfg, mask, keep_cache=True)
    resid = pred - y
    loss = float(np.mean(resid * resid))
    grads = backward(2.0 * resid / len(y), params, cfg, extras["cache"])
    return loss, grads


def mse_loss(x, y, params, cfg, mask) -> float:
    pred, _ = forward(x, params, cfg, mask)
    return float(np.mean((pred - y) ** 2))


# -- optimisation ------------------------------------------------------------

class Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        b1, b2 = ADAM_BETAS
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.counter = 0

    def update(self, loss: float) -> bool:
        """Record one epoch; returns True when it is a new best."""
        if loss < self.best:
            self.best = loss
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


@dataclass
class Scaler:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, x, y):
        xs = x.std(axis=0)
        ys = float(y.std())
        return cls(x.mean(axis=0), np.where(xs > 0, xs, 1.0), float(y.mean()), ys if ys > 0 else 1.0)

    def tx(self, x):
        return (x - self.x_mean) / self.x_std

    def ty(self, y):
        return (y - self.y_mean) / self.y_std

    def inv_y(self, y):
        return y * self.y_std + self.y_mean


@dataclass
class TrainState:
    config: ModelConfig
    params: dict
    mask: AttentionMask
    scaler: Scaler
    target_index: int
    feature_indices: list
    epoch: int = 0
    best_epoch: int = 0
    best_val: float = math.inf
    patience_counter: int = 0
    optimizer: Adam | None = field(default=None, repr=False)

    def predict(self, x_raw, batch: int = 2048) -> np.ndarray:
        xs = self.scaler.tx(np.asarray(x_raw, dtype=np.float64))
        out = [forward(xs[i:i + batch], self.params, self.config, self.mask)[0]
               for i in range(0, len(xs), batch)]
        return self.scaler.inv_y(np.concatenate(out))

    def predict_dataset(self, ds: Dataset, rows) -> np.ndarray:
        return self.predict(ds.xy(rows)[0])


def init_state(ds: Dataset, train_rows, cfg: ModelConfig) -> TrainState:
    x, y = ds.xy(train_rows)
    mask = build_mask(ds.p, ds.target_index, cfg.readout, cfg.mask_mode,
                      ds.truth if cfg.mask_mode == "pruned" else None)
    params = init_params(cfg, ds.p - 1, SeededRng(cfg.seed).child("init").generator())
    return TrainState(cfg, params, mask, Scaler.fit(x, y), ds.target_index, ds.feature_indices)


def train(ds: Dataset, split, cfg: ModelConfig):
    """Adam on minibatch MSE with early stopping on the early-stop split.

    Returns the state holding the best-validation parameters and a log of
    ``(epoch, train_mse, val_mse)`` tuples (standardized units).
    """
    state = init_state(ds, split.train, cfg)
    sc = state.scaler
    x_tr, y_tr = ds.xy(split.train)
    x_tr, y_tr = sc.tx(x_tr), sc.ty(y_tr)
    x_va, y_va = ds.xy(split.val_earlystop)
    x_va, y_va = sc.tx(x_va), sc.ty(y_va)

    params = state.params
    opt = Adam(params, cfg.learning_rate)
    stopper = EarlyStopping(cfg.patience)
    shuffle = SeededRng(cfg.seed).child("shuffle").generator()
    best = copy.deepcopy(params)
    history = []
    n = len(y_tr)
    # divergence is caught explicitly below, so numpy's overflow chatter is muted
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            order = shuffle.permutation(n)
            total = 0.0
            for i in range(0, n, cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                loss, grads = mse_loss_and_grads(x_tr[idx], y_tr[idx], params, cfg, state.mask)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, lr={cfg.learning_rate}")
                opt.step(params, grads)
                total += loss * len(idx)
            val = mse_loss(x_va, y_va, params, cfg, state.mask)
            if not math.isfinite(val):
                raise NonFiniteLoss(f"validation loss became {val} at epoch {epoch}")
            history.append((epoch, total / n, val))
            if stopper.update(val):
                best = copy.deepcopy(params)
                state.best_epoch = epoch
            if stopper.should_stop:
                break
    state.params = best
    state.epoch = epoch
    state.best_val = stopper.best
    state.patience_counter = stopper.counter
    state.optimizer = opt
    log.debug("trained %s: %d epochs, best val %.4f @ %d", cfg, epoch, stopper.best, state.best_epoch)
    return state, history


def record_attention(x_raw, state: TrainState, batch: int = 1024) -> AttentionRecord:
    xs = state.scaler.tx(np.atleast_2d(np.asarray(x_raw, dtype=np.float64)))
    chunks = [forward(xs[i:i + batch], state.params, state.config, state.mask, record=True)[1]["attention"]
              for i in range(0, len(xs), batch)]
    return AttentionRecord(np.concatenate(chunks, axis=0))


# -- persistence -------------------------------------------------------------

def save_state(state: TrainState, run_dir) -> None:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    layout, offset = [], 0
    for name, arr in state.params.items():
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    flat = np.concatenate([a.ravel() for a in state.params.values()]).astype("<f8")
    (run / "params.bin").write_bytes(flat.tobytes())
    manifest = {
        "config": asdict(state.config),
        "params": layout,
        "n_values": int(offset),
        "dtype": "<f8",
        "mask": state.mask.allowed.astype(int).tolist(),
        "scaler": {"x_mean": state.scaler.x_mean.tolist(), "x_std": state.scaler.x_std.tolist(),
                   "y_mean": state.scaler.y_mean, "y_std": state.scaler.y_std},
        "target_index": state.target_index,
        "feature_indices": list(state.feature_indices),
        "epochs_run": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val": state.best_val,
    }
    (run / "params.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_state(run_dir) -> TrainState:
    run = Path(run_dir)
    manifest = json.loads((run / "params.json").read_text())
    flat = np.frombuffer((run / "params.bin").read_bytes(), dtype=manifest["dtype"])
    params = {}
    for entry in manifest["params"]:
        size = int(np.prod(entry["shape"], dtype=int))
        params[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
    sc = manifest["scaler"]
    scaler = Scaler(np.array(sc["x_mean"]), np.array(sc["x_std"]), sc["y_mean"], sc["y_std"])
    return TrainState(ModelConfig(**manifest["config"]), params, AttentionMask(np.array(manifest["mask"], bool)),
                      scaler, manifest["target_index"], manifest["feature_indices"],
                      epoch=manifest["epochs_run"], best_epoch=manifest["best_epoch"],
                      best_val=manifest["best_val"])


def save_attention(rec: AttentionRecord, run_dir) -> None:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "attention.bin").write_bytes(rec.tensor.astype("<f8").tobytes())
    meta = {"shape": list(rec.shape), "dtype": "<f8", "axes": ["sample", "layer", "head", "query", "key"]}
    (run / "attention.json").write_text(json.dumps(meta) + "\n")


def load_attention(run_dir) -> AttentionRecord:
    run = Path(run_dir)
    meta = json.loads((run / "attention.json").read_text())
    data = np.frombuffer((run / "attention.bin").read_bytes(), dtype=meta["dtype"])
    return AttentionRecord(data.reshape(meta["shape"]).copy())


def save_log(history, run_dir) -> None:
    lines = ["epoch,train_mse,val_mse"] + [f"{e},{tr!r},{va!r}" for e, tr, va in history]
    (Path(run_dir) / "train_log.csv").write_text("\n".join(lines) + "\n")


def check_attention_rows(rec: AttentionRecord) -> bool:
    return bool(np.allclose(rec.tensor.sum(-1), 1.0, atol=TOL.stochastic_rows, rtol=0))
