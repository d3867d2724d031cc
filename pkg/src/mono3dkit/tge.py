"""Text-guided geometry enhancement: projection, cross-attention, encoder layer.

The flow implemented here refines geometry features with textual cues:
token features are pushed through a ReLU fully-connected projection, and
the projected features serve as key/value pairs in multi-head
cross-attention where the geometry features are the queries.  A standard
pre-normalization transformer layer (self-attention + FFN, both with
residuals) is provided for encoding geometry embeddings.

Everything is dense float64 numpy.  Each operation has a hand-derived
backward pass for the scalar reduction sum(output); the finite-difference
harness in ``gradcheck`` verifies them.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFinite, ShapeMismatch

# FeatureMatrix: a dense 2-D float64 array (rows x channels).


def _as_matrix(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NonFinite(f"{name} contains non-finite values")
    return x


def _linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


@dataclass
class ProjectionParams:
    """Square projection ``w`` (C x C) and bias ``b`` (C,)."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ShapeMismatch(f"projection matrix must be square, got {self.w.shape}")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeMismatch(f"bias shape {self.b.shape} != ({self.w.shape[0]},)")


@dataclass
class AttentionParams:
    """Head count plus the four C x C projections, with optional biases."""

    n_heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_q: Optional[np.ndarray] = None
    b_k: Optional[np.ndarray] = None
    b_v: Optional[np.ndarray] = None
    b_o: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, w)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ShapeMismatch(f"{name} must be square, got {w.shape}")
            if w.shape != self.w_q.shape:
                raise ShapeMismatch("attention projections disagree on channel count")
            if not np.isfinite(w).all():
                raise NonFinite(f"{name} contains non-finite values")
        for name in ("b_q", "b_k", "b_v", "b_o"):
            b = getattr(self, name)
            if b is not None:
                b = np.asarray(b, dtype=np.float64)
                setattr(self, name, b)
                if b.shape != (self.channels,):
                    raise ShapeMismatch(f"{name} shape {b.shape} != ({self.channels},)")
        if self.n_heads < 1 or self.channels % self.n_heads:
            raise ShapeMismatch(
                f"channel count {self.channels} not divisible by {self.n_heads} heads"
            )

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.n_heads


@dataclass
class FFNParams:
    """Two-layer feed-forward C -> F -> C with ReLU activation."""

    w1: np.ndarray  # (F, C)
    b1: np.ndarray  # (F,)
    w2: np.ndarray  # (C, F)
    b2: np.ndarray  # (C,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        f, c = self.w1.shape
        if f < 1:
            raise ShapeMismatch("inner width must be at least 1")
        if self.w2.shape != (c, f) or self.b1.shape != (f,) or self.b2.shape != (c,):
            raise ShapeMismatch("inconsistent feed-forward parameter shapes")


@dataclass
class EncoderLayerParams:
    """Pre-normalization transformer layer parameters."""

    attn: AttentionParams
    ffn: FFNParams
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray

    def __post_init__(self):
        c = self.attn.channels
        for name in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, v)
            if v.shape != (c,):
                raise ShapeMismatch(f"{name} shape {v.shape} != ({c},)")


DEFAULT_CHANNELS = 256
DEFAULT_HEADS = 8
LN_EPS = 1e-6


# ---------------------------------------------------------------------------
# seeded initialization

def _keyed_generator(seed: int, name: str) -> np.random.Generator:
    material = struct.pack("<Q", seed & (2**64 - 1)) + b"\x00" + name.encode("utf-8")
    key = int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def glorot_uniform(seed: int, name: str, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) draw, deterministic per (seed, name, shape)."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_in, fan_out = shape[0], 1
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return _keyed_generator(seed, f"{name}:{shape}").uniform(-bound, bound, shape)


def init_projection_params(channels: int, seed: int = 0) -> ProjectionParams:
    return ProjectionParams(
        w=glorot_uniform(seed, "proj.w", (channels, channels)),
        b=glorot_uniform(seed, "proj.b", (channels,)),
    )


def init_attention_params(
    channels: int, n_heads: int = DEFAULT_HEADS, seed: int = 0, bias: bool = True
) -> AttentionParams:
    kw = {}
    for name in ("w_q", "w_k", "w_v", "w_o"):
        kw[name] = glorot_uniform(seed, f"attn.{name}", (channels, channels))
    if bias:
        for name in ("b_q", "b_k", "b_v", "b_o"):
            kw[name] = glorot_uniform(seed, f"attn.{name}", (channels,))
    return AttentionParams(n_heads=n_heads, **kw)


def init_encoder_layer_params(
    channels: int, n_heads: int = DEFAULT_HEADS, ffn_dim: Optional[int] = None,
    seed: int = 0,
) -> EncoderLayerParams:
    ffn_dim = ffn_dim or 4 * channels
    return EncoderLayerParams(
        attn=init_attention_params(channels, n_heads, seed=seed),
        ffn=FFNParams(
            w1=glorot_uniform(seed, "ffn.w1", (ffn_dim, channels)),
            b1=glorot_uniform(seed, "ffn.b1", (ffn_dim,)),
            w2=glorot_uniform(seed, "ffn.w2", (channels, ffn_dim)),
            b2=glorot_uniform(seed, "ffn.b2", (channels,)),
        ),
        ln1_gamma=np.ones(channels),
        ln1_beta=np.zeros(channels),
        ln2_gamma=np.ones(channels),
        ln2_beta=np.zeros(channels),
    )


# ---------------------------------------------------------------------------
# forward passes (with caches for the backward passes)

def softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _fc_project_fwd(f_t: np.ndarray, w: np.ndarray, b: np.ndarray):
    pre = _linear(f_t, w, b)
    out = np.maximum(pre, 0.0)
    return out, {"f_t": f_t, "w": w, "pre": pre}


def fc_project(f_t: np.ndarray, p: ProjectionParams) -> np.ndarray:
    """ReLU(f_t . w^T + b); entrywise non-negative, same shape as ``f_t``."""
    f_t = _as_matrix("f_t", f_t)
    if f_t.shape[1] != p.w.shape[0]:
        raise ShapeMismatch(
            f"f_t has {f_t.shape[1]} channels, projection expects {p.w.shape[0]}"
        )
    out, _ = _fc_project_fwd(f_t, p.w, p.b)
    return out


def _fc_project_bwd(cache: dict, g: np.ndarray) -> dict:
    dpre = g * (cache["pre"] > 0)
    return {
        "f_t": dpre @ cache["w"],
        "w": dpre.T @ cache["f_t"],
        "b": dpre.sum(axis=0),
    }


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, h, c // h).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def _mhca_fwd(q_in: np.ndarray, kv_in: np.ndarray, p: AttentionParams):
    q = _linear(q_in, p.w_q, p.b_q)
    k = _linear(kv_in, p.w_k, p.b_k)
    v = _linear(kv_in, p.w_v, p.b_v)
    qh = _split_heads(q, p.n_heads)
    kh = _split_heads(k, p.n_heads)
    vh = _split_heads(v, p.n_heads)
    scale = 1.0 / np.sqrt(p.head_dim)
    logits = (qh @ kh.transpose(0, 2, 1)) * scale
    weights = softmax_rows(logits)
    heads = weights @ vh
    merged = _merge_heads(heads)
    out = _linear(merged, p.w_o, p.b_o)
    cache = {
        "q_in": q_in, "kv_in": kv_in, "p": p, "qh": qh, "kh": kh, "vh": vh,
        "scale": scale, "weights": weights, "merged": merged,
    }
    return out, cache


def mhca(q_in: np.ndarray, kv_in: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Scaled dot-product multi-head cross-attention.

    Per head: softmax(Q K^T / sqrt(d_h)) V; heads are concatenated and
    passed through the output projection.  Output shape equals ``q_in``.
    """
    q_in = _as_matrix("q_in", q_in)
    kv_in = _as_matrix("kv_in", kv_in)
    if q_in.shape[1] != kv_in.shape[1]:
        raise ShapeMismatch(
            f"query and key/value channels differ: {q_in.shape[1]} vs {kv_in.shape[1]}"
        )
    if q_in.shape[1] != p.channels:
        raise ShapeMismatch(
            f"inputs have {q_in.shape[1]} channels, attention expects {p.channels}"
        )
    out, _ = _mhca_fwd(q_in, kv_in, p)
    if not np.isfinite(out).all():
        raise NonFinite("attention produced non-finite values")
    return out


def _mhca_bwd(cache: dict, g: np.ndarray) -> dict:
    p: AttentionParams = cache["p"]
    weights, scale = cache["weights"], cache["scale"]
    qh, kh, vh = cache["qh"], cache["kh"], cache["vh"]
    grads: dict[str, np.ndarray] = {}

    dmerged = g @ p.w_o
    grads["w_o"] = g.T @ cache["merged"]
    grads["b_o"] = g.sum(axis=0)
    dheads = _split_heads(dmerged, p.n_heads)

    dweights = dheads @ vh.transpose(0, 2, 1)
    dvh = weights.transpose(0, 2, 1) @ dheads
    # softmax rows: dS = A * (dA - sum(dA * A))
    dlogits = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dlogits *= scale
    dqh = dlogits @ kh
    dkh = dlogits.transpose(0, 2, 1) @ qh

    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    grads["q_in"] = dq @ p.w_q
    grads["kv_in"] = dk @ p.w_k + dv @ p.w_v
    grads["w_q"] = dq.T @ cache["q_in"]
    grads["w_k"] = dk.T @ cache["kv_in"]
    grads["w_v"] = dv.T @ cache["kv_in"]
    grads["b_q"] = dq.sum(axis=0)
    grads["b_k"] = dk.sum(axis=0)
    grads["b_v"] = dv.sum(axis=0)
    return grads


def mhsa(x: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Self-attention: cross-attention with the input as its own key/value."""
    return mhca(x, x, p)


def _ffn_fwd(x: np.ndarray, p: FFNParams):
    pre = _linear(x, p.w1, p.b1)
    hidden = np.maximum(pre, 0.0)
    out = _linear(hidden, p.w2, p.b2)
    return out, {"x": x, "p": p, "pre": pre, "hidden": hidden}


def ffn(x: np.ndarray, p: FFNParams) -> np.ndarray:
    """Position-wise feed-forward: ReLU inner layer, linear outer layer."""
    x = _as_matrix("x", x)
    if x.shape[1] != p.w1.shape[1]:
        raise ShapeMismatch(f"x has {x.shape[1]} channels, ffn expects {p.w1.shape[1]}")
    out, _ = _ffn_fwd(x, p)
    return out


def _ffn_bwd(cache: dict, g: np.ndarray) -> dict:
    p: FFNParams = cache["p"]
    dhidden = g @ p.w2
    dpre = dhidden * (cache["pre"] > 0)
    return {
        "x": dpre @ p.w1,
        "w1": dpre.T @ cache["x"],
        "b1": dpre.sum(axis=0),
        "w2": g.T @ cache["hidden"],
        "b2": g.sum(axis=0),
    }


def _layer_norm_fwd(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = centered * inv
    out = gamma * xhat + beta
    return out, {"xhat": xhat, "inv": inv, "gamma": gamma}


def _layer_norm_bwd(cache: dict, g: np.ndarray):
    xhat, inv, gamma = cache["xhat"], cache["inv"], cache["gamma"]
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _encoder_layer_fwd(x: np.ndarray, p: EncoderLayerParams):
    n1, c_ln1 = _layer_norm_fwd(x, p.ln1_gamma, p.ln1_beta)
    attn_out, c_attn = _mhca_fwd(n1, n1, p.attn)
    h1 = x + attn_out
    n2, c_ln2 = _layer_norm_fwd(h1, p.ln2_gamma, p.ln2_beta)
    ffn_out, c_ffn = _ffn_fwd(n2, p.ffn)
    out = h1 + ffn_out
    return out, {"ln1": c_ln1, "attn": c_attn, "ln2": c_ln2, "ffn": c_ffn}


def depth_encoder_layer(f_g: np.ndarray, p: EncoderLayerParams) -> np.ndarray:
    """Pre-norm transformer layer: x + MHSA(LN(x)), then + FFN(LN(.))."""
    f_g = _as_matrix("f_g", f_g)
    if f_g.shape[1] != p.attn.channels:
        raise ShapeMismatch(
            f"f_g has {f_g.shape[1]} channels, layer expects {p.attn.channels}"
        )
    out, _ = _encoder_layer_fwd(f_g, p)
    return out


def _encoder_layer_bwd(cache: dict, g: np.ndarray) -> dict:
    grads: dict[str, np.ndarray] = {}
    ffn_grads = _ffn_bwd(cache["ffn"], g)
    for name in ("w1", "b1", "w2", "b2"):
        grads[f"ffn_{name}"] = ffn_grads[name]
    dn2 = ffn_grads["x"]
    dh1_from_ln2, grads["ln2_gamma"], grads["ln2_beta"] = _layer_norm_bwd(cache["ln2"], dn2)
    dh1 = g + dh1_from_ln2
    attn_grads = _mhca_bwd(cache["attn"], dh1)
    for name in ("w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o"):
        grads[f"attn_{name}"] = attn_grads[name]
    dn1 = attn_grads["q_in"] + attn_grads["kv_in"]
    dx_from_ln1, grads["ln1_gamma"], grads["ln1_beta"] = _layer_norm_bwd(cache["ln1"], dn1)
    grads["x"] = dh1 + dx_from_ln1
    return grads


def tge_forward(
    p_g: np.ndarray, f_t: np.ndarray, proj: ProjectionParams, attn: AttentionParams
) -> np.ndarray:
    """Project token features, then cross-attend geometry queries onto them."""
    return mhca(p_g, fc_project(f_t, proj), attn)


def _tge_forward_fwd(p_g, f_t, proj_w, proj_b, attn: AttentionParams):
    kv, c_proj = _fc_project_fwd(f_t, proj_w, proj_b)
    out, c_attn = _mhca_fwd(p_g, kv, attn)
    return out, {"proj": c_proj, "attn": c_attn}


def _tge_forward_bwd(cache: dict, g: np.ndarray) -> dict:
    attn_grads = _mhca_bwd(cache["attn"], g)
    proj_grads = _fc_project_bwd(cache["proj"], attn_grads["kv_in"])
    out = {"p_g": attn_grads["q_in"], "f_t": proj_grads["f_t"],
           "proj_w": proj_grads["w"], "proj_b": proj_grads["b"]}
    for name in ("w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o"):
        out[f"attn_{name}"] = attn_grads[name]
    return out


def attention_params_to_dict(p: AttentionParams, prefix: str = "attn.") -> dict:
    """Named tensors for checkpointing; head count rides along as a 0-d tensor."""
    out = {f"{prefix}n_heads": np.float64(p.n_heads)}
    for name in ("w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o"):
        value = getattr(p, name)
        if value is not None:
            out[f"{prefix}{name}"] = value
    return out


def attention_params_from_dict(tensors: dict, prefix: str = "attn.") -> AttentionParams:
    def get(name, required=False):
        key = f"{prefix}{name}"
        if key not in tensors:
            if required:
                raise KeyError(f"checkpoint is missing tensor {key!r}")
            return None
        return tensors[key]

    return AttentionParams(
        n_heads=int(np.asarray(get("n_heads", required=True))),
        w_q=get("w_q", required=True), w_k=get("w_k", required=True),
        w_v=get("w_v", required=True), w_o=get("w_o", required=True),
        b_q=get("b_q"), b_k=get("b_k"), b_v=get("b_v"), b_o=get("b_o"),
    )


def projection_params_to_dict(p: ProjectionParams, prefix: str = "proj.") -> dict:
    return {f"{prefix}w": p.w, f"{prefix}b": p.b}


def projection_params_from_dict(tensors: dict, prefix: str = "proj.") -> ProjectionParams:
    try:
        return ProjectionParams(w=tensors[f"{prefix}w"], b=tensors[f"{prefix}b"])
    except KeyError as e:
        raise KeyError(f"checkpoint is missing tensor {e}") from None


# ---------------------------------------------------------------------------
# gradient-check registration

from . import gradcheck as _gc  # noqa: E402

_KINK_MARGIN = 1e-3  # pre-activations are kept at least this far from ReLU kinks


def _case_rng(fn_id: str, seed: int, attempt: int) -> np.random.Generator:
    return _keyed_generator(seed, f"gradcase:{fn_id}:{attempt}")


def _attn_arrays(rng, channels: int) -> dict[str, np.ndarray]:
    bound = np.sqrt(6.0 / (2 * channels))
    out = {}
    for name in ("w_q", "w_k", "w_v", "w_o"):
        out[name] = rng.uniform(-bound, bound, (channels, channels))
    for name in ("b_q", "b_k", "b_v", "b_o"):
        out[name] = rng.uniform(-0.3, 0.3, channels)
    return out


def _attn_from(arrays: dict, consts: dict, prefix: str = "") -> AttentionParams:
    return AttentionParams(
        n_heads=consts["n_heads"],
        w_q=arrays[prefix + "w_q"], w_k=arrays[prefix + "w_k"],
        w_v=arrays[prefix + "w_v"], w_o=arrays[prefix + "w_o"],
        b_q=arrays.get(prefix + "b_q"), b_k=arrays.get(prefix + "b_k"),
        b_v=arrays.get(prefix + "b_v"), b_o=arrays.get(prefix + "b_o"),
    )


def _make_fc_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _case_rng("fc_project", seed, attempt)
        arrays = {
            "f_t": rng.uniform(-1.0, 1.0, (3, 4)),
            "w": rng.uniform(-1.0, 1.0, (4, 4)),
            "b": rng.uniform(-0.5, 0.5, 4),
        }
        pre = arrays["f_t"] @ arrays["w"].T + arrays["b"]
        if np.abs(pre).min() > _KINK_MARGIN:
            return _gc.GradCase(arrays=arrays)
    raise RuntimeError("could not sample a kink-free fc_project case")


def _fc_forward(arrays: dict, consts: dict) -> float:
    out, _ = _fc_project_fwd(arrays["f_t"], arrays["w"], arrays["b"])
    return float(out.sum())


def _fc_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _fc_project_fwd(arrays["f_t"], arrays["w"], arrays["b"])
    return _fc_project_bwd(cache, np.ones_like(out))


def _make_mhca_case(seed: int) -> _gc.GradCase:
    rng = _case_rng("mhca", seed, 0)
    arrays = {
        "q_in": rng.uniform(-1.0, 1.0, (3, 4)),
        "kv_in": rng.uniform(-1.0, 1.0, (5, 4)),
        **_attn_arrays(rng, 4),
    }
    return _gc.GradCase(arrays=arrays, consts={"n_heads": 2})


def _mhca_forward(arrays: dict, consts: dict) -> float:
    out, _ = _mhca_fwd(arrays["q_in"], arrays["kv_in"], _attn_from(arrays, consts))
    return float(out.sum())


def _mhca_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _mhca_fwd(arrays["q_in"], arrays["kv_in"], _attn_from(arrays, consts))
    return _mhca_bwd(cache, np.ones_like(out))


def _make_mhsa_case(seed: int) -> _gc.GradCase:
    rng = _case_rng("mhsa", seed, 0)
    arrays = {"x": rng.uniform(-1.0, 1.0, (4, 4)), **_attn_arrays(rng, 4)}
    return _gc.GradCase(arrays=arrays, consts={"n_heads": 2})


def _mhsa_forward(arrays: dict, consts: dict) -> float:
    out, _ = _mhca_fwd(arrays["x"], arrays["x"], _attn_from(arrays, consts))
    return float(out.sum())


def _mhsa_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _mhca_fwd(arrays["x"], arrays["x"], _attn_from(arrays, consts))
    grads = _mhca_bwd(cache, np.ones_like(out))
    grads["x"] = grads.pop("q_in") + grads.pop("kv_in")
    return grads


def _ffn_params_from(arrays: dict, prefix: str = "") -> FFNParams:
    return FFNParams(
        w1=arrays[prefix + "w1"], b1=arrays[prefix + "b1"],
        w2=arrays[prefix + "w2"], b2=arrays[prefix + "b2"],
    )


def _make_ffn_case(seed: int) -> _gc.GradCase:
    for attempt in range(64):
        rng = _case_rng("ffn", seed, attempt)
        arrays = {
            "x": rng.uniform(-1.0, 1.0, (3, 4)),
            "w1": rng.uniform(-1.0, 1.0, (6, 4)),
            "b1": rng.uniform(-0.5, 0.5, 6),
            "w2": rng.uniform(-1.0, 1.0, (4, 6)),
            "b2": rng.uniform(-0.5, 0.5, 4),
        }
        pre = arrays["x"] @ arrays["w1"].T + arrays["b1"]
        if np.abs(pre).min() > _KINK_MARGIN:
            return _gc.GradCase(arrays=arrays)
    raise RuntimeError("could not sample a kink-free ffn case")


def _ffn_forward(arrays: dict, consts: dict) -> float:
    out, _ = _ffn_fwd(arrays["x"], _ffn_params_from(arrays))
    return float(out.sum())


def _ffn_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _ffn_fwd(arrays["x"], _ffn_params_from(arrays))
    grads = _ffn_bwd(cache, np.ones_like(out))
    return grads


def _encoder_params_from(arrays: dict, consts: dict) -> EncoderLayerParams:
    return EncoderLayerParams(
        attn=_attn_from(arrays, consts, prefix="attn_"),
        ffn=_ffn_params_from(arrays, prefix="ffn_"),
        ln1_gamma=arrays["ln1_gamma"], ln1_beta=arrays["ln1_beta"],
        ln2_gamma=arrays["ln2_gamma"], ln2_beta=arrays["ln2_beta"],
    )


def _make_encoder_case(seed: int) -> _gc.GradCase:
    channels, heads, inner = 8, 2, 12
    consts = {"n_heads": heads}
    for attempt in range(64):
        rng = _case_rng("depth_encoder_layer", seed, attempt)
        arrays = {"x": rng.uniform(-1.0, 1.0, (4, channels))}
        arrays.update({f"attn_{k}": v for k, v in _attn_arrays(rng, channels).items()})
        arrays.update({
            "ffn_w1": rng.uniform(-1.0, 1.0, (inner, channels)),
            "ffn_b1": rng.uniform(-0.5, 0.5, inner),
            "ffn_w2": rng.uniform(-1.0, 1.0, (channels, inner)),
            "ffn_b2": rng.uniform(-0.5, 0.5, channels),
            "ln1_gamma": 1.0 + rng.uniform(-0.3, 0.3, channels),
            "ln1_beta": rng.uniform(-0.3, 0.3, channels),
            "ln2_gamma": 1.0 + rng.uniform(-0.3, 0.3, channels),
            "ln2_beta": rng.uniform(-0.3, 0.3, channels),
        })
        _, cache = _encoder_layer_fwd(arrays["x"], _encoder_params_from(arrays, consts))
        if np.abs(cache["ffn"]["pre"]).min() > _KINK_MARGIN:
            return _gc.GradCase(arrays=arrays, consts=consts)
    raise RuntimeError("could not sample a kink-free encoder-layer case")


def _encoder_forward(arrays: dict, consts: dict) -> float:
    out, _ = _encoder_layer_fwd(arrays["x"], _encoder_params_from(arrays, consts))
    return float(out.sum())


def _encoder_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _encoder_layer_fwd(arrays["x"], _encoder_params_from(arrays, consts))
    return _encoder_layer_bwd(cache, np.ones_like(out))


def _make_tge_case(seed: int) -> _gc.GradCase:
    consts = {"n_heads": 2}
    for attempt in range(64):
        rng = _case_rng("tge_forward", seed, attempt)
        arrays = {
            "p_g": rng.uniform(-1.0, 1.0, (3, 4)),
            "f_t": rng.uniform(-1.0, 1.0, (5, 4)),
            "proj_w": rng.uniform(-1.0, 1.0, (4, 4)),
            "proj_b": rng.uniform(-0.5, 0.5, 4),
        }
        arrays.update({f"attn_{k}": v for k, v in _attn_arrays(rng, 4).items()})
        pre = arrays["f_t"] @ arrays["proj_w"].T + arrays["proj_b"]
        if np.abs(pre).min() > _KINK_MARGIN:
            return _gc.GradCase(arrays=arrays, consts=consts)
    raise RuntimeError("could not sample a kink-free tge_forward case")


def _tge_case_forward(arrays: dict, consts: dict) -> float:
    out, _ = _tge_forward_fwd(
        arrays["p_g"], arrays["f_t"], arrays["proj_w"], arrays["proj_b"],
        _attn_from(arrays, consts, prefix="attn_"),
    )
    return float(out.sum())


def _tge_case_gradient(arrays: dict, consts: dict) -> dict:
    out, cache = _tge_forward_fwd(
        arrays["p_g"], arrays["f_t"], arrays["proj_w"], arrays["proj_b"],
        _attn_from(arrays, consts, prefix="attn_"),
    )
    return _tge_forward_bwd(cache, np.ones_like(out))


_gc.register(_gc.GradOp("fc_project", _make_fc_case, _fc_forward, _fc_gradient))
_gc.register(_gc.GradOp("mhca", _make_mhca_case, _mhca_forward, _mhca_gradient))
_gc.register(_gc.GradOp("mhsa", _make_mhsa_case, _mhsa_forward, _mhsa_gradient))
_gc.register(_gc.GradOp("ffn", _make_ffn_case, _ffn_forward, _ffn_gradient))
_gc.register(
    _gc.GradOp("depth_encoder_layer", _make_encoder_case, _encoder_forward, _encoder_gradient)
)
_gc.register(_gc.GradOp("tge_forward", _make_tge_case, _tge_case_forward, _tge_case_gradient))
