"""Brightness-guided ViT pose regressor, forward path in float64 numpy.

Layout of one forward pass for a frame pair ``(I_t, I_t1)``:

1. per frame: channel-mean prior ``L_p``; the estimator maps ``[I, L_p]``
   through 1x1 conv -> 9x9 depth-wise conv (``F_br``) -> 1x1 conv (``I_br``);
2. ``I_br`` is patch-embedded, ``F_br`` is average-pooled per patch and
   projected to the model width to form the attention gate;
3. both frames' patch tokens (plus a frame-index embedding) follow a single
   cls token through ``depth`` pre-norm transformer layers whose attention is
   ``softmax(Q K^T / alpha) (V * gate)``;
4. the cls state goes through LayerNorm -> MLP -> linear head to a 6-vector.

Token-major layout is used throughout: an ``(N, d)`` array has one row per
token, so the key-axis softmax is a row softmax.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import _kernels
from .geometry import Pose, pose_from_twist


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple = (32, 32)
    patch: int = 16
    dim: int = 16
    depth: int = 1
    feat: int = 8
    heads: int = 1
    ff_hidden: int = 32
    head_hidden: int = 32
    dw_kernel: int = 9
    drop_path: float = 0.0
    ln_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))
        H, W = self.image_size
        if H % self.patch or W % self.patch:
            raise ValueError(f"image size {self.image_size} is not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.dw_kernel % 2 == 0:
            raise ValueError("depth-wise kernel size must be odd")
        if min(self.dim, self.feat, self.heads, self.ff_hidden, self.head_hidden, self.patch) <= 0 or self.depth < 0:
            raise ValueError("model dimensions must be positive")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch, self.image_size[1] // self.patch

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw


def weight_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    D, C, k = cfg.dim, cfg.feat, cfg.dw_kernel
    shapes = {
        "est.conv1.weight": (4, C),
        "est.conv1.bias": (C,),
        "est.dw.weight": (C, k, k),
        "est.dw.bias": (C,),
        "est.conv2.weight": (C, 3),
        "est.conv2.bias": (3,),
        "embed.weight": (cfg.patch * cfg.patch * 3, D),
        "embed.bias": (D,),
        "embed.cls": (D,),
        "embed.pos": (cfg.n_patches + 1, D),
        "embed.frame": (2, D),
        "gate.weight": (C, D),
        "gate.bias": (D,),
    }
    for l in range(cfg.depth):
        p = f"layers.{l}."
        shapes.update(
            {
                p + "ln1.scale": (D,),
                p + "ln1.shift": (D,),
                p + "q.weight": (D, D),
                p + "q.bias": (D,),
                p + "k.weight": (D, D),
                p + "k.bias": (D,),
                p + "v.weight": (D, D),
                p + "v.bias": (D,),
                p + "alpha": (),
                p + "out.weight": (D, D),
                p + "out.bias": (D,),
                p + "ln2.scale": (D,),
                p + "ln2.shift": (D,),
                p + "ff1.weight": (D, cfg.ff_hidden),
                p + "ff1.bias": (cfg.ff_hidden,),
                p + "ff2.weight": (cfg.ff_hidden, D),
                p + "ff2.bias": (D,),
            }
        )
    shapes.update(
        {
            "head.ln.scale": (D,),
            "head.ln.shift": (D,),
            "head.fc1.weight": (D, cfg.head_hidden),
            "head.fc1.bias": (cfg.head_hidden,),
            "head.fc2.weight": (cfg.head_hidden, D),
            "head.fc2.bias": (D,),
            "head.out.weight": (D, 6),
            "head.out.bias": (6,),
        }
    )
    return shapes


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    tensors: dict

    def __post_init__(self):
        shapes = weight_shapes(self.config)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ValueError(f"weight names do not match config (missing {missing}, unexpected {extra})")
        frozen = {}
        for name, shape in shapes.items():
            a = np.array(self.tensors[name], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name}: non-finite values")
            a.flags.writeable = False
            frozen[name] = a
        for l in range(self.config.depth):
            if not frozen[f"layers.{l}.alpha"] > 0:
                raise ValueError(f"layers.{l}.alpha must be positive")
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def replace(self, **updates) -> "ModelWeights":
        t = dict(self.tensors)
        for k, v in updates.items():
            t[k.replace("__", ".")] = v
        return ModelWeights(self.config, t)


def default_alpha(cfg: ModelConfig) -> float:
    return math.sqrt(cfg.dim / cfg.heads)


def init_weights(cfg: ModelConfig, seed: int = 0) -> ModelWeights:
    """Seeded ViT-style initialisation (truncation-free normal, std 0.02)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    t = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".alpha"):
            t[name] = np.array(default_alpha(cfg))
        elif name.endswith(".scale"):
            t[name] = np.ones(shape)
        elif name.endswith((".bias", ".shift")):
            t[name] = np.zeros(shape)
        elif name.startswith("est."):
            fan_in = shape[0] if len(shape) == 2 else shape[1] * shape[2]
            t[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
        else:
            t[name] = 0.02 * rng.standard_normal(shape)
    return ModelWeights(cfg, t)


def zero_weights(cfg: ModelConfig) -> ModelWeights:
    """All-zero tensors (alphas at their default): the network outputs the zero twist."""
    t = {n: np.zeros(s) for n, s in weight_shapes(cfg).items()}
    for l in range(cfg.depth):
        t[f"layers.{l}.alpha"] = np.array(default_alpha(cfg))
    return ModelWeights(cfg, t)


# --------------------------------------------------------------------------
# weight file: flat little-endian float64 + JSON manifest
# --------------------------------------------------------------------------


def manifest_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".json")


def save_weights(w: ModelWeights, bin_path) -> None:
    bin_path = Path(bin_path)
    entries = []
    chunks = []
    offset = 0
    for name in weight_shapes(w.config):
        a = np.asarray(w[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    bin_path.write_bytes(b"".join(chunks))
    manifest = {
        "version": 1,
        "dtype": "float64",
        "byteorder": "little",
        "config": asdict(w.config),
        "tensors": entries,
    }
    manifest_path(bin_path).write_text(json.dumps(manifest, indent=1) + "\n")


def load_weights(bin_path) -> ModelWeights:
    bin_path = Path(bin_path)
    mpath = manifest_path(bin_path)
    manifest = json.loads(mpath.read_text())
    if manifest.get("version") != 1:
        raise ValueError(f"{mpath}: unsupported manifest version {manifest.get('version')!r}")
    cfg = ModelConfig(**manifest["config"])
    raw = bin_path.read_bytes()
    t = {}
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = e["offset"] + 8 * count
        if end > len(raw):
            raise ValueError(f"{bin_path}: tensor {e['name']} runs past end of file")
        t[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"]).reshape(shape)
    return ModelWeights(cfg, t)


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def _check_image(img, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ValueError(f"{name} values must be finite and within [0, 1]")
    return img


def brightness_prior(img) -> np.ndarray:
    img = _check_image(img)
    return (img[..., 0] + img[..., 1] + img[..., 2]) / 3.0


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weight + bias


def brightness_estimator(img, prior, w: ModelWeights) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(I_br, F_br)`` with shapes ``H x W x 3`` and ``H x W x C``."""
    img = np.asarray(img, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or prior.shape != img.shape[:2]:
        raise ValueError(f"image {img.shape} and prior {prior.shape} shapes do not agree")
    x = np.concatenate([img, prior[..., None]], axis=2)
    h = conv1x1(x, w["est.conv1.weight"], w["est.conv1.bias"])
    f_br = _kernels.depthwise_conv(h, w["est.dw.weight"], w["est.dw.bias"])
    i_br = conv1x1(f_br, w["est.conv2.weight"], w["est.conv2.bias"])
    return i_br, f_br


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """``H x W x c`` -> ``(n_patches, patch*patch*c)``, patches in row-major grid order."""
    H, W, c = x.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} is not divisible by patch size {patch}")
    gh, gw = H // patch, W // patch
    return x.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, -1)


def patch_embed(img, w: ModelWeights) -> np.ndarray:
    """Token sequence ``(n_patches + 1, D)``: cls token first, positions added."""
    cfg = w.config
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != cfg.image_size:
        raise ValueError(f"image {img.shape[:2]} does not match configured size {cfg.image_size}")
    tokens = patchify(img, cfg.patch) @ w["embed.weight"] + w["embed.bias"]
    seq = np.vstack([w["embed.cls"][None, :], tokens])
    return seq + w["embed.pos"]


def pool_features(f_br: np.ndarray, patch: int) -> np.ndarray:
    H, W, C = f_br.shape
    gh, gw = H // patch, W // patch
    return f_br.reshape(gh, patch, gw, patch, C).mean(axis=(1, 3)).reshape(gh * gw, C)


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_attention_inputs(Q, K, V, gate, alpha):
    Q, K, V, gate = (np.asarray(a, dtype=np.float64) for a in (Q, K, V, gate))
    if Q.ndim != 2 or not (Q.shape == K.shape == V.shape == gate.shape):
        raise ValueError("Q, K, V and gate must share one (N, d) shape")
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha <= 0.0:
        raise ValueError("alpha must be a positive finite scalar")
    for a in (Q, K, V, gate):
        if not np.all(np.isfinite(a)):
            raise ValueError("attention inputs must be finite")
    return Q, K, V, gate, alpha


def attention_weights(Q, K, alpha) -> np.ndarray:
    """Row ``i`` holds query ``i``'s weights over the keys; each row sums to 1."""
    return _softmax_rows(Q @ K.T / alpha)


def guided_attention(Q, K, V, gate, alpha) -> np.ndarray:
    """Brightness-gated attention: each output token is a convex mix of ``V * gate`` rows."""
    Q, K, V, gate, alpha = _check_attention_inputs(Q, K, V, gate, alpha)
    return attention_weights(Q, K, alpha) @ (V * gate)


def guided_attention_grad(Q, K, V, gate, alpha, upstream) -> dict:
    """Analytic gradients of ``sum(upstream * guided_attention(...))``.

    Returns a dict with keys ``Q``, ``K``, ``V``, ``gate`` (arrays) and
    ``alpha`` (float).
    """
    Q, K, V, gate, alpha = _check_attention_inputs(Q, K, V, gate, alpha)
    G = np.asarray(upstream, dtype=np.float64)
    if G.shape != Q.shape:
        raise ValueError("upstream gradient must match the output shape")
    S = Q @ K.T / alpha
    A = _softmax_rows(S)
    U = V * gate
    dA = G @ U.T
    dU = A.T @ G
    dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    return {
        "Q": dS @ K / alpha,
        "K": dS.T @ Q / alpha,
        "V": dU * gate,
        "gate": dU * V,
        "alpha": float(-np.sum(dS * S) / alpha),
    }


def multihead_guided_attention(Q, K, V, gate, alpha, heads: int) -> np.ndarray:
    if heads == 1:
        return guided_attention(Q, K, V, gate, alpha)
    N, D = Q.shape
    dh = D // heads
    out = np.empty((N, D))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        out[:, sl] = guided_attention(Q[:, sl], K[:, sl], V[:, sl], gate[:, sl], alpha)
    return out


def transformer_layer(x: np.ndarray, gate: np.ndarray, w: ModelWeights, l: int) -> np.ndarray:
    cfg = w.config
    p = f"layers.{l}."
    h = layer_norm(x, w[p + "ln1.scale"], w[p + "ln1.shift"], cfg.ln_eps)
    Q = h @ w[p + "q.weight"] + w[p + "q.bias"]
    K = h @ w[p + "k.weight"] + w[p + "k.bias"]
    V = h @ w[p + "v.weight"] + w[p + "v.bias"]
    att = multihead_guided_attention(Q, K, V, gate, float(w[p + "alpha"]), cfg.heads)
    # DropPath is the identity at inference.
    x = x + att @ w[p + "out.weight"] + w[p + "out.bias"]
    h = layer_norm(x, w[p + "ln2.scale"], w[p + "ln2.shift"], cfg.ln_eps)
    ff = gelu(h @ w[p + "ff1.weight"] + w[p + "ff1.bias"]) @ w[p + "ff2.weight"] + w[p + "ff2.bias"]
    return x + ff


def encode_inputs(frame_t, frame_t1, w: ModelWeights) -> tuple[np.ndarray, np.ndarray]:
    """Initial token sequence ``(2 P + 1, D)`` and gate of the same shape."""
    f0 = _check_image(frame_t, "frame_t")
    f1 = _check_image(frame_t1, "frame_t1")
    if f0.shape != f1.shape:
        raise ValueError(f"frame shapes differ: {f0.shape} vs {f1.shape}")
    cfg = w.config
    seqs = []
    gates = []
    for idx, img in enumerate((f0, f1)):
        i_br, f_br = brightness_estimator(img, brightness_prior(img), w)
        seq = patch_embed(i_br, w)
        seqs.append(seq[1:] + w["embed.frame"][idx])
        if idx == 0:
            cls = seq[0]
        gates.append(pool_features(f_br, cfg.patch) @ w["gate.weight"] + w["gate.bias"])
    tokens = np.vstack([cls[None, :], *seqs])
    # The cls token has no brightness feature of its own; its value passes ungated.
    gate = np.vstack([np.ones((1, cfg.dim)), *gates])
    return tokens, gate


def encoder_forward(frame_t, frame_t1, w: ModelWeights) -> np.ndarray:
    x, gate = encode_inputs(frame_t, frame_t1, w)
    for l in range(w.config.depth):
        x = transformer_layer(x, gate, w, l)
    return x[0].copy()


def decoder_forward(cls, w: ModelWeights) -> np.ndarray:
    cls = np.asarray(cls, dtype=np.float64)
    if cls.shape != (w.config.dim,):
        raise ValueError(f"cls state must have shape ({w.config.dim},), got {cls.shape}")
    h = layer_norm(cls, w["head.ln.scale"], w["head.ln.shift"], w.config.ln_eps)
    h = gelu(h @ w["head.fc1.weight"] + w["head.fc1.bias"]) @ w["head.fc2.weight"] + w["head.fc2.bias"]
    return h @ w["head.out.weight"] + w["head.out.bias"]


def vonet_infer(frame_t, frame_t1, w: ModelWeights) -> Pose:
    return pose_from_twist(decoder_forward(encoder_forward(frame_t, frame_t1, w), w))
