"""Small query-based detector with exposed per-layer states.

The model is a vanilla pre-norm transformer: a patchify + linear backbone,
an encoder over N patch tokens, and a decoder over M learned object queries,
with per-class sigmoid classification and a 3-layer box head. One extra
learnable embedding (the domain query) is prepended at slot 0 of both the
encoder token sequence and the decoder query set; it attends and is attended
to like any other slot, and it is excluded from detection heads. Every
intermediate layer state is returned so alignment losses can tap them.

Pre-norm blocks keep the residual stream untouched by zero-initialized
sublayers, which makes shape/identity contracts directly testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class DetectorConfig:
    """Architecture hyperparameters; token count derives from the patch grid."""
    image_size: int = 32
    patch_size: int = 4
    hidden_dim: int = 32
    num_heads: int = 2
    enc_layers: int = 3
    dec_layers: int = 3
    ffn_dim: int = 64
    num_queries: int = 12
    num_classes: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be a multiple of num_heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size


@dataclass
class DetectionSet:
    """Per-image detections: corner boxes in [0,1] and per-class scores."""
    boxes: np.ndarray   # (n, 4) as (x1, y1, x2, y2)
    scores: np.ndarray  # (n, K) independent per-class sigmoids

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class ForwardPass:
    """All tensors produced by one batched forward trace."""
    enc_states: list = field(default_factory=list)  # L_enc+1 x (B, N+1, C)
    dec_states: list = field(default_factory=list)  # L_dec+1 x (B, M+1, C)
    logits: Tensor = None                           # (B, M, K)
    boxes: Tensor = None                            # (B, M, 4) xyxy in [0,1]

    def detections(self, i: int) -> DetectionSet:
        return DetectionSet(boxes=np.array(self.boxes.data[i]),
                            scores=ad.stable_sigmoid(np.asarray(self.logits.data[i])))


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _attn_params(rng, c: int) -> dict:
    p = {}
    for name in ("wq", "wk", "wv", "wo"):
        p[name] = _xavier(rng, c, c)
    for name in ("bq", "bk", "bv", "bo"):
        p[name] = np.zeros(c)
    return p


def init_detector_params(cfg: DetectorConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh parameter dictionary; a fixed seed gives bit-identical weights."""
    rng = np.random.default_rng(seed)
    c, f = cfg.hidden_dim, cfg.ffn_dim
    p: dict[str, np.ndarray] = {}
    p["backbone.w"] = _xavier(rng, cfg.patch_dim, c)
    p["backbone.b"] = np.zeros(c)
    p["enc.domain_query"] = rng.normal(0.0, 0.02, size=c)
    p["enc.pos"] = rng.normal(0.0, 0.02, size=(cfg.num_tokens + 1, c))
    p["enc.level"] = rng.normal(0.0, 0.02, size=(cfg.num_tokens + 1, c))
    p["dec.domain_query"] = rng.normal(0.0, 0.02, size=c)
    p["dec.queries"] = rng.normal(0.0, 0.02, size=(cfg.num_queries, c))
    p["dec.pos"] = rng.normal(0.0, 0.02, size=(cfg.num_queries + 1, c))

    def norm(prefix):
        p[prefix + ".g"] = np.ones(c)
        p[prefix + ".b"] = np.zeros(c)

    def ffn(prefix):
        p[prefix + ".w1"] = _xavier(rng, c, f)
        p[prefix + ".b1"] = np.zeros(f)
        p[prefix + ".w2"] = _xavier(rng, f, c)
        p[prefix + ".b2"] = np.zeros(c)

    for i in range(cfg.enc_layers):
        pre = f"enc.{i}."
        norm(pre + "ln1")
        for k, v in _attn_params(rng, c).items():
            p[pre + "attn." + k] = v
        norm(pre + "ln2")
        ffn(pre + "ffn")
    for i in range(cfg.dec_layers):
        pre = f"dec.{i}."
        norm(pre + "ln1")
        for k, v in _attn_params(rng, c).items():
            p[pre + "self_attn." + k] = v
        norm(pre + "ln2")
        for k, v in _attn_params(rng, c).items():
            p[pre + "cross_attn." + k] = v
        norm(pre + "ln3")
        ffn(pre + "ffn")

    p["head.cls.w"] = _xavier(rng, c, cfg.num_classes)
    p["head.cls.b"] = np.zeros(cfg.num_classes)
    p["head.box.w1"] = _xavier(rng, c, c)
    p["head.box.b1"] = np.zeros(c)
    p["head.box.w2"] = _xavier(rng, c, c)
    p["head.box.b2"] = np.zeros(c)
    p["head.box.w3"] = _xavier(rng, c, 4)
    p["head.box.b3"] = np.zeros(4)
    return p


def bind_params(tape: ad.Tape, params: dict[str, np.ndarray],
                trainable: bool = True) -> dict[str, Tensor]:
    return {k: tape.leaf(v, requires_grad=trainable) for k, v in params.items()}


def patchify(images: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    """(B, H, W, 3) float images -> (B, N, patch_dim) row-major patch rows."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    b = images.shape[0]
    g, s = cfg.grid, cfg.patch_size
    x = images.reshape(b, g, s, g, s, 3)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * g, cfg.patch_dim)


def _norm(x, p, prefix):
    return ad.layer_norm(x) * p[prefix + ".g"] + p[prefix + ".b"]


def _mha(x_q, x_kv, p, prefix, num_heads: int):
    b, sq, c = x_q.shape
    skv = x_kv.shape[1]
    dh = c // num_heads

    def split(t, s):
        return ad.reshape(t, (b, s, num_heads, dh)).transpose((0, 2, 1, 3))

    q = split(ad.matmul(x_q, p[prefix + ".wq"]) + p[prefix + ".bq"], sq)
    k = split(ad.matmul(x_kv, p[prefix + ".wk"]) + p[prefix + ".bk"], skv)
    v = split(ad.matmul(x_kv, p[prefix + ".wv"]) + p[prefix + ".bv"], skv)
    att = ad.softmax(ad.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(dh)),
                     axis=-1)
    out = ad.matmul(att, v).transpose((0, 2, 1, 3)).reshape((b, sq, c))
    return ad.matmul(out, p[prefix + ".wo"]) + p[prefix + ".bo"]


def _ffn(x, p, prefix, drop):
    h = drop(ad.relu(ad.matmul(x, p[prefix + ".w1"]) + p[prefix + ".b1"]))
    return ad.matmul(h, p[prefix + ".w2"]) + p[prefix + ".b2"]


def _prepend(slot_vec: Tensor, seq: Tensor) -> Tensor:
    """Tile a C-vector to (B, 1, C) and concatenate at slot 0."""
    b = seq.shape[0]
    tile = ad.reshape(slot_vec, (1, 1, slot_vec.shape[-1])) * ad.Tensor(np.ones((b, 1, 1)))
    return ad.concat([tile, seq], axis=1)


def forward(cfg: DetectorConfig, p: dict[str, Tensor], images: np.ndarray, *,
            dropout_p: float = 0.0, mode: str = "eval",
            rng=None) -> ForwardPass:
    """Batched forward pass.

    Dropout (when mode='train' and dropout_p > 0) sits after every hidden
    ReLU: encoder/decoder feed-forward layers and the two hidden layers of
    the box head. rng is consumed sequentially, so a seed fixes every mask.
    """
    if mode == "train" and dropout_p > 0.0 and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    def drop(t):
        if dropout_p == 0.0 or mode == "eval":
            return t
        return ad.dropout(t, dropout_p, mode, rng)

    fp = ForwardPass()
    patches = ad.Tensor(patchify(images, cfg))
    tokens = ad.matmul(patches, p["backbone.w"]) + p["backbone.b"]

    x = _prepend(p["enc.domain_query"], tokens) + (p["enc.pos"] + p["enc.level"])
    fp.enc_states.append(x)
    for i in range(cfg.enc_layers):
        pre = f"enc.{i}."
        x = x + _mha(_norm(x, p, pre + "ln1"), _norm(x, p, pre + "ln1"), p,
                     pre + "attn", cfg.num_heads)
        x = x + _ffn(_norm(x, p, pre + "ln2"), p, pre + "ffn", drop)
        fp.enc_states.append(x)
    memory = x

    m = cfg.num_queries
    bsz = memory.shape[0]
    queries = ad.reshape(p["dec.queries"], (1, m, cfg.hidden_dim)) * ad.Tensor(np.ones((bsz, 1, 1)))
    q = _prepend(p["dec.domain_query"], queries) + p["dec.pos"]
    fp.dec_states.append(q)
    for i in range(cfg.dec_layers):
        pre = f"dec.{i}."
        h = _norm(q, p, pre + "ln1")
        q = q + _mha(h, h, p, pre + "self_attn", cfg.num_heads)
        q = q + _mha(_norm(q, p, pre + "ln2"), memory, p, pre + "cross_attn",
                     cfg.num_heads)
        q = q + _ffn(_norm(q, p, pre + "ln3"), p, pre + "ffn", drop)
        fp.dec_states.append(q)

    obj = q[:, 1:, :]  # detection heads never see the domain-query slot
    fp.logits = ad.matmul(obj, p["head.cls.w"]) + p["head.cls.b"]
    h = drop(ad.relu(ad.matmul(obj, p["head.box.w1"]) + p["head.box.b1"]))
    h = drop(ad.relu(ad.matmul(h, p["head.box.w2"]) + p["head.box.b2"]))
    raw = ad.sigmoid(ad.matmul(h, p["head.box.w3"]) + p["head.box.b3"])
    cx, cy, w, hgt = raw[:, :, 0], raw[:, :, 1], raw[:, :, 2], raw[:, :, 3]
    half_w, half_h = w * 0.5, hgt * 0.5
    corners = ad.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=-1)
    fp.boxes = ad.clip(corners, 0.0, 1.0)
    return fp


def run_detector(cfg: DetectorConfig, params: dict[str, np.ndarray],
                 images: np.ndarray, *, dropout_p: float = 0.0,
                 mode: str = "eval", rng=None) -> ForwardPass:
    """Inference-only forward: no tape, constant parameters."""
    bound = {k: ad.Tensor(v) for k, v in params.items()}
    return forward(cfg, bound, images, dropout_p=dropout_p, mode=mode, rng=rng)
