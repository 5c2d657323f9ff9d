"""Bilateral asymmetry encoder: two spatial-softmax attention branches over a
feature map, attention pooling, the absolute descriptor difference, and a
fusion MLP producing one embedding per image.
"""
from dataclasses import dataclass

import numpy as np

from evidentia.diffcore import ops
from evidentia.diffcore.tape import Tensor, as_tensor
from evidentia.errors import ShapeError

DROPOUT = 0.1


@dataclass
class AttentionPair:
    alpha_m: Tensor  # (B, 1, H, W)
    alpha_lat: Tensor
    logits_m: Tensor
    logits_lat: Tensor


@dataclass
class BaeEmbedding:
    z_m: Tensor  # (B, C)
    z_lat: Tensor
    f_asym: Tensor
    h: Tensor


def _check_feature_map(f):
    if f.ndim != 4:
        raise ShapeError("feature_map", f.shape, detail="expected (B, C, H, W)")
    _, c, h, w = f.shape
    if c < 1 or h * w < 2:
        raise ShapeError("feature_map", f.shape, detail="need C >= 1 and H*W >= 2")
    if not np.all(np.isfinite(f.data)):
        raise ValueError("feature map contains non-finite values")


def _branch(f, weight):
    bsz, c, h, w = f.shape
    weight = as_tensor(weight)
    if weight.shape not in ((c,), (1, c, 1, 1)):
        raise ShapeError("attention_maps", f.shape, weight.shape, detail="weight length must equal C")
    cols = ops.transpose(ops.reshape(f, (bsz, c, h * w)), (0, 2, 1))  # (B, HW, C)
    logits = ops.reshape(ops.matmul(cols, ops.reshape(weight, (c, 1))), (bsz, h * w))
    alpha = ops.softmax(logits, axis=-1)
    return ops.reshape(alpha, (bsz, 1, h, w)), ops.reshape(logits, (bsz, 1, h, w))


def attention_maps(f, weights_m, weights_lat):
    """Bias-free 1x1 projections to one logit per location, softmaxed over H*W."""
    f = as_tensor(f)
    _check_feature_map(f)
    alpha_m, logits_m = _branch(f, weights_m)
    alpha_lat, logits_lat = _branch(f, weights_lat)
    return AttentionPair(alpha_m, alpha_lat, logits_m, logits_lat)


def _pool(f, alpha):
    bsz, c, h, w = f.shape
    if alpha.shape != (bsz, 1, h, w):
        raise ShapeError("pool_and_asym", f.shape, alpha.shape)
    weights = ops.reshape(alpha, (bsz, 1, h * w))
    cols = ops.transpose(ops.reshape(f, (bsz, c, h * w)), (0, 2, 1))
    return ops.reshape(ops.matmul(weights, cols), (bsz, c))


def pool_and_asym(f, att):
    """Attention-weighted sums of feature columns and their absolute difference."""
    f = as_tensor(f)
    z_m = _pool(f, as_tensor(att.alpha_m))
    z_lat = _pool(f, as_tensor(att.alpha_lat))
    return z_m, z_lat, ops.abs(z_m - z_lat)


def fuse(z_m, z_lat, f_asym, params, training=False, rng=None, dropout=DROPOUT):
    """Linear(3C -> C), LayerNorm, GELU, then dropout in training mode only."""
    z_m, z_lat, f_asym = as_tensor(z_m), as_tensor(z_lat), as_tensor(f_asym)
    if not (z_m.shape == z_lat.shape == f_asym.shape) or z_m.ndim != 2:
        raise ShapeError("fuse", z_m.shape, z_lat.shape, f_asym.shape)
    c = z_m.shape[1]
    if params["fuse_w"].shape != (c, 3 * c):
        raise ShapeError("fuse", z_m.shape, params["fuse_w"].shape, detail="fusion weight must be (C, 3C)")
    x = ops.concat([z_m, z_lat, f_asym], axis=-1)
    x = ops.linear(x, params["fuse_w"], params["fuse_b"])
    x = ops.layer_norm(x, params["ln_g"], params["ln_b"])
    x = ops.gelu(x)
    if training:
        x = ops.dropout(x, dropout, rng, training=True)
    return x


def init_params(channels, rng):
    """Fresh encoder parameters for a C-channel feature map."""
    c = channels
    bound = 1.0 / np.sqrt(3 * c)
    return {
        "w_m": Tensor(rng.normal(0.0, 0.5, size=c), requires_grad=True, name="w_m"),
        "w_lat": Tensor(rng.normal(0.0, 0.5, size=c), requires_grad=True, name="w_lat"),
        "fuse_w": Tensor(rng.uniform(-bound, bound, size=(c, 3 * c)), requires_grad=True, name="fuse_w"),
        "fuse_b": Tensor(np.zeros(c), requires_grad=True, name="fuse_b"),
        "ln_g": Tensor(np.ones(c), requires_grad=True, name="ln_g"),
        "ln_b": Tensor(np.zeros(c), requires_grad=True, name="ln_b"),
    }


def encode(f, params, training=False, rng=None, dropout=DROPOUT):
    """Full encoder pass; returns ``(BaeEmbedding, AttentionPair)``."""
    att = attention_maps(f, params["w_m"], params["w_lat"])
    z_m, z_lat, f_asym = pool_and_asym(f, att)
    h = fuse(z_m, z_lat, f_asym, params, training=training, rng=rng, dropout=dropout)
    return BaeEmbedding(z_m, z_lat, f_asym, h), att


def asymmetry_index(att):
    """Left-half mass of the medial map minus left-half mass of the lateral map."""
    a_m = np.asarray(att.alpha_m.data if isinstance(att.alpha_m, Tensor) else att.alpha_m)
    a_l = np.asarray(att.alpha_lat.data if isinstance(att.alpha_lat, Tensor) else att.alpha_lat)
    if a_m.shape != a_l.shape or a_m.ndim != 4:
        raise ShapeError("asymmetry_index", a_m.shape, a_l.shape)
    half = a_m.shape[-1] // 2
    left_m = a_m[..., :half].sum(axis=(1, 2, 3)) / a_m.sum(axis=(1, 2, 3))
    left_l = a_l[..., :half].sum(axis=(1, 2, 3)) / a_l.sum(axis=(1, 2, 3))
    return left_m - left_l
