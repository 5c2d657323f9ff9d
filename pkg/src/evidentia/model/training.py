"""Training loop, optimizer, schedule, and batched prediction."""
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from evidentia import nig
from evidentia.diffcore.tape import Tape
from evidentia.errors import ContractError, TrainingAborted
from evidentia.model.network import forward, init_model
from evidentia.seeding import rng_for
from evidentia.trust.ordinal import qwk
from evidentia.trust.records import NUM_GRADES, RecordSet

EVAL_BATCH = 250


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    backbone_lr_ratio: float = 0.1
    weight_decay: float = 1e-3
    restart_period: int = 20
    clip_norm: float = 1.0
    seed: int = 7
    loss_mode: str = "evidence"

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ContractError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if self.loss_mode not in nig.LOSS_MODES:
            raise ContractError(f"loss_mode must be one of {nig.LOSS_MODES}")
        if self.restart_period <= 0:
            raise ContractError("restart_period must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params, lrs, weight_decay, decay_mask, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lrs = lrs
        self.weight_decay = weight_decay
        self.decay_mask = decay_mask
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads, scale=1.0):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[i]
            lr = self.lrs[i] * scale
            if self.decay_mask[i]:
                p.data *= 1.0 - lr * self.weight_decay
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data -= lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def cosine_restart_factor(progress, period):
    """Multiplier at fractional epoch ``progress`` for warm restarts every ``period`` epochs."""
    t = progress % period
    return 0.5 * (1.0 + math.cos(math.pi * t / period))


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        grads = [None if g is None else g * factor for g in grads]
    return grads, total


def _decays(name):
    # no decay on biases, LayerNorm affine terms, or the attention projections
    return name.endswith(".w") or name.endswith("fuse_w")


def loss_terms(model, images, labels, mode, rng=None, training=True):
    """Forward pass plus the batch-mean loss decomposition.

    Returns a dict with tensors ``total`` and ``nll`` and weighted terms
    ``kl`` and ``align`` (tensors or 0.0), plus the embedding batch.
    """
    cfg = model.config
    params, emb, _ = forward(model, images, training=training, rng=rng)
    y = labels.astype(np.float64)
    nll = nig.nll(params, y).mean()
    total = nll
    kl = 0.0
    if cfg.lambda_kl > 0:
        kl = cfg.lambda_kl * nig.regularizer(params, y, cfg.prior, mode).mean()
        total = total + kl
    align = 0.0
    if cfg.lambda_proto > 0:
        a, used = model.bank.align_loss_batch(emb.h, labels)
        if used:
            align = cfg.lambda_proto * a
            total = total + align
    return {"total": total, "nll": nll, "kl": kl, "align": align, "h": emb.h}


def _value(t):
    return float(t.data) if hasattr(t, "data") else float(t)


def train(model_config, train_config, train_split, val_split, log=None):
    """Fit a fresh model and return the checkpoint with the best validation QWK.

    Only the train and validation splits are accepted; the test split is
    never passed in.
    """
    from evidentia.model.checkpoint import Checkpoint

    if len(train_split) == 0 or len(val_split) == 0:
        raise ContractError("train and validation splits must be nonempty")
    cfg, tc = model_config, train_config
    model = init_model(cfg, tc.seed)
    names = list(model.params)
    plist = [model.params[n] for n in names]
    lrs = [tc.lr * (tc.backbone_lr_ratio if model.is_backbone(n) else 1.0) for n in names]
    opt = AdamW(plist, lrs, tc.weight_decay, [_decays(n) for n in names])
    shuffle_rng = rng_for(tc.seed, "shuffle")
    dropout_rng = rng_for(tc.seed, "dropout")

    n = len(train_split)
    steps = math.ceil(n / tc.batch_size)
    history = []
    best = None
    start = time.process_time()
    for epoch in range(tc.epochs):
        order = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "nll": 0.0, "kl": 0.0, "align": 0.0}
        lr_scale = 1.0
        for step in range(steps):
            idx = order[step * tc.batch_size:(step + 1) * tc.batch_size]
            x, y = train_split.images[idx], train_split.grades[idx]
            lr_scale = cosine_restart_factor(epoch + step / steps, tc.restart_period)
            with Tape() as tape:
                terms = loss_terms(model, x, y, tc.loss_mode, rng=dropout_rng, training=True)
            for key in ("nll", "kl", "align", "total"):
                v = _value(terms[key])
                if not math.isfinite(v):
                    raise TrainingAborted(key, epoch, step, v)
                sums[key] += v * len(idx)
            grads = tape.backward(terms["total"])
            glist, _ = clip_grad_norm([grads.get(p) for p in plist], tc.clip_norm)
            opt.step(glist, scale=lr_scale)
            model.bank.update_batch(terms["h"].data, y)

        val = predict_arrays(model, val_split.images)
        val_qwk = qwk(val_split.grades, val["grade"])
        row = {
            "epoch": epoch + 1,
            "lr": tc.lr * lr_scale,
            **{k: v / n for k, v in sums.items()},
            "val_qwk": val_qwk,
            "val_acc": float(np.mean(val["grade"] == val_split.grades)),
        }
        history.append(row)
        if best is None or val_qwk > best[0]:
            best = (val_qwk, epoch + 1, model.state(), model.bank.copy())
        if log is not None:
            log(row)

    _, best_epoch, state, bank = best
    return Checkpoint(
        params=state,
        bank=bank,
        model_config=cfg,
        train_config=tc,
        history=history,
        seed=tc.seed,
        best_epoch=best_epoch,
        cpu_seconds=time.process_time() - start,
    )


def grade_from_gamma(gamma):
    """Round half up, then clamp onto the grade range."""
    return np.clip(np.floor(np.asarray(gamma) + 0.5), 0, NUM_GRADES - 1).astype(np.int64)


def predict_arrays(model, images, batch=EVAL_BATCH):
    """Evaluation-mode predictions as a dict of per-sample arrays."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    chunks = []
    for lo in range(0, len(images), batch):
        p, _, _ = forward(model, images[lo:lo + batch], training=False)
        chunks.append(p.numpy())
    cat = lambda f: np.concatenate([getattr(c, f) for c in chunks]) if chunks else np.zeros(0)
    p = nig.NigParams(cat("gamma"), cat("nu"), cat("alpha"), cat("beta"))
    if len(p.gamma) == 0:
        return {k: np.zeros(0) for k in ("gamma", "nu", "alpha", "beta", "grade", "epistemic", "aleatoric", "prob_oa")}
    unc = nig.uncertainty(p)
    return {
        "gamma": p.gamma,
        "nu": p.nu,
        "alpha": p.alpha,
        "beta": p.beta,
        "grade": grade_from_gamma(p.gamma),
        "epistemic": np.atleast_1d(unc.epistemic),
        "aleatoric": np.atleast_1d(unc.aleatoric),
        "prob_oa": np.atleast_1d(nig.prob_grade_geq(p, nig.OA_THRESHOLD)),
    }


def attention_arrays(model, images, batch=EVAL_BATCH):
    """Evaluation-mode attention maps, each (N, H, W)."""
    images = np.asarray(images, dtype=np.float64)
    ms, ls = [], []
    for lo in range(0, len(images), batch):
        _, _, att = forward(model, images[lo:lo + batch], training=False)
        ms.append(att.alpha_m.data[:, 0])
        ls.append(att.alpha_lat.data[:, 0])
    return np.concatenate(ms), np.concatenate(ls)


def predict(checkpoint, images):
    """EvalRecord fields (minus y_true) for an image or batch of images."""
    return predict_arrays(checkpoint.model(), images)


def records_for(checkpoint, images, labels):
    out = predict(checkpoint, images)
    return RecordSet(labels, out["gamma"], out["grade"], out["epistemic"], out["aleatoric"], out["prob_oa"])
