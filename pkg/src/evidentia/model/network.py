"""Desk-scale network: a small conv backbone feeding the asymmetry encoder
and a four-output evidential head."""
from dataclasses import asdict, dataclass, field

import numpy as np

from evidentia import bae, nig
from evidentia.diffcore import ops
from evidentia.diffcore.tape import Tensor
from evidentia.errors import ContractError, ShapeError
from evidentia.memory import MOMENTUM, PrototypeBank
from evidentia.seeding import rng_for


@dataclass
class ModelConfig:
    image_size: int = 32
    channels: tuple = (8, 16, 32)
    head_hidden: int = 32
    dropout: float = bae.DROPOUT
    lambda_kl: float = 0.01
    lambda_proto: float = 0.1
    momentum: float = MOMENTUM
    prior: nig.NigPrior = field(default_factory=nig.NigPrior)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if isinstance(self.prior, dict):
            self.prior = nig.NigPrior(**self.prior)
        if not self.channels or any(c <= 0 for c in self.channels) or self.head_hidden < 0:
            raise ContractError("model dimensions must be positive")
        if self.lambda_kl < 0 or self.lambda_proto < 0:
            raise ContractError("loss weights must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.feature_size < 2:
            raise ContractError("image too small for the backbone depth")

    @property
    def embed_dim(self):
        return self.channels[-1]

    @property
    def feature_size(self):
        s = self.image_size
        for _ in self.channels:
            s = (s + 2 - 3) // 2 + 1
        return s

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Model:
    """Parameters plus prototype bank; ``params`` is an ordered name -> Tensor dict."""

    def __init__(self, config, params, bank):
        self.config = config
        self.params = params
        self.bank = bank

    def parameter_list(self):
        return list(self.params.values())

    def is_backbone(self, name):
        return name.startswith("backbone.")

    def state(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state):
        for name, t in self.params.items():
            t.data = np.array(state[name], dtype=np.float64)


def init_model(config, seed):
    rng = rng_for(seed, "init")
    params = {}
    cin = 1
    for i, cout in enumerate(config.channels):
        std = np.sqrt(2.0 / (cin * 9))
        params[f"backbone.conv{i}.w"] = Tensor(rng.normal(0.0, std, size=(cout, cin, 3, 3)), requires_grad=True)
        params[f"backbone.conv{i}.b"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    c = config.embed_dim
    for name, t in bae.init_params(c, rng).items():
        params[f"bae.{name}"] = t
    width = c
    if config.head_hidden:
        bound = 1.0 / np.sqrt(c)
        params["head.hidden.w"] = Tensor(rng.uniform(-bound, bound, size=(config.head_hidden, c)), requires_grad=True)
        params["head.hidden.b"] = Tensor(np.zeros(config.head_hidden), requires_grad=True)
        width = config.head_hidden
    bound = 1.0 / np.sqrt(width)
    params["head.out.w"] = Tensor(rng.uniform(-bound, bound, size=(4, width)), requires_grad=True)
    # start the location at the prior's centre of the grade axis
    params["head.out.b"] = Tensor(np.array([config.prior.gamma0, 0.0, 0.0, 0.0]), requires_grad=True)
    for name, t in params.items():
        t.name = name
    return Model(config, params, PrototypeBank(c, momentum=config.momentum))


def backbone(model, x):
    """Stride-2 3x3 conv + GELU blocks: (B, 1, S, S) -> (B, C, S/8, S/8)."""
    for i in range(len(model.config.channels)):
        x = ops.conv2d(x, model.params[f"backbone.conv{i}.w"], model.params[f"backbone.conv{i}.b"],
                       stride=2, padding=1)
        x = ops.gelu(x)
    return x


def forward(model, images, training=False, rng=None):
    """Images (B, S, S) -> (NigParams, BaeEmbedding, AttentionPair).

    NigParams fields are tensors recorded on the active tape, if any.
    """
    images = np.asarray(images, dtype=np.float64)
    s = model.config.image_size
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3 or images.shape[1:] != (s, s):
        raise ShapeError("forward", images.shape, (None, s, s))
    if training and model.config.dropout > 0 and rng is None:
        raise ContractError("training-mode forward needs an rng for dropout")
    p = model.params
    feat = backbone(model, Tensor(images[:, None]))
    bae_params = {k[len("bae."):]: v for k, v in p.items() if k.startswith("bae.")}
    emb, att = bae.encode(feat, bae_params, training=training, rng=rng, dropout=model.config.dropout)
    x = emb.h
    if model.config.head_hidden:
        x = ops.gelu(ops.linear(x, p["head.hidden.w"], p["head.hidden.b"]))
    raw = ops.linear(x, p["head.out.w"], p["head.out.b"])
    return nig.activate(raw), emb, att
