"""Class-wise prototype memory with moving-average updates."""
import numpy as np

from evidentia.diffcore import ops
from evidentia.diffcore.tape import Tensor, as_tensor
from evidentia.errors import ContractError

NUM_GRADES = 5
MOMENTUM = 0.99


class PrototypeBank:
    """K prototype vectors of dimension C, each updated as an EMA of embeddings.

    A class's first update copies the embedding; later updates blend with
    ``momentum`` weight on the stored prototype.
    """

    def __init__(self, dim, num_classes=NUM_GRADES, momentum=MOMENTUM):
        if not 0.0 < momentum <= 1.0:
            raise ContractError(f"momentum must lie in (0, 1], got {momentum}")
        self.dim = dim
        self.num_classes = num_classes
        self.momentum = float(momentum)
        self.prototypes = np.zeros((num_classes, dim))
        self.counts = np.zeros(num_classes, dtype=np.int64)

    @property
    def initialized(self):
        return self.counts > 0

    def _check_label(self, k):
        if not (isinstance(k, (int, np.integer)) and 0 <= k < self.num_classes):
            raise ContractError(f"label {k!r} outside 0..{self.num_classes - 1}")

    def update(self, h, k):
        self._check_label(k)
        h = np.asarray(h.data if isinstance(h, Tensor) else h, dtype=np.float64)
        if h.shape != (self.dim,) or not np.all(np.isfinite(h)):
            raise ContractError(f"embedding must be a finite vector of length {self.dim}")
        if self.counts[k] == 0:
            self.prototypes[k] = h
        else:
            m = self.momentum
            self.prototypes[k] = m * self.prototypes[k] + (1.0 - m) * h
        self.counts[k] += 1
        return self

    def update_batch(self, embeddings, labels):
        """Sequential updates in batch order."""
        emb = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings)
        for h, k in zip(emb, labels):
            self.update(h, int(k))
        return self

    def align_loss(self, h, k):
        """1 - cos(h, prototype_k), with the prototype held constant.

        Returns ``(loss, used)``; ``used`` is False, and the loss 0, when class
        k has no prototype yet.
        """
        self._check_label(k)
        if self.counts[k] == 0:
            return 0.0, False
        lifted = isinstance(h, Tensor)
        h = as_tensor(h)
        proto = self.prototypes[k]
        cos = ops.sum(h * proto) / (ops.sqrt(ops.sum(h * h)) * np.linalg.norm(proto))
        loss = 1.0 - cos
        return (loss if lifted else float(loss.data)), True

    def align_loss_batch(self, h, labels):
        """Mean alignment loss over the rows whose class has a prototype.

        Returns ``(loss, n_used)``; the loss is 0.0 when no row qualifies.
        """
        h = as_tensor(h)
        labels = np.asarray(labels, dtype=np.int64)
        rows = np.flatnonzero(self.counts[labels] > 0)
        if rows.size == 0:
            return 0.0, 0
        sel = ops.getitem(h, rows)
        protos = self.prototypes[labels[rows]]
        proto_norm = np.linalg.norm(protos, axis=1)
        dots = ops.sum(sel * protos, axis=1)
        norms = ops.sqrt(ops.sum(sel * sel, axis=1))
        cos = dots / (norms * proto_norm)
        return ops.mean(1.0 - cos), int(rows.size)

    def nearest_prototype(self, h):
        """(class, cosine similarity) of the most similar initialized prototype."""
        if not np.any(self.initialized):
            raise ContractError("nearest_prototype on an empty bank")
        h = np.asarray(h.data if isinstance(h, Tensor) else h, dtype=np.float64)
        best_k, best_sim = -1, -np.inf
        hn = np.linalg.norm(h)
        for k in np.flatnonzero(self.initialized):
            p = self.prototypes[k]
            sim = float(h @ p / (hn * np.linalg.norm(p)))
            if sim > best_sim:
                best_k, best_sim = int(k), sim
        return best_k, best_sim

    def copy(self):
        out = PrototypeBank(self.dim, self.num_classes, self.momentum)
        out.prototypes = self.prototypes.copy()
        out.counts = self.counts.copy()
        return out

    def state(self):
        return {"prototypes": self.prototypes.copy(), "counts": self.counts.copy(),
                "momentum": self.momentum}

    @classmethod
    def from_state(cls, prototypes, counts, momentum):
        prototypes = np.asarray(prototypes, dtype=np.float64)
        bank = cls(prototypes.shape[1], prototypes.shape[0], momentum)
        bank.prototypes = prototypes.copy()
        bank.counts = np.asarray(counts, dtype=np.int64).copy()
        return bank
