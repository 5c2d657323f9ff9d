"""Checkpoint container.

Layout: 8-byte magic, little-endian uint32 format version, uint64 manifest
length, the UTF-8 JSON manifest, then the raw little-endian array chunks the
manifest indexes by offset (relative to the end of the manifest).
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evidentia.errors import ContractError, MissingArtifact
from evidentia.memory import PrototypeBank
from evidentia.model.network import Model, ModelConfig, init_model
from evidentia.model.training import TrainConfig

MAGIC = b"EVDCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<IQ")


@dataclass
class Checkpoint:
    params: dict
    bank: PrototypeBank
    model_config: ModelConfig
    train_config: TrainConfig
    history: list
    seed: int
    best_epoch: int
    cpu_seconds: float = field(default=None, compare=False)  # not serialized

    def model(self):
        """A fresh Model carrying these parameters (eval use; bank copied)."""
        m = init_model(self.model_config, self.seed)
        m.load_state(self.params)
        m.bank = self.bank.copy()
        return m


def save_checkpoint(ckpt, path):
    arrays = [(f"param.{k}", np.asarray(v, dtype="<f8")) for k, v in ckpt.params.items()]
    arrays.append(("bank.prototypes", np.asarray(ckpt.bank.prototypes, dtype="<f8")))
    arrays.append(("bank.counts", np.asarray(ckpt.bank.counts, dtype="<i8")))
    index, offset = [], 0
    for name, arr in arrays:
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    manifest = {
        "version": VERSION,
        "seed": ckpt.seed,
        "best_epoch": ckpt.best_epoch,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "bank_momentum": ckpt.bank.momentum,
        "history": ckpt.history,
        "arrays": index,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_PREFIX.pack(VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"checkpoint {path} not found")
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ContractError(f"{path} is not a checkpoint file")
    version, mlen = _PREFIX.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _PREFIX.size
    manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    if version != VERSION or manifest.get("version") != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    base = start + mlen
    arrays = {}
    for entry in manifest["arrays"]:
        lo = base + entry["offset"]
        arr = np.frombuffer(raw[lo:lo + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    params = {k[len("param."):]: v.astype(np.float64) for k, v in arrays.items() if k.startswith("param.")}
    bank = PrototypeBank.from_state(arrays["bank.prototypes"], arrays["bank.counts"], manifest["bank_momentum"])
    return Checkpoint(
        params=params,
        bank=bank,
        model_config=ModelConfig.from_dict(manifest["model_config"]),
        train_config=TrainConfig.from_dict(manifest["train_config"]),
        history=manifest["history"],
        seed=manifest["seed"],
        best_epoch=manifest["best_epoch"],
    )
