"""Synthetic knee-like radiographs with a controllable severity signal.

Each image is a bright "bone" block split by a horizontal dark joint gap,
with a strip of dimmer soft tissue down either side. On the medial (left)
half the gap narrows linearly with a latent severity; the lateral (right)
half keeps a random, severity-independent gap. A small bright osteophyte
bump at the medial margin grows with severity. Because
the latent severity sits strictly inside its grade's rounding interval, the
grade of a clean image can be read back exactly from its medial gap width
(``inverse_grade``). Image quality varies: each image gets its own noise
level drawn from ``[noise_sigma, noise_sigma_max]``.
"""
import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from evidentia.errors import ContractError, MissingArtifact
from evidentia.seeding import derive_seed, rng_for

NUM_GRADES = 5
SPLITS = ("train", "val", "test")

# columns used to measure the medial gap; the osteophyte bump stays left of them
_MEASURE_COLS = slice(6, 14)
_OSTEO_COLS = (1, 2, 3)


@dataclass
class SyntheticSpec:
    size: int = 32
    gap_grade0: float = 8.0
    gap_grade4: float = 2.0
    lateral_gap: tuple = (5.0, 7.0)
    osteophyte_max: float = 0.6
    bone_intensity: tuple = (0.7, 1.0)
    joint_shift: float = 3.0
    severity_jitter: float = 0.45
    noise_sigma: float = 0.05
    noise_sigma_max: float = 0.5  # per-image sigma ~ U(noise_sigma, noise_sigma_max) when set
    tissue_margin: int = 4  # columns of soft tissue on each side of the bone
    tissue_level: float = 0.3  # soft-tissue intensity as a fraction of bone
    p_flip: float = 0.1
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    seed: int = 7

    def __post_init__(self):
        self.lateral_gap = tuple(float(v) for v in self.lateral_gap)
        self.bone_intensity = tuple(float(v) for v in self.bone_intensity)
        if not self.gap_grade0 > self.gap_grade4 > 0:
            raise ContractError("gap widths must strictly decrease with grade and stay positive")
        if not 0.0 <= self.p_flip < 0.5:
            raise ContractError(f"p_flip must lie in [0, 0.5), got {self.p_flip}")
        if not 0.0 <= self.severity_jitter < 0.5:
            raise ContractError("severity_jitter must lie in [0, 0.5)")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        if self.noise_sigma_max is not None and self.noise_sigma_max < self.noise_sigma:
            raise ContractError("noise_sigma_max must be >= noise_sigma")
        if not 0 <= self.tissue_margin < _MEASURE_COLS.start:
            raise ContractError(f"tissue_margin must lie in [0, {_MEASURE_COLS.start})")
        if not 0.0 <= self.tissue_level < 1.0:
            raise ContractError("tissue_level must lie in [0, 1)")
        if self.size < 16:
            raise ContractError("image size must be at least 16")
        top = self.size / 2 - self.joint_shift - self.gap_grade0 / 2 - self.gap_per_grade * self.severity_jitter
        if top < 2:
            raise ContractError("joint gap does not fit inside the image")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")

    @property
    def gap_per_grade(self):
        return (self.gap_grade0 - self.gap_grade4) / (NUM_GRADES - 1)

    def gap_width(self, severity):
        """Medial gap width for a latent severity (linear, decreasing)."""
        return self.gap_grade0 - self.gap_per_grade * np.asarray(severity, dtype=np.float64)

    def counts(self):
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}

    def to_dict(self):
        d = asdict(self)
        d["lateral_gap"] = list(self.lateral_gap)
        d["bone_intensity"] = list(self.bone_intensity)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Split:
    name: str
    images: np.ndarray  # (N, S, S)
    grades: np.ndarray  # observed labels, possibly flipped
    clean_grades: np.ndarray = None
    severity: np.ndarray = None
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.grades)

    def subset(self, index):
        index = np.asarray(index)
        pick = lambda a: None if a is None else a[index]
        return Split(self.name, self.images[index], self.grades[index], pick(self.clean_grades),
                     pick(self.severity), [self.ids[i] for i in index] if self.ids else [])


@dataclass
class Dataset:
    spec: SyntheticSpec
    splits: dict

    def __getitem__(self, name):
        return self.splits[name]


def _band_overlap(rows, lo, hi):
    """Length of [r, r+1) intersected with [lo, hi) for each pixel row r."""
    return np.clip(np.minimum(rows + 1.0, hi) - np.maximum(rows, lo), 0.0, 1.0)


def render(spec, severity, bone, center, lateral_gap):
    """Noise-free images for arrays of per-sample latent parameters."""
    n = len(severity)
    s = spec.size
    rows = np.arange(s, dtype=np.float64)[None, :]
    half = s // 2
    images = np.repeat(bone[:, None, None], s, axis=1).repeat(s, axis=2)

    med_w = spec.gap_width(severity)
    med_dark = _band_overlap(rows, (center - med_w / 2)[:, None], (center + med_w / 2)[:, None])
    lat_dark = _band_overlap(rows, (center - lateral_gap / 2)[:, None], (center + lateral_gap / 2)[:, None])
    images[:, :, :half] *= (1.0 - med_dark)[:, :, None]
    images[:, :, half:] *= (1.0 - lat_dark)[:, :, None]
    m = spec.tissue_margin
    if m > 0:
        tissue = spec.tissue_level * bone[:, None, None]
        images[:, :, :m] = tissue
        images[:, :, s - m:] = tissue

    # osteophyte: a small bright bump just above the medial gap at the image margin
    amp = spec.osteophyte_max * np.clip(severity, 0.0, NUM_GRADES - 1) / (NUM_GRADES - 1)
    peak = center - med_w / 2 - 1.5
    offsets = np.arange(-2, 3)
    for i in range(n):
        r0 = int(np.floor(peak[i]))
        for dr in offsets:
            r = r0 + dr
            if 0 <= r < s:
                w_row = np.exp(-0.5 * ((r + 0.5 - peak[i]) / 0.8) ** 2)
                for c in _OSTEO_COLS:
                    w_col = np.exp(-0.5 * ((c - _OSTEO_COLS[1]) / 0.8) ** 2)
                    images[i, r, c] += amp[i] * w_row * w_col
    return images


def _flip_labels(grades, p_flip, rng):
    flip = rng.random(len(grades)) < p_flip
    direction = np.where(rng.random(len(grades)) < 0.5, -1, 1)
    direction = np.where(grades == 0, 1, np.where(grades == NUM_GRADES - 1, -1, direction))
    return np.where(flip, grades + direction, grades)


def generate_split(spec, name, n, seed=None):
    seed = spec.seed if seed is None else seed
    rng = rng_for(seed, f"split:{name}")
    clean = np.tile(np.arange(NUM_GRADES), n // NUM_GRADES + 1)[:n]
    clean = clean[rng.permutation(n)]
    jitter = rng.uniform(-spec.severity_jitter, spec.severity_jitter, size=n)
    severity = clean + jitter
    bone = rng.uniform(*spec.bone_intensity, size=n)
    center = spec.size / 2 + rng.uniform(-spec.joint_shift, spec.joint_shift, size=n)
    lateral = rng.uniform(*spec.lateral_gap, size=n)
    images = render(spec, severity, bone, center, lateral)
    hi = spec.noise_sigma if spec.noise_sigma_max is None else spec.noise_sigma_max
    sigma = rng.uniform(spec.noise_sigma, hi, size=n)
    if hi > 0:
        images = images + sigma[:, None, None] * rng.normal(0.0, 1.0, size=images.shape)
    label_rng = rng_for(seed, f"labels:{name}")
    grades = _flip_labels(clean, spec.p_flip, label_rng)
    ids = [f"{name}-{i:06d}" for i in range(n)]
    return Split(name, images, grades.astype(np.int64), clean.astype(np.int64), severity, ids)


def generate_dataset(spec):
    """Deterministic train/val/test splits for ``spec``."""
    return Dataset(spec, {name: generate_split(spec, name, n) for name, n in spec.counts().items()})


def inverse_grade(spec, images):
    """Grade read from the medial gap width of clean images (the generator's inverse)."""
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    half = spec.size // 2
    bone = images[:, 0, half // 2]
    cols = images[:, :, _MEASURE_COLS]
    width = ((bone[:, None, None] - cols) / bone[:, None, None]).sum(axis=1).mean(axis=1)
    severity = (spec.gap_grade0 - width) / spec.gap_per_grade
    grades = np.clip(np.floor(severity + 0.5), 0, NUM_GRADES - 1).astype(np.int64)
    return int(grades[0]) if single else grades


# ---------------------------------------------------------------------------
# corruptions

CORRUPTIONS = {
    "gaussian-noise": (0.1, 0.2, 0.4),
    "blur": (3, 5, 7),
    "rotation": (45, 90, 135),
}


def _gaussian_kernel(size):
    sigma = 0.3 * ((size - 1) * 0.5 - 1) + 0.8
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def corrupt(images, kind, severity, seed=0):
    """Apply one corruption to an image or a batch of images (last two axes).

    ``severity`` 0 is the identity; other values must come from the grid in
    ``CORRUPTIONS``. Noise draws come from ``seed`` so results are repeatable.
    """
    if kind not in CORRUPTIONS:
        raise ContractError(f"unknown corruption kind {kind!r}; expected one of {sorted(CORRUPTIONS)}")
    images = np.asarray(images, dtype=np.float64)
    if severity == 0:
        return images.copy()
    if severity not in CORRUPTIONS[kind]:
        raise ContractError(f"severity {severity!r} not in grid {CORRUPTIONS[kind]} for {kind}")
    if kind == "gaussian-noise":
        rng = np.random.default_rng(derive_seed(seed, f"corrupt:noise:{severity}"))
        return images + rng.normal(0.0, severity, size=images.shape)
    if kind == "blur":
        k = _gaussian_kernel(int(severity))
        out = ndimage.convolve1d(images, k, axis=-1, mode="reflect")
        return ndimage.convolve1d(out, k, axis=-2, mode="reflect")
    # rotation, counter-clockwise in degrees
    if severity % 90 == 0:
        return np.rot90(images, k=int(severity // 90), axes=(-2, -1)).copy()
    axes = (images.ndim - 1, images.ndim - 2)
    return ndimage.rotate(images, severity, axes=axes, reshape=False, order=1, mode="nearest")


# ---------------------------------------------------------------------------
# on-disk format

_HEADER = struct.Struct("<II")


def write_image(path, image):
    image = np.asarray(image, dtype="<f8")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(h, w))
        fh.write(image.tobytes(order="C"))


def read_image(path):
    raw = Path(path).read_bytes()
    h, w = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=h * w)
    return data.reshape(h, w).astype(np.float64)


def save_split(split, root, spec):
    root = Path(root) / split.name
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "data.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "grade", "path"])
        for sid, grade, image in zip(split.ids, split.grades, split.images):
            rel = f"images/{sid}.bin"
            write_image(root / rel, image)
            writer.writerow([sid, int(grade), rel])
    meta = {
        "split": split.name,
        "seed": spec.seed,
        "count": len(split),
        "counts": spec.counts(),
        "grade_counts": np.bincount(split.grades, minlength=NUM_GRADES).tolist(),
        "spec": spec.to_dict(),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def save_dataset(dataset, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split in dataset.splits.values():
        save_split(split, root, dataset.spec)


def load_split(root, name):
    root = Path(root) / name
    if not (root / "data.csv").is_file():
        raise MissingArtifact(f"split {name!r} not found under {root.parent}")
    meta = json.loads((root / "meta.json").read_text())
    ids, grades, images = [], [], []
    with open(root / "data.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["id"])
            grades.append(int(row["grade"]))
            images.append(read_image(root / row["path"]))
    images = np.stack(images) if images else np.zeros((0, 0, 0))
    return Split(name, images, np.asarray(grades, dtype=np.int64), ids=ids), meta


def load_dataset(root, names=SPLITS):
    splits, spec = {}, None
    for name in names:
        split, meta = load_split(root, name)
        splits[name] = split
        spec = SyntheticSpec.from_dict(meta["spec"])
    return Dataset(spec, splits)
