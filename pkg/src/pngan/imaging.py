"""Images, paired datasets, PNG I/O, patching, flips and fake/real mixing.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``. Networks take NCHW torch tensors; :func:`to_tensor` and
:func:`to_image` convert between the two.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np
import torch

__all__ = [
    "SOURCE_TAGS",
    "PairedDataset",
    "MixSpec",
    "check_image",
    "keyed_rng",
    "load_png",
    "save_png",
    "load_dataset",
    "save_dataset",
    "crop_patches",
    "augment_flip",
    "mix_datasets",
    "synthetic_scenes",
    "to_tensor",
    "to_image",
]

SOURCE_TAGS = ("real", "generated", "synthetic")

Pair = tuple  # (clean, noisy)


def keyed_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


@dataclass(frozen=True)
class PairedDataset:
    """Immutable list of ``(clean, noisy)`` image pairs sharing one source tag."""

    pairs: tuple = ()
    source: str = "real"
    names: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source!r}; expected one of {SOURCE_TAGS}")
        pairs = tuple((check_image(c, "clean"), check_image(n, "noisy")) for c, n in self.pairs)
        for i, (c, n) in enumerate(pairs):
            if c.shape != n.shape:
                label = self.names[i] if i < len(self.names) else str(i)
                raise ValueError(f"pair {label}: clean {c.shape} and noisy {n.shape} differ")
        names = tuple(self.names) or tuple(f"{i:05d}" for i in range(len(pairs)))
        if len(names) != len(pairs):
            raise ValueError("names and pairs have different lengths")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    @property
    def clean(self) -> list:
        return [c for c, _ in self.pairs]

    @property
    def noisy(self) -> list:
        return [n for _, n in self.pairs]


@dataclass(frozen=True)
class MixSpec:
    q: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.q >= 0:
            raise ValueError(f"mixing ratio q must be >= 0, got {self.q}")


def load_png(path: str | Path) -> np.ndarray:
    """Read an 8- or 16-bit RGB(A) PNG and scale it to ``[0, 1]``; alpha is dropped."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise OSError(f"cannot read image {path}")
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"{path}: expected an RGB image, got shape {arr.shape}")
    arr = arr[..., 2::-1]  # BGR(A) -> RGB
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return arr.astype(np.float64) / scale


def save_png(path: str | Path, img: np.ndarray, bits: int = 8) -> None:
    img = np.clip(check_image(img), 0.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bits == 8:
        arr = np.round(img * 255.0).astype(np.uint8)
    elif bits == 16:
        arr = np.round(img * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    if not cv2.imwrite(str(path), np.ascontiguousarray(arr[..., ::-1])):
        raise OSError(f"could not write {path}")


def load_dataset(root: str | Path, source: str = "real") -> PairedDataset:
    """Load ``<root>/clean/<name>.png`` paired with ``<root>/noisy/<name>.png``.

    Pairs are ordered lexicographically by name. If ``<root>/meta.json``
    exists it is attached as ``metadata``.
    """
    root = Path(root)
    clean_dir, noisy_dir = root / "clean", root / "noisy"
    clean = {p.stem: p for p in clean_dir.glob("*.png")} if clean_dir.is_dir() else {}
    noisy = {p.stem: p for p in noisy_dir.glob("*.png")} if noisy_dir.is_dir() else {}
    for orphan in sorted(set(clean) ^ set(noisy)):
        where = clean.get(orphan) or noisy.get(orphan)
        raise FileNotFoundError(f"orphan file without counterpart: {where}")
    names = sorted(clean)
    pairs = []
    for name in names:
        c, n = load_png(clean[name]), load_png(noisy[name])
        if c.shape != n.shape:
            raise ValueError(f"pair {name}: clean {c.shape} and noisy {n.shape} differ")
        pairs.append((c, n))
    meta_path = root / "meta.json"
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return PairedDataset(tuple(pairs), source, tuple(names), metadata)


def save_dataset(dataset: PairedDataset, root: str | Path, bits: int = 8) -> Path:
    """Write a dataset in the ``clean/`` + ``noisy/`` layout with a JSON sidecar."""
    root = Path(root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "noisy").mkdir(parents=True, exist_ok=True)
    for name, (c, n) in zip(dataset.names, dataset.pairs):
        save_png(root / "clean" / f"{name}.png", c, bits)
        save_png(root / "noisy" / f"{name}.png", n, bits)
    meta = {"source": dataset.source, "count": len(dataset), **dataset.metadata}
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return root


def crop_offsets(height: int, width: int, size: int, count: int, seed: int,
                 pair_index: int = 0) -> list[tuple[int, int]]:
    if size % 4:
        raise ValueError(f"patch size {size} must be divisible by 4")
    if size > min(height, width):
        raise ValueError(f"patch size {size} exceeds image dimensions {height}x{width}")
    offsets = []
    for k in range(count):
        rng = keyed_rng(seed, pair_index, k)
        offsets.append((int(rng.integers(0, height - size + 1)),
                        int(rng.integers(0, width - size + 1))))
    return offsets


def crop_patches(pair: Pair, size: int, count: int, seed: int,
                 pair_index: int = 0) -> list[Pair]:
    """Crop ``count`` aligned patches; offsets keyed by (seed, pair_index, k)."""
    clean, noisy = pair
    if clean.shape != noisy.shape:
        raise ValueError(f"pair shapes differ: {clean.shape} vs {noisy.shape}")
    h, w = clean.shape[:2]
    return [(clean[y:y + size, x:x + size], noisy[y:y + size, x:x + size])
            for y, x in crop_offsets(h, w, size, count, seed, pair_index)]


def augment_flip(pair: Pair, horizontal: bool = False, vertical: bool = False) -> Pair:
    out = []
    for img in pair:
        if horizontal:
            img = img[:, ::-1]
        if vertical:
            img = img[::-1]
        out.append(np.ascontiguousarray(img))
    return tuple(out)


def mix_datasets(real: PairedDataset, generated: PairedDataset, spec: MixSpec) -> PairedDataset:
    """All real pairs plus ``ceil(q * |real|)`` generated pairs drawn without replacement.

    The result carries the ``real`` tag; per-pair provenance is kept in
    ``metadata["sources"]``.
    """
    # q is read as the decimal it prints as (0.6 * 100 is 60.00000000000001 in floats)
    need = math.ceil(Fraction(repr(float(spec.q))) * len(real))
    if need > len(generated):
        raise ValueError(
            f"q={spec.q} needs {need} generated pairs but only {len(generated)} are available")
    chosen = sorted(keyed_rng(spec.seed).choice(len(generated), size=need, replace=False).tolist())
    pairs = real.pairs + tuple(generated.pairs[i] for i in chosen)
    names = tuple(f"real-{n}" for n in real.names) + tuple(
        f"generated-{generated.names[i]}" for i in chosen)
    sources = [real.source] * len(real) + [generated.source] * need
    return PairedDataset(pairs, "real", names, {"q": spec.q, "seed": spec.seed, "sources": sources})


def synthetic_scenes(count: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Procedural clean images: smooth colour gradients, blobs, edges and stripes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = []
    for i in range(count):
        rng = keyed_rng(seed, i)
        img = (rng.uniform(0.2, 0.8, 3)
               + rng.uniform(-0.3, 0.3, 3) * xx[..., None]
               + rng.uniform(-0.3, 0.3, 3) * yy[..., None])
        for _ in range(rng.integers(2, 6)):
            cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.35)
            colour = rng.uniform(0.0, 1.0, 3)
            if rng.random() < 0.5:
                mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
            else:
                mask = (np.abs(yy - cy) < r * rng.uniform(0.3, 1.0)) & (np.abs(xx - cx) < r)
            alpha = rng.uniform(0.5, 1.0)
            img = np.where(mask[..., None], (1 - alpha) * img + alpha * colour, img)
        if rng.random() < 0.4:
            freq, phase = rng.uniform(4, 16), rng.uniform(0, 2 * np.pi)
            theta = rng.uniform(0, np.pi)
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
            img = img * (0.75 + 0.25 * stripes[..., None])
        out.append(np.clip(img, 0.0, 1.0))
    return out


def to_tensor(images: np.ndarray | Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """``(H, W, 3)`` array or list of them -> ``(N, 3, H, W)`` tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_image(tensor: torch.Tensor) -> np.ndarray | list:
    arr = tensor.detach().cpu().double().numpy()
    if arr.ndim == 3:
        return arr.transpose(1, 2, 0)
    return [a.transpose(1, 2, 0) for a in arr]


def iter_batches(items: Iterable, size: int):
    batch = []
    for item in items:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch
