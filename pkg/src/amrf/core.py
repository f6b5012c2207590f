"""Raster types, image/mask I/O, dataset manifests and seed derivation.

Images are ``(height, width, 3)`` uint8 arrays and masks are ``(height, width)``
bool arrays. Both are treated as immutable once produced; every operation in
the package returns new arrays.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DimensionMismatch, NonBinaryValues

FACTORIES = ("F1", "F2")
SPLITS = ("train", "val", "test")

_MASK64 = (1 << 64) - 1


def check_image(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DimensionMismatch(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise DimensionMismatch("image must be at least 1x1")
    return image


def check_mask(mask: np.ndarray, like: Optional[np.ndarray] = None) -> np.ndarray:
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise DimensionMismatch(f"expected (H, W) bool mask, got {mask.shape} {mask.dtype}")
    if like is not None and mask.shape != like.shape[:2]:
        raise DimensionMismatch(f"mask {mask.shape} does not match image {like.shape[:2]}")
    return mask


def to_gray(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma as float64."""
    rgb = image.astype(np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _open(path) -> Image.Image:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as RGB; grayscale and palette files are promoted."""
    img = _open(path)
    if img.mode not in ("RGB", "RGBA", "L", "LA", "P", "1"):
        raise DecodeError(f"{path}: unsupported mode {img.mode!r} (8-bit only)")
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.array(img, dtype=np.uint8)


def load_mask(path) -> np.ndarray:
    """Read a strict 0/255 single-channel mask."""
    img = _open(path)
    if img.mode == "1":
        return np.array(img, dtype=bool)
    if img.mode != "L":
        raise DecodeError(f"{path}: mask must be single-channel 8-bit, got {img.mode!r}")
    data = np.array(img, dtype=np.uint8)
    bad = (data != 0) & (data != 255)
    if bad.any():
        value = int(data[bad][0])
        raise NonBinaryValues(f"{path}: mask contains value {value}")
    return data == 255


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def save_image(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, _png_bytes(check_image(image), "RGB"))


def save_mask(path, mask: np.ndarray) -> None:
    check_mask(mask)
    atomic_write_bytes(path, _png_bytes(mask.astype(np.uint8) * 255, "L"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------

def derive_seed(global_seed: int, sample_id: str) -> int:
    """Mix a global seed and a sample id into an unsigned 64-bit seed."""
    digest = hashlib.blake2b(
        struct.pack("<Q", global_seed & _MASK64) + sample_id.encode("utf-8"),
        digest_size=8,
        person=b"amrf-seed",
    ).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path
    mask_path: Optional[Path]
    factory: str
    split: str

    def __post_init__(self):
        if self.factory not in FACTORIES:
            raise ValueError(f"{self.id}: factory must be one of {FACTORIES}, got {self.factory!r}")
        if self.split not in SPLITS:
            raise ValueError(f"{self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if self.split in ("train", "val") and self.mask_path is None:
            raise ValueError(f"{self.id}: {self.split} records need a mask")

    def to_json(self, base: Optional[Path] = None) -> dict:
        def rel(p):
            if p is None:
                return None
            if base is not None:
                try:
                    return Path(p).relative_to(base).as_posix()
                except ValueError:
                    pass
            return Path(p).as_posix()

        return {
            "id": self.id,
            "image": rel(self.image_path),
            "mask": rel(self.mask_path),
            "factory": self.factory,
            "split": self.split,
        }


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple

    def __post_init__(self):
        if not self.records:
            raise ValueError(f"manifest {self.name!r} is empty")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError(f"manifest {self.name!r} has duplicate ids")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def check_files(self) -> None:
        for r in self.records:
            for p in (r.image_path, r.mask_path):
                if p is not None and not Path(p).exists():
                    raise FileNotFoundError(f"{self.name}/{r.id}: {p}")

    def to_jsonl(self, base: Optional[Path] = None) -> str:
        return "".join(json.dumps(r.to_json(base)) + "\n" for r in self.records)

    def save(self, path) -> None:
        path = Path(path)
        atomic_write_text(path, self.to_jsonl(path.parent.resolve()))


def load_manifest(path, name: Optional[str] = None, check: bool = True) -> DatasetManifest:
    """Read a JSON Lines manifest. Relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent.resolve()
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            extra = set(row) - {"id", "image", "mask", "factory", "split"}
            if extra:
                raise ValueError(f"{path}:{lineno}: unexpected fields {sorted(extra)}")
            mask = row.get("mask")
            records.append(
                SampleRecord(
                    id=str(row["id"]),
                    image_path=base / row["image"],
                    mask_path=None if mask is None else base / mask,
                    factory=row["factory"],
                    split=row["split"],
                )
            )
    if name is None:
        # A bare "manifest.jsonl" is named after its directory.
        name = path.parent.resolve().name if path.stem == "manifest" else path.stem
    manifest = DatasetManifest(name=name, records=tuple(records))
    if check:
        manifest.check_files()
    return manifest


# ---------------------------------------------------------------------------
# Loaded samples and parallel helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    """A decoded record: the unit that segmenters and the evaluator consume."""

    id: str
    image: np.ndarray
    mask: Optional[np.ndarray] = None
    factory: Optional[str] = None


def load_sample(record: SampleRecord) -> Sample:
    image = load_image(record.image_path)
    mask = None
    if record.mask_path is not None:
        mask = check_mask(load_mask(record.mask_path), like=image)
    return Sample(record.id, image, mask, record.factory)


def load_samples(manifest: Iterable[SampleRecord]) -> list:
    return [load_sample(r) for r in manifest]


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map; ``jobs > 1`` fans out to worker processes."""
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def default_jobs() -> int:
    return os.cpu_count() or 1
