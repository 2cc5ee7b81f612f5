"""Image/mask files, datasets on disk, and training augmentations.

Layout of a dataset root::

    root/images/<stem>.png   8-bit RGB
    root/masks/<stem>.png    8-bit grayscale, foreground >= 128
    root/manifest.txt        optional, "image<TAB>mask" per line, relative to root
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import resize_array

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
MANIFEST = "manifest.txt"


class DataFormatError(ValueError):
    """A file exists but cannot be used (corrupt, wrong mode, non-binary...)."""


@dataclass
class Sample:
    image: np.ndarray  # (1, 3, H, W) float64 in [0, 1]
    mask: np.ndarray  # (1, 1, H, W) float64 in {0, 1}
    id: str = ""

    def __post_init__(self):
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise DataFormatError(f"sample {self.id!r}: image {self.image.shape} and mask {self.mask.shape} differ in size")

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


# ------------------------------------------------------------------ file I/O


def _open(path: Path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DataFormatError(f"cannot decode image {path}: {e}") from e
    return img


def read_gray(path) -> np.ndarray:
    """8-bit single-channel image as a uint8 (H, W) array."""
    img = _open(path)
    if img.mode == "1":
        img = img.convert("L")
    if img.mode != "L":
        raise DataFormatError(f"{path}: expected an 8-bit grayscale image, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def read_rgb(path) -> np.ndarray:
    img = _open(path)
    if img.mode == "L":
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise DataFormatError(f"{path}: expected an 8-bit RGB image, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def to_uint8(a: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_gray(path, a: np.ndarray) -> None:
    """Write an (H, W) array (uint8, or float in [0, 1]) as grayscale PNG/PGM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = a if a.dtype == np.uint8 else to_uint8(a)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(arr).save(path, format=fmt)


def write_rgb(path, a: np.ndarray) -> None:
    """Write an (H, W, 3) array as RGB PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = a if a.dtype == np.uint8 else to_uint8(a)
    Image.fromarray(arr).save(path, format="PNG")


def load_pair(image_path, mask_path) -> Sample:
    img = read_rgb(image_path).astype(np.float64) / 255.0
    mask = (read_gray(mask_path) >= 128).astype(np.float64)
    if img.shape[:2] != mask.shape:
        raise DataFormatError(f"{image_path} is {img.shape[:2]} but mask {mask_path} is {mask.shape}")
    return Sample(img.transpose(2, 0, 1)[None].copy(), mask[None, None], Path(image_path).stem)


# ------------------------------------------------------------------ datasets


def _stems(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise FileNotFoundError(f"no such directory: {folder}")
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def match_by_stem(a_dir, b_dir) -> list[tuple[str, Path, Path]]:
    """Pair files in two folders by stem; any unmatched name is an error."""
    a, b = _stems(Path(a_dir)), _stems(Path(b_dir))
    only_a = sorted(set(a) - set(b))
    only_b = sorted(set(b) - set(a))
    if only_a or only_b:
        msg = []
        if only_a:
            msg.append(f"missing in {b_dir}: {', '.join(only_a)}")
        if only_b:
            msg.append(f"missing in {a_dir}: {', '.join(only_b)}")
        raise FileNotFoundError("; ".join(msg))
    return [(s, a[s], b[s]) for s in sorted(a)]


def read_manifest(root) -> list[tuple[Path, Path]]:
    root = Path(root)
    pairs = []
    for n, line in enumerate((root / MANIFEST).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{root / MANIFEST}:{n}: expected 2 tab-separated paths")
        pairs.append((root / parts[0], root / parts[1]))
    return pairs


def write_manifest(root, pairs: list[tuple[str, str]]) -> None:
    Path(root, MANIFEST).write_text("".join(f"{a}\t{b}\n" for a, b in pairs))


def dataset_pairs(root) -> list[tuple[Path, Path]]:
    root = Path(root)
    if (root / MANIFEST).is_file():
        pairs = read_manifest(root)
        for a, b in pairs:
            for p in (a, b):
                if not p.is_file():
                    raise FileNotFoundError(f"manifest references missing file {p}")
        return pairs
    return [(a, b) for _, a, b in match_by_stem(root / "images", root / "masks")]


def load_dataset(root) -> list[Sample]:
    return [load_pair(a, b) for a, b in dataset_pairs(root)]


# -------------------------------------------------------------- augmentation


def _resize_sample(s: Sample, h: int, w: int) -> Sample:
    img = np.clip(resize_array(s.image, h, w), 0.0, 1.0)
    mask = (resize_array(s.mask, h, w) >= 0.5).astype(np.float64)
    return Sample(img, mask, s.id)


def hflip(s: Sample) -> Sample:
    return Sample(s.image[..., ::-1].copy(), s.mask[..., ::-1].copy(), s.id)


def random_crop(s: Sample, ratio: float, rng: np.random.Generator) -> Sample:
    """Crop an integer-aligned window of ``ratio`` times the size, resize back."""
    if not 0.5 < ratio <= 1.0:
        raise ValueError(f"crop ratio must be in (0.5, 1], got {ratio}")
    h, w = s.size
    ch, cw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    cropped = Sample(s.image[..., y0 : y0 + ch, x0 : x0 + cw], s.mask[..., y0 : y0 + ch, x0 : x0 + cw], s.id)
    return _resize_sample(cropped, h, w)


def scaled_size(n: int, scale: float, divisor: int = 32) -> int:
    return max(divisor, int(round(n * scale / divisor)) * divisor)


def multiscale(s: Sample, scale: float) -> Sample:
    """Resize to ``scale`` times the size, rounded to a multiple of 32."""
    h, w = s.size
    return _resize_sample(s, scaled_size(h, scale), scaled_size(w, scale))


def resize(s: Sample, h: int, w: int) -> Sample:
    return _resize_sample(s, h, w)
