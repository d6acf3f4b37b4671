"""MNIST ingestion for the sequence experiments: IDX binary parsing and
serialization, a checksum-verified download client with an idempotent local
cache, digit patch scaling to 24x8, and sequence dataset construction under
both label rules.

IDX container layout (big-endian throughout): two zero magic bytes, one
element-type code byte, one rank byte, then rank uint32 dimensions, then the
row-major payload.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from filelock import FileLock

from .numerics import Rng


class BadMagic(ValueError):
    """Header does not start with the IDX magic prefix."""


class Truncated(ValueError):
    """Byte stream ends before the declared payload."""


class UnsupportedType(ValueError):
    """Element-type code outside the IDX standard set."""


class ChecksumMismatch(RuntimeError):
    pass


class NetworkError(RuntimeError):
    pass


class MissingOffline(FileNotFoundError):
    """Offline mode requested but the cache lacks the file."""


_TYPE_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class IdxTensor:
    type_code: int
    dims: tuple
    payload: bytes = field(repr=False)

    def to_numpy(self) -> np.ndarray:
        dtype = _TYPE_DTYPES[self.type_code]
        return np.frombuffer(self.payload, dtype=dtype).reshape(self.dims)

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "IdxTensor":
        for code, dtype in _TYPE_DTYPES.items():
            if dtype == arr.dtype.newbyteorder(">"):
                return cls(code, tuple(arr.shape),
                           np.ascontiguousarray(arr).astype(dtype).tobytes())
        raise UnsupportedType(f"no IDX code for dtype {arr.dtype}")

    def serialize(self) -> bytes:
        head = struct.pack(">BBBB", 0, 0, self.type_code, len(self.dims))
        head += b"".join(struct.pack(">I", d) for d in self.dims)
        return head + self.payload


def parse_idx(data: bytes) -> IdxTensor:
    if len(data) < 4:
        raise Truncated(f"header needs 4 bytes, got {len(data)}")
    zero0, zero1, type_code, rank = struct.unpack(">BBBB", data[:4])
    if zero0 != 0 or zero1 != 0:
        raise BadMagic(f"bad magic prefix {data[:2]!r}")
    if type_code not in _TYPE_DTYPES:
        raise UnsupportedType(f"unknown element type code 0x{type_code:02x}")
    header_len = 4 + 4 * rank
    if len(data) < header_len:
        raise Truncated("byte stream ends inside the dimension list")
    dims = struct.unpack(f">{rank}I", data[4:header_len])
    count = 1
    for d in dims:
        count *= d
    payload_len = count * _TYPE_DTYPES[type_code].itemsize
    if len(data) < header_len + payload_len:
        raise Truncated(
            f"payload needs {payload_len} bytes, got {len(data) - header_len}"
        )
    return IdxTensor(type_code, dims, data[header_len:header_len + payload_len])


MNIST_FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)

DEFAULT_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)

# md5 of the official gzip files
DEFAULT_CHECKSUMS = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


def _digest(path: Path, algorithm: str) -> str:
    h = hashlib.new(algorithm)
    h.update(path.read_bytes())
    return h.hexdigest()


def fetch_mnist(
    cache_dir,
    mirror_urls=DEFAULT_MIRRORS,
    expected_checksums=None,
    offline: bool = False,
    algorithm: str = "md5",
) -> dict[str, Path]:
    """Ensure the four MNIST archives are present and checksum-valid in
    cache_dir; returns name -> path.  A warm cache performs no network I/O.
    Offline mode never touches the network and raises MissingOffline when a
    file is absent."""
    checksums = dict(DEFAULT_CHECKSUMS if expected_checksums is None else expected_checksums)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    out = {}
    with FileLock(str(cache / ".fetch.lock")):
        for name in MNIST_FILES:
            path = cache / name
            if path.exists():
                want = checksums.get(name)
                if want and _digest(path, algorithm) != want:
                    raise ChecksumMismatch(f"{name}: cached file fails its checksum")
                out[name] = path
                continue
            if offline:
                raise MissingOffline(f"{name} not in cache and offline mode is on")
            last_err = None
            for mirror in mirror_urls:
                url = mirror.rstrip("/") + "/" + name
                try:
                    with urllib.request.urlopen(url, timeout=60) as resp:
                        data = resp.read()
                    break
                except (urllib.error.URLError, OSError) as err:
                    last_err = err
            else:
                raise NetworkError(f"all mirrors failed for {name}: {last_err}")
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            want = checksums.get(name)
            if want and _digest(tmp, algorithm) != want:
                tmp.unlink()
                raise ChecksumMismatch(f"{name}: downloaded file fails its checksum")
            tmp.replace(path)
            out[name] = path
    return out


def _read_idx_file(path: Path) -> IdxTensor:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return parse_idx(data)


def load_mnist(cache_dir, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """(images uint8 (m, 28, 28), labels uint8 (m,)) from the cache dir;
    accepts gzip-compressed or plain IDX files."""
    prefix = {"train": "train", "test": "t10k"}[split]
    cache = Path(cache_dir)

    def find(suffix):
        for candidate in (f"{prefix}-{suffix}.gz", f"{prefix}-{suffix}"):
            p = cache / candidate
            if p.exists():
                return p
        raise FileNotFoundError(f"no {prefix}-{suffix}[.gz] under {cache}")

    images = _read_idx_file(find("images-idx3-ubyte")).to_numpy()
    labels = _read_idx_file(find("labels-idx1-ubyte")).to_numpy()
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValueError(f"unexpected image tensor shape {images.shape}")
    return np.ascontiguousarray(images), np.ascontiguousarray(labels)


def mnist_available(cache_dir) -> bool:
    try:
        load_mnist(cache_dir, "train")
        load_mnist(cache_dir, "test")
        return True
    except (FileNotFoundError, ValueError):
        return False


def make_digit_patch(image: np.ndarray) -> np.ndarray:
    """28x28 grayscale -> 24x8 float patch in [-1, 1]: center-crop to 24x24,
    average columns in groups of 3, scale p/127.5 - 1."""
    image = np.asarray(image)
    if image.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {image.shape}")
    crop = image[2:26, 2:26].astype(np.float64)
    pooled = crop.reshape(24, 8, 3).mean(axis=2)
    return pooled / 127.5 - 1.0


def make_digit_patches(images: np.ndarray) -> np.ndarray:
    """Vectorized make_digit_patch over an (m, 28, 28) stack."""
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValueError(f"expected (m, 28, 28) images, got {images.shape}")
    crop = images[:, 2:26, 2:26].astype(np.float64)
    return crop.reshape(-1, 24, 8, 3).mean(axis=3) / 127.5 - 1.0


class LabelRule(Enum):
    """How a sequence's digit classes determine its +-1 label (parity of the
    selected classes' sum; +1 iff even)."""

    CENTRAL_PARITY = "central"
    ENDS_MIDDLE_PARITY = "ends-middle"

    def positions(self, n: int) -> tuple[int, int, int]:
        if n % 2 == 0 or n < 3:
            raise ValueError("sequence length must be odd and >= 3")
        mid = (n + 1) // 2
        if self is LabelRule.CENTRAL_PARITY:
            return (mid - 1, mid, mid + 1)
        return (1, mid, n)

    def label(self, classes: np.ndarray, n: int) -> np.ndarray:
        cols = [p - 1 for p in self.positions(n)]
        total = np.asarray(classes)[..., cols].sum(axis=-1)
        return 1.0 - 2.0 * (total % 2).astype(np.float64)


@dataclass
class SeqExample:
    """One sequence instance: 24 x 8n image in [-1, 1], its +-1 label, and
    the digit classes that built it."""

    image: np.ndarray
    label: float
    classes: tuple


@dataclass
class SeqDataset:
    images: np.ndarray  # (count, 24, 8n) float
    labels: np.ndarray  # (count,) +-1
    classes: np.ndarray  # (count, n) uint8
    rule: LabelRule

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def __getitem__(self, i: int) -> SeqExample:
        return SeqExample(self.images[i], float(self.labels[i]),
                          tuple(int(c) for c in self.classes[i]))

    def flat_inputs(self) -> np.ndarray:
        """Column-major flattening (column by column, 24 rows each), the
        layout the windowed architectures slide over."""
        m = len(self)
        return self.images.transpose(0, 2, 1).reshape(m, -1)


def build_sequences(
    images: np.ndarray,
    labels: np.ndarray,
    n: int,
    rule: LabelRule,
    count: int,
    rng: Rng,
    patches: np.ndarray | None = None,
) -> SeqDataset:
    """Concatenate n independently sampled digits horizontally per example;
    the label applies the rule to the sampled digit classes.  Pass
    pre-computed ``patches`` (from make_digit_patches) to skip rescaling
    work on repeated builds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rule.positions(n)  # validates n
    if patches is None:
        patches = make_digit_patches(images)
    idx = np.asarray(rng.integers(0, patches.shape[0], size=(count, n)))
    classes = np.asarray(labels)[idx]
    seq_labels = rule.label(classes, n)
    # (count, n, 24, 8) -> (count, 24, 8n)
    imgs = patches[idx].transpose(0, 2, 1, 3).reshape(count, 24, 8 * n)
    return SeqDataset(images=imgs, labels=seq_labels,
                      classes=classes.astype(np.uint8), rule=rule)
