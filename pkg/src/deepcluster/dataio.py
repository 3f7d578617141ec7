"""Readers and writers for IDX, binary PGM/PPM and CSV files."""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed or unsupported input file."""


@dataclass(frozen=True)
class Dataset:
    """Stacked images ``(N, C, H, W)`` in [0, 1], optional labels, stable ids.

    Labels are only ever read by metrics and probes, never by training.
    """

    images: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        if images.ndim != 4 or len(images) == 0:
            raise FormatError("dataset must hold a non-empty (N, C, H, W) stack")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(images),):
                raise FormatError("labels length differs from image count")
            if labels.min() < 0:
                raise FormatError("labels must be non-negative")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        ids = np.arange(len(images)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (len(images),):
            raise FormatError("ids length differs from image count")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def without_labels(self) -> "Dataset":
        return Dataset(self.images, None, self.ids)


# ---------------------------------------------------------------- IDX


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{what}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{what}: bad magic 0x{magic:08x} (expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    payload = raw[header:]
    if len(payload) < count:
        raise FormatError(f"{what}: truncated payload ({len(payload)} of {count} bytes)")
    if len(payload) > count:
        raise FormatError(f"{what}: byte count mismatch ({len(payload)} bytes, header declares {count})")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Load an IDX image file (and optional IDX label file) into a Dataset."""
    pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    images = (pixels.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
        if len(labels) != len(images):
            raise FormatError("label count does not match image count")
    return Dataset(images, labels)


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (N, H, W) or (N, 1, H, W) images in [0, 1] as an IDX u8 file."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[1] != 1:
            raise ValueError("IDX images must be single-channel")
        images = images[:, 0]
    data = to_bytes(images)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *data.shape))
        fh.write(data.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("IDX labels must fit in u8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------- PNM


def _pnm_tokens(raw: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the header.
    """
    tokens = []
    pos = 0
    n = len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(raw[start:pos])
    return tokens, pos


def load_pnm(path) -> np.ndarray:
    """Load a binary PGM (P5) as (1, H, W) or PPM (P6) as (3, H, W), scaled to [0, 1]."""
    raw = _read_bytes(path)
    return parse_pnm(raw)


def parse_pnm(raw: bytes) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    tokens, pos = _pnm_tokens(raw[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("non-numeric PNM header field") from None
    if width < 1 or height < 1:
        raise FormatError("PNM dimensions must be positive")
    if not 0 < maxval <= 255:
        raise FormatError(f"unsupported PNM maxval {maxval} (must be <= 255)")
    channels = 1 if magic == b"P5" else 3
    start = 2 + pos + 1
    count = width * height * channels
    payload = raw[start : start + count]
    if len(payload) < count:
        raise FormatError(f"truncated PNM payload ({len(payload)} of {count} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1), dtype=np.float32) / np.float32(maxval)


def write_pnm(path, image: np.ndarray) -> None:
    """Write a (1, H, W) or (3, H, W) image in [0, 1] as binary PGM/PPM."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.shape[0] not in (1, 3):
        raise ValueError("PNM images need 1 or 3 channels")
    magic = b"P5" if image.shape[0] == 1 else b"P6"
    data = to_bytes(image).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{image.shape[2]} {image.shape[1]}\n255\n".encode())
        fh.write(np.ascontiguousarray(data).tobytes())


def load_pnm_dir(directory, labels_path=None) -> Dataset:
    """Load every .pgm/.ppm file of a directory, sorted by file name."""
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not files:
        raise FormatError(f"no .pgm/.ppm files in {directory}")
    images = [load_pnm(p) for p in files]
    if len({im.shape for im in images}) != 1:
        raise FormatError("images in a dataset must share one shape")
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
    return Dataset(np.stack(images), labels)


def load_dataset(path, labels_path=None) -> Dataset:
    """Dispatch on ``path``: a directory of PNM files or an IDX image file.

    When no label file is given, ``<images>-labels`` style siblings are not
    guessed; labels stay absent.
    """
    if os.path.isdir(path):
        return load_pnm_dir(path, labels_path)
    return load_idx(path, labels_path)


# ---------------------------------------------------------------- CSV


def _parse_csv_rows(text: str, header: bool):
    rows = list(csv.reader(io.StringIO(text)))
    if header and rows:
        rows = rows[1:]
    # Blank lines (typically a trailing newline) carry no data.
    numbered = [(i + (2 if header else 1), r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not numbered:
        raise FormatError("empty input")
    return numbered


def load_csv_matrix(path, header: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV into an (n, d) float32 matrix."""
    with open(path, newline="") as fh:
        numbered = _parse_csv_rows(fh.read(), header)
    width = len(numbered[0][1])
    out = np.empty((len(numbered), width), dtype=np.float32)
    for r, (line, row) in enumerate(numbered):
        if len(row) != width:
            raise FormatError(f"ragged row at line {line}")
        for c, cell in enumerate(row):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise FormatError(f"unparsable cell {cell!r} at line {line}") from None
    if not np.all(np.isfinite(out)):
        raise FormatError("non-finite values in CSV matrix")
    return out


def format_float(v: float) -> str:
    return f"{float(v):.9g}"


def write_csv_matrix(path, x: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.asarray(x):
            fh.write(",".join(format_float(v) for v in row) + "\n")


def write_assignments(path, assignments, ids=None) -> None:
    """Write ``id,cluster`` rows with a header line."""
    assignments = np.asarray(assignments)
    ids = np.arange(len(assignments)) if ids is None else np.asarray(ids)
    with open(path, "w", newline="") as fh:
        fh.write("id,cluster\n")
        for i, a in zip(ids, assignments):
            fh.write(f"{int(i)},{int(a)}\n")


def load_assignments(path) -> np.ndarray:
    """Read cluster ids from an ``id,cluster`` CSV or a single-column CSV.

    Rows are returned in ascending id order when ids are present.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    first = text.split("\n", 1)[0].strip().lower()
    has_header = not first.replace(",", "").replace("-", "").isdigit() and first != ""
    numbered = _parse_csv_rows(text, has_header)
    width = len(numbered[0][1])
    if width not in (1, 2):
        raise FormatError("assignment CSV must have 1 or 2 columns")
    vals = []
    for line, row in numbered:
        if len(row) != width:
            raise FormatError(f"ragged row at line {line}")
        try:
            vals.append([int(c) for c in row])
        except ValueError:
            raise FormatError(f"unparsable cell at line {line}") from None
    arr = np.asarray(vals, dtype=np.int64)
    if width == 1:
        return arr[:, 0]
    order = np.argsort(arr[:, 0], kind="stable")
    return arr[order, 1]
