"""Utility & helper functions."""

from __future__ import annotations

import csv
import zlib
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


def stream_seed(master_seed: int, name: str, *keys: int) -> np.random.SeedSequence:
    """Derive the seed sequence of a named random sub-stream.

    The same ``(master_seed, name, keys)`` always yields the same stream, and distinct
    names yield statistically independent streams, so modules can be re-seeded
    without disturbing each other.

    Args:
        master_seed: The experiment's 64-bit master seed.
        name: Stream name such as ``"channel"``, ``"scenario"`` or ``"agent"``.
        *keys: Extra integers (episode index, frame index, ...) to split the stream.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, tag, *keys])


def make_rng(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return a generator on the named sub-stream (see :func:`stream_seed`)."""
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, name, *keys)))


def derive_seed(master_seed: int, name: str, *keys: int) -> int:
    """Return a plain integer seed on the named sub-stream."""
    return int(stream_seed(master_seed, name, *keys).generate_state(1, np.uint64)[0])


def format_float(value: float) -> str:
    """Format a float so that reruns print byte-identical text."""
    return repr(float(value))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write rows to a CSV file, formatting floats reproducibly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )
    return path


def write_dict_csv(path: str | Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    """Write a list of flat dictionaries sharing the same keys."""
    header = list(rows[0].keys()) if rows else []
    return write_csv(path, header, ([row[k] for k in header] for row in rows))


def write_map_csv(path: str | Path, values: np.ndarray) -> Path:
    """Dump an H x W map as row-major CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(values, dtype=np.float64):
            writer.writerow([format_float(v) for v in row])
    return path


def write_pgm(path: str | Path, values: np.ndarray) -> Path:
    """Dump a map with entries in [0, 1] as a binary 8-bit grayscale PGM image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pixels = np.rint(grid * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with path.open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))
    return path
