"""Convert the USPS Binary Alphadigits MATLAB container to IDX files.

The published container (binaryalphadigs.mat) stores a 36x39 cell array
``dat``: 36 classes ('0'..'9' then 'A'..'Z'), 39 binary 20x16 images
each. This tool selects a class range, remaps the labels, and writes the
two IDX files consumed by downstream trainers:

* image file: big-endian magic 0x00000803, u32 count/rows/cols, then
  raw u8 pixels row-major; binary values are written as 0/255 so a
  reader dividing by 255 recovers {0,1} exactly.
* label file: big-endian magic 0x00000801, u32 count, raw u8 labels.

Selectors: ``digits`` keeps classes 0-9 (labels 0-9), ``alpha`` (the
default) keeps the 26 letters remapped A->0 ... Z->25, ``all`` keeps
everything with labels 0-35. Output order is class-major -- all 39
examples of a class, in stored order, before the next class -- so
conversion is deterministic and reruns are byte-identical.

Command line: convert_alphadigits <in.mat> <out-images.idx>
<out-labels.idx> [--classes digits|alpha|all]. Exit codes: 0 success,
2 bad usage, 3 unreadable/malformed input or unwritable output.
"""

from __future__ import annotations

import argparse
import struct
import sys

import numpy as np
from scipy.io import loadmat
from scipy.io.matlab import MatReadError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

NUM_CLASSES = 36
EXAMPLES_PER_CLASS = 39
ROWS, COLS = 20, 16

# selector -> (kept container classes, label offset subtracted from each)
SELECTORS = {
    "digits": (range(0, 10), 0),
    "alpha": (range(10, 36), 10),
    "all": (range(0, 36), 0),
}


class MatFormatError(ValueError):
    """Input is not the Binary Alphadigits container layout."""


def load_cells(mat_path) -> np.ndarray:
    """Read and validate the 36x39 cell grid of 20x16 binary images."""
    try:
        mat = loadmat(mat_path)
    except (MatReadError, ValueError, IndexError) as exc:
        raise MatFormatError(f"{mat_path}: not a MAT container ({exc})") \
            from exc
    if "dat" not in mat:
        raise MatFormatError(f"{mat_path}: missing variable 'dat'")
    cells = np.asarray(mat["dat"])
    if cells.shape != (NUM_CLASSES, EXAMPLES_PER_CLASS):
        raise MatFormatError(
            f"{mat_path}: 'dat' has shape {cells.shape}, expected "
            f"({NUM_CLASSES}, {EXAMPLES_PER_CLASS})"
        )
    for c in range(NUM_CLASSES):
        for j in range(EXAMPLES_PER_CLASS):
            cell = np.asarray(cells[c, j])
            if cell.shape != (ROWS, COLS):
                raise MatFormatError(
                    f"{mat_path}: cell ({c},{j}) has shape {cell.shape}, "
                    f"expected ({ROWS}, {COLS})"
                )
            if not np.isin(cell, (0, 1)).all():
                raise MatFormatError(
                    f"{mat_path}: cell ({c},{j}) has pixel values outside "
                    "{0, 1}"
                )
    return cells


def write_idx_images(pixels: np.ndarray, path) -> None:
    """Write an N x ROWS x COLS u8 array as an IDX image file."""
    n = pixels.shape[0]
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, ROWS, COLS))
        f.write(pixels.astype(np.uint8).tobytes())


def write_idx_labels(labels: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def convert(mat_path, out_images, out_labels, classes: str = "alpha"):
    """Convert one container; returns (count, rows, cols) written."""
    if classes not in SELECTORS:
        raise ValueError(
            f"unknown class selector {classes!r}, expected one of "
            f"{sorted(SELECTORS)}"
        )
    kept, offset = SELECTORS[classes]
    cells = load_cells(mat_path)

    images = np.stack([
        np.asarray(cells[c, j], dtype=np.uint8)
        for c in kept for j in range(EXAMPLES_PER_CLASS)
    ])
    labels = np.repeat([c - offset for c in kept], EXAMPLES_PER_CLASS)

    write_idx_images(images * 255, out_images)
    write_idx_labels(labels, out_labels)
    return images.shape[0], ROWS, COLS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert_alphadigits",
        description="Convert binaryalphadigs.mat to IDX image/label files.",
    )
    parser.add_argument("mat_path", help="input MATLAB container")
    parser.add_argument("out_images", help="output IDX image file")
    parser.add_argument("out_labels", help="output IDX label file")
    parser.add_argument("--classes", choices=sorted(SELECTORS),
                        default="alpha",
                        help="class subset to keep (default: alpha)")
    args = parser.parse_args(argv)

    try:
        count, rows, cols = convert(args.mat_path, args.out_images,
                                    args.out_labels, args.classes)
    except (MatFormatError, OSError) as exc:
        print(f"convert_alphadigits: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {count} images ({rows}x{cols}) to {args.out_images}, "
          f"labels to {args.out_labels} [{args.classes}]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
