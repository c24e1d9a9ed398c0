"""Row-major run-length codec for submitted class masks.

Wire format: ``{"shape": [H, W], "runs": [[value, length], ...]}`` where runs
cover exactly H*W pixels in row-major order.  Compact, trivially verifiable,
and shared verbatim with the annotation frontend.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def encode_mask(classes: np.ndarray) -> dict:
    arr = np.asarray(classes)
    if arr.ndim != 2:
        raise ValidationError(f"rle: mask must be 2D, got {arr.ndim}D")
    flat = arr.reshape(-1)
    runs: list[list[int]] = []
    if flat.size:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [flat.size]))
        runs = [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]
    return {"shape": [int(arr.shape[0]), int(arr.shape[1])], "runs": runs}


def decode_mask(
    payload: dict,
    expected_shape: tuple[int, int] | None = None,
    num_classes: int | None = None,
) -> np.ndarray:
    if not isinstance(payload, dict) or "shape" not in payload or "runs" not in payload:
        raise ValidationError("rle: payload must have 'shape' and 'runs'")
    shape = payload["shape"]
    if (not isinstance(shape, (list, tuple)) or len(shape) != 2
            or not all(isinstance(v, int) and v > 0 for v in shape)):
        raise ValidationError(f"rle: bad shape {shape!r}")
    h, w = shape
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise ValidationError(
            f"rle: mask shape ({h}, {w}) does not match slice "
            f"{tuple(expected_shape)}"
        )
    total = 0
    values = []
    lengths = []
    for run in payload["runs"]:
        if (not isinstance(run, (list, tuple)) or len(run) != 2
                or not all(isinstance(v, int) for v in run)):
            raise ValidationError(f"rle: bad run {run!r}")
        value, length = run
        if length < 1:
            raise ValidationError(f"rle: run length {length} must be >= 1")
        if value < 0 or (num_classes is not None and value >= num_classes):
            raise ValidationError(f"rle: class value {value} out of range")
        values.append(value)
        lengths.append(length)
        total += length
    if total != h * w:
        raise ValidationError(
            f"rle: runs cover {total} pixels, expected {h * w}"
        )
    flat = np.repeat(np.asarray(values, dtype=np.uint8),
                     np.asarray(lengths, dtype=np.int64))
    return flat.reshape(h, w)
