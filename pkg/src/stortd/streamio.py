"""Text slice streams, run reports and binary engine checkpoints.

Stream file
-----------
The first line is the header::

    STORTD-STREAM 1 <n1> <n2> <T> [units ...]

followed by ``T`` day blocks, each an ``@day <k>`` line (``k`` counting from
0) and ``n1`` comma-separated lines of ``n2`` values. Unobserved values may be
written as ``nan``. A mask file has the same layout with the magic token
``STORTD-MASK`` and ``0``/``1`` values. Floats are written with ``repr`` so a
write/read round trip is exact.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .engine import EngineState, Hyperparams
from .regularizers import Laplacian

STREAM_MAGIC = "STORTD-STREAM"
MASK_MAGIC = "STORTD-MASK"
CHECKPOINT_MAGIC = "STORTD-CKPT"
FORMAT_VERSION = 1

REPORT_COLUMNS = ("t", "rse", "time_ms", "inner_iters", "f1")


class StreamFormatError(ValueError):
    """Malformed stream or mask file."""

    def __init__(self, path, line, message, day=None):
        where = f"{path}:{line}"
        if day is not None:
            where += f" (day {day})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line
        self.day = day


@dataclass(frozen=True)
class StreamHeader:
    n1: int
    n2: int
    T: int
    units: str = ""
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if min(self.n1, self.n2, self.T) < 1:
            raise ValueError(f"stream dims must be positive, got {(self.n1, self.n2, self.T)}")
        if self.version != FORMAT_VERSION:
            raise ValueError(f"unsupported stream version {self.version}")

    def line(self, magic=STREAM_MAGIC):
        parts = [magic, str(self.version), str(self.n1), str(self.n2), str(self.T)]
        if self.units:
            parts.append(self.units)
        return " ".join(parts)


def _parse_header(path, line, magic):
    parts = line.split()
    if len(parts) < 5 or parts[0] != magic:
        raise StreamFormatError(path, 1, f"expected header '{magic} <version> <n1> <n2> <T> [units]'")
    try:
        version, n1, n2, T = (int(p) for p in parts[1:5])
    except ValueError:
        raise StreamFormatError(path, 1, "header fields must be integers") from None
    try:
        return StreamHeader(n1=n1, n2=n2, T=T, units=" ".join(parts[5:]), version=version)
    except ValueError as exc:
        raise StreamFormatError(path, 1, str(exc)) from None


def read_header(path, magic=STREAM_MAGIC):
    with open(path) as fh:
        return _parse_header(path, fh.readline().strip(), magic)


def _iter_blocks(path, magic, dtype):
    with open(path) as fh:
        header = _parse_header(path, fh.readline().strip(), magic)
        lineno = 1
        for day in range(header.T):
            line = fh.readline()
            lineno += 1
            if not line:
                raise StreamFormatError(path, lineno, "unexpected end of file", day=day)
            tag = line.split()
            if len(tag) != 2 or tag[0] != "@day" or tag[1] != str(day):
                raise StreamFormatError(path, lineno, f"expected '@day {day}'", day=day)
            block = np.empty((header.n1, header.n2), dtype=dtype)
            for i in range(header.n1):
                line = fh.readline()
                lineno += 1
                if not line:
                    raise StreamFormatError(path, lineno, "unexpected end of file", day=day)
                cells = line.strip().split(",")
                if len(cells) != header.n2:
                    raise StreamFormatError(
                        path, lineno, f"expected {header.n2} values, got {len(cells)}", day=day
                    )
                try:
                    block[i] = [dtype(c) for c in cells]
                except ValueError as exc:
                    raise StreamFormatError(path, lineno, str(exc), day=day) from None
            yield block


def read_stream(path, mask_path=None):
    """Open a stream file for day-by-day reading.

    Returns ``(header, slices)`` where ``slices`` lazily yields
    ``(values, mask)`` pairs; only one day is held in memory at a time.
    Without a mask file an entry is observed iff its value is finite.
    """
    header = read_header(path)
    if mask_path is not None:
        mheader = read_header(mask_path, MASK_MAGIC)
        if (mheader.n1, mheader.n2, mheader.T) != (header.n1, header.n2, header.T):
            raise StreamFormatError(mask_path, 1, "mask dims do not match the stream")

    def slices():
        values = _iter_blocks(path, STREAM_MAGIC, float)
        if mask_path is None:
            for block in values:
                yield block, np.isfinite(block)
        else:
            masks = _iter_blocks(mask_path, MASK_MAGIC, int)
            for block, mblock in zip(values, masks):
                yield block, (mblock != 0) & np.isfinite(block)

    return header, slices()


def read_masks(path):
    """Header and lazy iterator over the boolean masks of a mask file."""
    header = read_header(path, MASK_MAGIC)
    return header, (b != 0 for b in _iter_blocks(path, MASK_MAGIC, int))


def _write_blocks(path, header, blocks, magic, fmt):
    count = 0
    with open(path, "w") as fh:
        fh.write(header.line(magic) + "\n")
        for day, block in enumerate(blocks):
            block = np.asarray(block)
            if block.shape != (header.n1, header.n2):
                raise ValueError(f"day {day}: slice shape {block.shape} does not match header")
            fh.write(f"@day {day}\n")
            for row in block.tolist():
                fh.write(",".join(fmt(v) for v in row) + "\n")
            count += 1
    if count != header.T:
        raise ValueError(f"{path}: header declares {header.T} days but {count} were written")


def write_stream(path, slices, units=""):
    """Write a list of ``n1 x n2`` slices (or an ``(n1, n2, T)`` array)."""
    if isinstance(slices, np.ndarray) and slices.ndim == 3:
        slices = [slices[:, :, k] for k in range(slices.shape[2])]
    slices = list(slices)
    if not slices:
        raise ValueError("cannot write an empty stream")
    n1, n2 = np.shape(slices[0])
    header = StreamHeader(n1=n1, n2=n2, T=len(slices), units=units)
    _write_blocks(path, header, slices, STREAM_MAGIC, repr)
    return header


def write_masks(path, masks):
    masks = list(masks)
    n1, n2 = np.shape(masks[0])
    header = StreamHeader(n1=n1, n2=n2, T=len(masks))
    _write_blocks(path, header, [np.asarray(m, dtype=int) for m in masks], MASK_MAGIC, str)
    return header


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_num(value):
    return None if value is None or math.isnan(value) else value


def write_report(report, directory, dump_slices=True):
    """Write ``slices.csv``, ``summary.json`` and optional slice dumps.

    Returns the list of written paths.
    """
    os.makedirs(directory, exist_ok=True)
    written = []
    csv_path = os.path.join(directory, "slices.csv")
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for rec in report.records:
                writer.writerow(
                    [rec.t, _fmt(rec.rse), _fmt(rec.wall_time * 1e3), rec.inner_iters, _fmt(rec.f1)]
                )
        written.append(csv_path)

        profile = report.profile()
        summary = {
            "final_rse": _json_num(report.final_rse),
            "mean_time_ms": report.mean_time() * 1e3 if report.records else None,
            "profile_slope_ms": profile.slope * 1e3 if profile else None,
            "state_elements": report.state_elements,
            "slices": len(report.records),
        }
        summary_path = os.path.join(directory, "summary.json")
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(summary_path)

        if dump_slices and report.recovered:
            for name, slices in (("recovered", report.recovered), ("outliers", report.outliers)):
                path = os.path.join(directory, f"{name}.stream")
                write_stream(path, slices)
                written.append(path)
    except OSError as exc:
        raise OSError(f"failed writing report to {directory}: {exc}") from exc
    return written


def save_checkpoint(state, path):
    """Serialize an :class:`EngineState` to a versioned ``.npz`` archive."""
    hyper = asdict(state.hyper)
    payload = {
        "magic": np.array(CHECKPOINT_MAGIC),
        "version": np.array(FORMAT_VERSION),
        "hyper": np.array(json.dumps(hyper, sort_keys=True)),
        "core": state.core,
        "u_temporal": state.u_temporal,
        "u_spatial": state.u_spatial,
        "gains_spatial": state.gains_spatial,
        "gains_temporal": state.gains_temporal,
        "laplacian": state.laplacian.matrix,
        "degree": state.laplacian.degree,
        "last_weight": state.last_weight,
        "t": np.array(state.t),
        "residual_scale": np.array(state.residual_scale),
    }
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        if str(data["magic"]) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not an engine checkpoint")
        version = int(data["version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        hyper = json.loads(str(data["hyper"]))
        hyper["ranks"] = tuple(hyper["ranks"])
        return EngineState(
            core=data["core"].copy(),
            u_temporal=data["u_temporal"].copy(),
            u_spatial=data["u_spatial"].copy(),
            gains_spatial=data["gains_spatial"].copy(),
            gains_temporal=data["gains_temporal"].copy(),
            laplacian=Laplacian(matrix=data["laplacian"].copy(), degree=data["degree"].copy()),
            hyper=Hyperparams(**hyper),
            t=int(data["t"]),
            last_weight=data["last_weight"].copy(),
            residual_scale=float(data["residual_scale"]),
        )

