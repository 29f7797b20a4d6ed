import json
import os

import numpy as np
import pytest

from stortd import engine
from stortd.engine import Hyperparams
from stortd.metrics import RunReport, SliceRecord
from stortd.regularizers import build_graph, build_laplacian
from stortd.streamio import (
    StreamFormatError,
    StreamHeader,
    load_checkpoint,
    read_header,
    read_masks,
    read_stream,
    save_checkpoint,
    write_masks,
    write_report,
    write_stream,
)

DATA = os.path.join(os.path.dirname(__file__), "data")


def test_golden_tiny_stream():
    header, days = read_stream(os.path.join(DATA, "tiny.stream"))
    assert (header.n1, header.n2, header.T, header.units) == (2, 2, 2, "veh/5min")
    days = list(days)
    assert len(days) == 2
    v0, m0 = days[0]
    np.testing.assert_array_equal(v0[0], [1.5, 2.0])
    assert v0[1, 0] == 3.25 and np.isnan(v0[1, 1])
    np.testing.assert_array_equal(m0, [[True, True], [True, False]])
    np.testing.assert_array_equal(days[1][0], [[-1.0, 0.0], [4.0, 5.5]])


def test_golden_tiny_stream_with_mask_file():
    _, days = read_stream(os.path.join(DATA, "tiny.stream"), os.path.join(DATA, "tiny.mask"))
    masks = [m for _, m in days]
    np.testing.assert_array_equal(masks[0], [[True, True], [False, False]])
    np.testing.assert_array_equal(masks[1], [[True, False], [True, True]])


def test_truncated_stream_reports_day():
    _, days = read_stream(os.path.join(DATA, "truncated.stream"))
    with pytest.raises(StreamFormatError) as info:
        list(days)
    assert info.value.day == 1


def test_large_header_accepted(tmp_path):
    path = tmp_path / "h.stream"
    path.write_text("STORTD-STREAM 1 108 80 25\n")
    h = read_header(path)
    assert (h.n1, h.n2, h.T) == (108, 80, 25)


@pytest.mark.parametrize(
    "text",
    [
        "STORTD-STREAM 1 2 2\n",
        "STORTD-STREAM 9 2 2 1\n@day 0\n1,2\n3,4\n",
        "NOTASTREAM 1 2 2 1\n",
        "STORTD-STREAM 1 2 2 1\n@day 0\n1,2\n3\n",
        "STORTD-STREAM 1 2 2 1\n@day 0\n1,x\n3,4\n",
        "STORTD-STREAM 1 2 2 1\n@day 3\n1,2\n3,4\n",
    ],
)
def test_malformed_files(tmp_path, text):
    path = tmp_path / "bad.stream"
    path.write_text(text)
    with pytest.raises(StreamFormatError) as info:
        _, days = read_stream(path)
        list(days)
    assert info.value.line >= 1


def test_header_validation():
    with pytest.raises(ValueError):
        StreamHeader(0, 2, 2)


def test_stream_roundtrip_is_exact(tmp_path, rng):
    x = rng.standard_normal((3, 4, 5)) * 1e3
    x[0, 1, 2] = np.nan
    write_stream(tmp_path / "s.stream", x, units="km/h")
    header, days = read_stream(tmp_path / "s.stream")
    back = np.stack([v for v, _ in days], axis=2)
    assert header.units == "km/h"
    np.testing.assert_array_equal(back, x)


def test_mask_roundtrip(tmp_path, rng):
    masks = [rng.random((3, 2)) < 0.5 for _ in range(4)]
    write_masks(tmp_path / "m.mask", masks)
    _, it = read_masks(tmp_path / "m.mask")
    for a, b in zip(masks, it):
        np.testing.assert_array_equal(a, b)


def test_reader_is_lazy(tmp_path, rng):
    write_stream(tmp_path / "s.stream", rng.standard_normal((2, 2, 3)))
    _, days = read_stream(tmp_path / "s.stream")
    first, _ = next(days)
    assert first.shape == (2, 2)


def _records(n):
    return [SliceRecord(t=t, rse=0.1 * t, wall_time=1e-3, state_elements=42, inner_iters=2) for t in range(n)]


def test_empty_report_has_header_only_csv(tmp_path):
    write_report(RunReport(), tmp_path)
    assert (tmp_path / "slices.csv").read_text() == "t,rse,time_ms,inner_iters,f1\n"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["final_rse"] is None and summary["slices"] == 0


def test_report_rows_and_dumps_roundtrip(tmp_path, rng):
    rec = [rng.standard_normal((2, 3)) for _ in range(3)]
    out = [rng.standard_normal((2, 3)) for _ in range(3)]
    report = RunReport(records=_records(3), final_rse=0.25, state_elements=42, recovered=rec, outliers=out)
    write_report(report, tmp_path)
    lines = (tmp_path / "slices.csv").read_text().splitlines()
    assert len(lines) == 4
    _, days = read_stream(tmp_path / "recovered.stream")
    for a, (b, _) in zip(rec, days):
        assert np.array_equal(a, b)
    _, days = read_stream(tmp_path / "outliers.stream")
    for a, (b, _) in zip(out, days):
        assert np.array_equal(a, b)


def test_report_to_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        write_report(RunReport(records=_records(1)), blocker / "sub")


def test_checkpoint_roundtrip_and_resume(tmp_path, rng):
    lap = build_laplacian(build_graph(rng.standard_normal((5, 3))))
    hyper = Hyperparams(ranks=(2, 2, 2), alpha=10.0, beta=10.0)
    stream = rng.standard_normal((12, 6, 5))
    masks = rng.random((12, 6, 5)) < 0.7

    straight = engine.init(6, 5, hyper, lap, seed=3)
    ref = [engine.step(straight, stream[t], masks[t]) for t in range(12)]

    s = engine.init(6, 5, hyper, lap, seed=3)
    for t in range(6):
        engine.step(s, stream[t], masks[t])
    save_checkpoint(s, tmp_path / "ckpt.npz")
    resumed = load_checkpoint(tmp_path / "ckpt.npz")
    assert resumed.hyper == s.hyper and resumed.t == 6
    for t in range(6, 12):
        res = engine.step(resumed, stream[t], masks[t])
        assert np.array_equal(res.recovered, ref[t].recovered)
        assert np.array_equal(res.outliers, ref[t].outliers)
    assert np.array_equal(resumed.core, straight.core)


def test_checkpoint_rejects_other_files(tmp_path):
    np.savez(tmp_path / "x.npz", magic=np.array("nope"), version=np.array(1))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
