import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stopflow import catalog as C
from stopflow import io
from stopflow.control import solve_controlled
from stopflow.sde import accuracy_profile, simulate_stopped
from stopflow.solver import extract_boundaries, solve


@pytest.fixture(scope="module")
def wald():
    p = replace(C.build("wald_rising_cost"), grid=C._wald_grid(nx=51, nt=10))
    s = solve(p)
    return p, s, extract_boundaries(s)


def test_surface_csv_round_trip(tmp_path, wald):
    _, s, _ = wald
    got = io.read_surface_csv(io.write_surface_csv(tmp_path / "s.csv", s))
    assert np.array_equal(got["t_nodes"], s.t_nodes) and np.array_equal(got["x_nodes"], s.x_nodes)
    assert np.array_equal(got["values"], s.values) and np.array_equal(got["region"], s.region)
    assert np.array_equal(got["residual"], s.residual)


def test_controlled_surface_round_trip(tmp_path):
    p = replace(C.build("wald_menu"), grid=C._wald_grid(nx=41, nt=5))
    s = solve_controlled(p)
    got = io.read_surface_csv(io.write_surface_csv(tmp_path / "s.csv", s))
    assert set(got["action"].ravel()) <= set(s.action_names) | {""}
    b = io.read_stpf(io.write_stpf(tmp_path / "s.stpf", s))
    assert np.array_equal(b["action"], s.action) and b["action_names"] == tuple(s.action_names)


def test_stpf_round_trip(tmp_path, wald):
    _, s, _ = wald
    b = io.read_stpf(io.write_stpf(tmp_path / "s.stpf", s))
    for key in ("values", "residual", "obstacle", "region"):
        assert np.array_equal(b[key], getattr(s, key))
    assert b["scale"] == s.scale and "action" not in b
    assert (tmp_path / "s.stpf").read_bytes()[:5] == b"STPF1"


def test_stpf_rejects_garbage(tmp_path, wald):
    _, s, _ = wald
    path = io.write_stpf(tmp_path / "s.stpf", s)
    data = path.read_bytes()
    (tmp_path / "bad.stpf").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(io.FormatError):
        io.read_stpf(tmp_path / "bad.stpf")
    (tmp_path / "short.stpf").write_bytes(data[:100])
    with pytest.raises(io.FormatError):
        io.read_stpf(tmp_path / "short.stpf")


def test_boundary_round_trip_with_sentinels(tmp_path):
    p = C.build("put_stationary")
    fb = extract_boundaries(solve(p), x_c=1.0)
    got = io.read_boundary_csv(io.write_boundary_csv(tmp_path / "b.csv", fb))
    assert np.array_equal(got["lower"], fb.lower)
    assert np.all(np.isnan(got["upper"])) and np.all(np.isnan(fb.upper))
    assert (tmp_path / "b.csv").read_text().splitlines()[1].endswith(",")


def test_ensemble_and_profile_round_trip(tmp_path, wald):
    p, _, fb = wald
    ens = simulate_stopped(p, fb, 400, 3, 1e-3, x0=0.5)
    got = io.read_ensemble_csv(io.write_ensemble_csv(tmp_path / "e.csv", ens))
    for key in ("path_id", "tau", "x_tau", "payoff", "alternative", "deadline_hit"):
        assert np.array_equal(got[key], getattr(ens, key)), key
    prof = accuracy_profile(ens, fb, bins=4)
    rows = io.read_profile_csv(io.write_profile_csv(tmp_path / "p.csv", prof))
    assert len(rows) == len(prof.rows)
    for a, b in zip(rows, prof.rows):
        assert a["count"] == b["count"] and (a["accuracy"] == b["accuracy"] or np.isnan(b["accuracy"]))


def test_wrong_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(io.FormatError):
        io.read_boundary_csv(tmp_path / "x.csv")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(allow_nan=True, allow_infinity=False)))
def test_float_text_round_trip(vals):
    for v in vals:
        back = io._parse(io._num(v))
        assert (np.isnan(v) and np.isnan(back)) or back == v


def test_json_versioning(tmp_path):
    path = io.write_json(tmp_path / "r.json", {"x": np.float64(1.5), "a": np.arange(3), "n": np.nan}, "R")
    doc = io.read_json(path)
    assert doc == {"x": 1.5, "a": [0, 1, 2], "n": None, "version": 1, "kind": "R"}
    path.write_text(json.dumps({"version": 99}))
    with pytest.raises(io.FormatError):
        io.read_json(path)


def test_manifest_written_last(tmp_path):
    m = io.RunManifest("solve")
    m.add(tmp_path / "missing.csv")
    with pytest.raises(io.FormatError):
        m.write(tmp_path)
    assert not (tmp_path / "manifest.json").exists()
    (tmp_path / "missing.csv").write_text("t\n")
    doc = io.read_json(m.write(tmp_path))
    assert doc["outputs"] == [str(tmp_path / "missing.csv")] and doc["wall_clock"] >= 0
