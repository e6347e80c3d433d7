"""Artifact readers and writers: CSV tables, the STPF1 binary surface format,
versioned JSON reports and the run manifest."""
from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .solver import FreeBoundary, ValueSurface

JSON_VERSION = 1
STPF_MAGIC = b"STPF1\x00\x00\x00"
STPF_VERSION = 1
_STPF_HEAD = struct.Struct("<8sIIIId")   # magic, version, nt, nx, flags, scale


class FormatError(ValueError):
    pass


def _num(v) -> str:
    """Shortest round-trip text for a float; empty for NaN sentinels."""
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


def _parse(s: str) -> float:
    return float("nan") if s == "" else float(s)


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        head = next(r, None)
        if head is None or head[: len(header)] != list(header):
            raise FormatError(f"{path}: expected header {','.join(header)}")
        return head, list(r)


# -- surfaces ---------------------------------------------------------------------------

SURFACE_HEADER = ("t", "x", "value", "region", "residual")


def write_surface_csv(path, surface: ValueSurface) -> Path:
    header = SURFACE_HEADER + (("action",) if surface.action is not None else ())
    t, x = surface.t_nodes, surface.x_nodes
    rows = []
    for k in range(len(t)):
        for i in range(len(x)):
            row = [_num(t[k]), _num(x[i]), _num(surface.values[k, i]), int(surface.region[k, i]),
                   _num(surface.residual[k, i])]
            if surface.action is not None:
                a = int(surface.action[k, i])
                row.append(surface.action_names[a] if 0 <= a < len(surface.action_names) else "")
            rows.append(row)
    return _write_rows(path, header, rows)


def read_surface_csv(path) -> dict:
    head, rows = _read_rows(path, SURFACE_HEADER)
    t = np.array([_parse(r[0]) for r in rows])
    x = np.array([_parse(r[1]) for r in rows])
    tn, xn = np.unique(t), np.unique(x)
    shape = (len(tn), len(xn))
    if len(rows) != shape[0] * shape[1]:
        raise FormatError(f"{path}: rows do not form a (t, x) grid")
    out = {"t_nodes": tn, "x_nodes": xn,
           "values": np.array([_parse(r[2]) for r in rows]).reshape(shape),
           "region": np.array([int(r[3]) for r in rows], dtype=np.int8).reshape(shape),
           "residual": np.array([_parse(r[4]) for r in rows]).reshape(shape)}
    if "action" in head:
        out["action"] = np.array([r[5] for r in rows], dtype=object).reshape(shape)
    return out


def write_stpf(path, surface: ValueSurface) -> Path:
    """Binary surface: header then little-endian float64 t, x, values, residual,
    obstacle, int8 region and (flag bit 0) int16 action indices."""
    nt, nx = surface.values.shape
    has_action = surface.action is not None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_STPF_HEAD.pack(STPF_MAGIC, STPF_VERSION, nt, nx, int(has_action), float(surface.scale)))
        for arr in (surface.t_nodes, surface.x_nodes, surface.values, surface.residual, surface.obstacle):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(surface.region, dtype="i1").tobytes())
        if has_action:
            fh.write(np.ascontiguousarray(surface.action, dtype="<i2").tobytes())
            names = json.dumps(list(surface.action_names)).encode("utf-8")
            fh.write(struct.pack("<I", len(names)) + names)
    return path


def read_stpf(path) -> dict:
    data = Path(path).read_bytes()
    if len(data) < _STPF_HEAD.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nt, nx, flags, scale = _STPF_HEAD.unpack_from(data)
    if magic != STPF_MAGIC:
        raise FormatError(f"{path}: not an STPF1 file")
    if version != STPF_VERSION:
        raise FormatError(f"{path}: unsupported STPF version {version}")
    off = _STPF_HEAD.size

    def take(n, dtype):
        nonlocal off
        size = n * np.dtype(dtype).itemsize
        if off + size > len(data):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=off).copy()
        off += size
        return arr

    out = {"t_nodes": take(nt, "<f8"), "x_nodes": take(nx, "<f8"), "scale": scale}
    for key in ("values", "residual", "obstacle"):
        out[key] = take(nt * nx, "<f8").reshape(nt, nx)
    out["region"] = take(nt * nx, "i1").reshape(nt, nx)
    if flags & 1:
        out["action"] = take(nt * nx, "<i2").reshape(nt, nx)
        (n,) = struct.unpack_from("<I", data, off)
        out["action_names"] = tuple(json.loads(data[off + 4: off + 4 + n].decode("utf-8")))
    return out


# -- boundaries, ensembles, profiles --------------------------------------------------------

BOUNDARY_HEADER = ("t", "b_lower", "b_upper")
ENSEMBLE_HEADER = ("path_id", "tau", "x_tau", "payoff", "alternative", "deadline_hit")
PROFILE_HEADER = ("t_bin_lo", "t_bin_hi", "alt", "accuracy", "ci_lo", "ci_hi", "count")


def write_boundary_csv(path, boundary: FreeBoundary) -> Path:
    rows = [[_num(t), _num(lo), _num(hi)] for t, lo, hi in
            zip(boundary.t_nodes, boundary.lower, boundary.upper)]
    return _write_rows(path, BOUNDARY_HEADER, rows)


def read_boundary_csv(path) -> dict:
    _, rows = _read_rows(path, BOUNDARY_HEADER)
    arr = np.array([[_parse(c) for c in r[:3]] for r in rows]).reshape(-1, 3)
    return {"t": arr[:, 0], "lower": arr[:, 1], "upper": arr[:, 2]}


def write_ensemble_csv(path, ens) -> Path:
    rows = [[int(p), _num(t), _num(x), _num(v), int(a), int(d)] for p, t, x, v, a, d in
            zip(ens.path_id, ens.tau, ens.x_tau, ens.payoff, ens.alternative, ens.deadline_hit)]
    return _write_rows(path, ENSEMBLE_HEADER, rows)


def read_ensemble_csv(path) -> dict:
    _, rows = _read_rows(path, ENSEMBLE_HEADER)
    return {"path_id": np.array([int(r[0]) for r in rows], dtype=np.uint64),
            "tau": np.array([_parse(r[1]) for r in rows]),
            "x_tau": np.array([_parse(r[2]) for r in rows]),
            "payoff": np.array([_parse(r[3]) for r in rows]),
            "alternative": np.array([int(r[4]) for r in rows], dtype=np.int8),
            "deadline_hit": np.array([bool(int(r[5])) for r in rows])}


def write_profile_csv(path, profile) -> Path:
    rows = [[_num(r["t_lo"]), _num(r["t_hi"]), r["alt"], _num(r["accuracy"]), _num(r["ci_lo"]),
             _num(r["ci_hi"]), r["count"]] for r in profile.rows]
    return _write_rows(path, PROFILE_HEADER, rows)


def read_profile_csv(path) -> list[dict]:
    _, rows = _read_rows(path, PROFILE_HEADER)
    return [{"t_lo": _parse(r[0]), "t_hi": _parse(r[1]), "alt": int(r[2]), "accuracy": _parse(r[3]),
             "ci_lo": _parse(r[4]), "ci_hi": _parse(r[5]), "count": int(r[6])} for r in rows]


# -- JSON ------------------------------------------------------------------------------

def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj if obj is None or isinstance(obj, str) else repr(obj)


def write_json(path, doc: dict, kind: str | None = None) -> Path:
    body = dict(jsonable(doc))
    body.setdefault("version", JSON_VERSION)
    if kind:
        body.setdefault("kind", kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version", JSON_VERSION) > JSON_VERSION:
        raise FormatError(f"{path}: report version {doc['version']} is newer than supported")
    return doc


# -- manifest ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    configs: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    tool_version: str = ""
    seeds: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    passed: bool | None = None
    summary: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def add(self, path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_t0")
        return d

    def write(self, out_dir) -> Path:
        """Write ``manifest.json`` into ``out_dir``; call last."""
        self.wall_clock = time.perf_counter() - self._t0
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise FormatError(f"manifest lists missing artifacts: {missing}")
        return write_json(Path(out_dir) / "manifest.json", self.to_dict(), kind="RunManifest")
