"""Persistence: descriptions (JSON), datasets and models (binary), plans and
logs (CSV), run configuration (INI).

Binary files are a magic line, a little-endian uint64 header length, a JSON
header and little-endian float64 payload.  Floats in text files use Python's
shortest round-tripping repr, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import configparser
import hashlib
import io as _io
import json
import struct

import numpy as np

from quadplan.gait import ContactPhase, MotionDescription, MotionPattern
from quadplan.ik import WholeBodyPlan
from quadplan.sim import TrackingLog
from quadplan.surrogate.mlp import MlpParams
from quadplan.surrogate.train import Dataset, SurrogateModel

FORMAT_VERSION = 1
DESC_TAG = "quadplan-description"
DATASET_MAGIC = b"QPDATA1\n"
MODEL_MAGIC = b"QPMODEL1\n"


class FormatError(ValueError):
    pass


def _f(v) -> str:
    return repr(float(v))


def _canonical(obj):
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- config

def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def config_hash(cp: configparser.ConfigParser) -> str:
    """Hash of the parsed configuration, independent of layout and comments."""
    canon = {s: dict(sorted(cp[s].items())) for s in sorted(cp.sections())}
    return hashlib.sha256(_dumps(canon).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- descriptions

def description_to_dict(desc: MotionDescription) -> dict:
    return {
        "format": DESC_TAG, "version": FORMAT_VERSION, "kind": desc.kind, "dt": desc.dt,
        "horizon": desc.horizon, "swing_height": desc.swing_height, "start": list(desc.start),
        "plan": [[{"effector": ph.effector, "t_start": ph.t_start, "t_end": ph.t_end,
                   "in_stance": bool(ph.in_stance), "stance_pos": list(map(float, ph.stance_pos))}
                  for ph in phases] for phases in desc.plan],
        "patterns": [{"index": p.index, "t_start": p.t_start, "t_end": p.t_end, "frame": list(p.frame),
                      "is_last": bool(p.is_last)} for p in desc.patterns],
        "com_via_points": [{"t": t, "pos": list(map(float, p))} for t, p in desc.com_via_points],
    }


def description_from_dict(d: dict) -> MotionDescription:
    if d.get("format") != DESC_TAG:
        raise FormatError("not a motion description file")
    if d.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported description version {d.get('version')}")
    plan = [[ContactPhase(int(p["effector"]), float(p["t_start"]), float(p["t_end"]), bool(p["in_stance"]),
                          np.array(p["stance_pos"], dtype=float)) for p in phases] for phases in d["plan"]]
    patterns = [MotionPattern(int(p["index"]), float(p["t_start"]), float(p["t_end"]),
                              tuple(float(v) for v in p["frame"]), bool(p["is_last"])) for p in d["patterns"]]
    via = [(float(v["t"]), np.array(v["pos"], dtype=float)) for v in d["com_via_points"]]
    return MotionDescription(plan=plan, patterns=patterns, com_via_points=via, dt=float(d["dt"]),
                             horizon=int(d["horizon"]), swing_height=float(d["swing_height"]),
                             kind=d["kind"], start=tuple(float(v) for v in d["start"]))


def save_description(desc: MotionDescription, path, extra: dict | None = None) -> None:
    d = description_to_dict(desc)
    if extra:
        d["meta"] = extra
    with open(path, "w") as fh:
        fh.write(json.dumps(_canonical(d), sort_keys=True, indent=1) + "\n")


def load_description(path, with_meta: bool = False):
    """The description, plus its ``meta`` dict when ``with_meta`` is set."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    desc = description_from_dict(d)
    return (desc, d.get("meta", {})) if with_meta else desc


# ---------------------------------------------------------------- binary containers

def _write_binary(path, magic: bytes, header: dict, arrays) -> None:
    hb = _dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_binary(path, magic: bytes):
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(magic):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    off = len(magic)
    (hl,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + hl].decode())
    off += hl
    return header, raw, off


def _take(raw, off, shape):
    count = int(np.prod(shape)) if len(shape) else 1
    a = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
    return a, off + 8 * count


def save_dataset(ds: Dataset, path) -> None:
    header = {"version": FORMAT_VERSION, "rows": ds.rows, "n_features": ds.X.shape[1],
              "n_targets": ds.Y.shape[1], "groups": ds.groups, "meta": ds.meta}
    _write_binary(path, DATASET_MAGIC, header, [np.hstack([ds.X, ds.Y])])


def load_dataset(path) -> Dataset:
    h, raw, off = _read_binary(path, DATASET_MAGIC)
    if h["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {h['version']}")
    nf, nt = h["n_features"], h["n_targets"]
    rows, _ = _take(raw, off, (h["rows"], nf + nt))
    meta = h["meta"]
    if "stats" in meta:
        meta["stats"] = {k: np.array(v, dtype=float) for k, v in meta["stats"].items()}
    return Dataset(rows[:, :nf], rows[:, nf:], np.array(h["groups"], dtype=np.int64), meta)


def save_model(model: SurrogateModel, path) -> None:
    p = model.params
    header = {"version": FORMAT_VERSION, "shapes": [list(w.shape) for w in p.weights], "step": p.step,
              "layout": model.layout, "meta": model.meta, "n_in": int(p.weights[0].shape[0]),
              "n_out": int(p.weights[-1].shape[1])}
    arrays = [*p.weights, *p.biases, *p.m_w, *p.v_w, *p.m_b, *p.v_b,
              model.x_mean, model.x_std, model.y_mean, model.y_std]
    _write_binary(path, MODEL_MAGIC, header, arrays)


def load_model(path) -> SurrogateModel:
    h, raw, off = _read_binary(path, MODEL_MAGIC)
    if h["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {h['version']}")
    shapes = [tuple(s) for s in h["shapes"]]
    groups = []
    for kind in ("w", "b", "w", "w", "b", "b"):
        out = []
        for s in shapes:
            a, off = _take(raw, off, s if kind == "w" else (s[1],))
            out.append(a)
        groups.append(out)
    stats = []
    for size in (h["n_in"], h["n_in"], h["n_out"], h["n_out"]):
        a, off = _take(raw, off, (size,))
        stats.append(a)
    params = MlpParams(groups[0], groups[1], groups[2], groups[3], groups[4], groups[5], int(h["step"]))
    return SurrogateModel(params, *stats, layout=h["layout"], meta=h["meta"])


# ---------------------------------------------------------------- CSV tables

def _write_csv(path, tag: str, meta: dict, columns, table) -> None:
    buf = _io.StringIO()
    buf.write(f"# {tag} v{FORMAT_VERSION}\n")
    for k in sorted(meta):
        buf.write(f"# {k}={_dumps(meta[k])}\n")
    buf.write(",".join(columns) + "\n")
    for row in table:
        buf.write(",".join(_f(v) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _read_csv(path, tag: str):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# {tag} v"):
        raise FormatError(f"{path}: not a {tag} file")
    if lines[0] != f"# {tag} v{FORMAT_VERSION}":
        raise FormatError(f"{path}: unsupported version ({lines[0]})")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        k, v = lines[i][2:].split("=", 1)
        meta[k] = json.loads(v)
        i += 1
    cols = lines[i].split(",")
    body = [ln for ln in lines[i + 1:] if ln]
    table = np.array([[float(v) for v in ln.split(",")] for ln in body]).reshape(len(body), len(cols))
    return meta, cols, table


def _names(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


_PLAN_BLOCKS = (("base_pos", 3), ("base_quat", 4), ("joint_pos", 12), ("velocity", 18), ("com_ref", 3),
                ("lin_ref", 3), ("ang_ref", 3), ("wrench_ref", 6), ("com_kin", 3), ("stance", 4),
                ("foot_pos", 12), ("foot_vel", 12))


def save_plan(plan: WholeBodyPlan, path, meta: dict | None = None) -> None:
    cols = ["t"] + [c for name, n in _PLAN_BLOCKS for c in _names(name + "_", n)]
    n = plan.horizon + 1
    parts = [np.arange(n)[:, None] * plan.dt]
    for name, width in _PLAN_BLOCKS:
        parts.append(np.asarray(getattr(plan, name), dtype=float).reshape(n, width))
    m = dict(meta or {})
    m.update(dt=plan.dt, source=plan.source, limit_violations=plan.limit_violations)
    _write_csv(path, "quadplan-plan", m, cols, np.hstack(parts))


def load_plan(path):
    meta, cols, table = _read_csv(path, "quadplan-plan")
    n = table.shape[0]
    kw, off = {}, 1
    for name, width in _PLAN_BLOCKS:
        kw[name] = table[:, off:off + width]
        off += width
    kw["stance"] = kw["stance"] > 0.5
    kw["foot_pos"] = kw["foot_pos"].reshape(n, 4, 3)
    kw["foot_vel"] = kw["foot_vel"].reshape(n, 4, 3)
    plan = WholeBodyPlan(dt=float(meta["dt"]), source=meta.get("source", "custom"),
                         limit_violations=int(meta.get("limit_violations", 0)), **kw)
    return plan, meta


_LOG_BLOCKS = (("plan_com", 3), ("sim_com", 3), ("plan_lin", 3), ("sim_lin", 3), ("plan_ang", 3),
               ("sim_ang", 3), ("plan_quat", 4), ("sim_quat", 4))


def save_log(log: TrackingLog, path, meta: dict | None = None) -> None:
    k = log.rows
    cols = ["t"] + [c for name, n in _LOG_BLOCKS for c in _names(name + "_", n)] + ["slack"] + \
        _names("force_", 12)
    parts = [np.arange(k)[:, None] * log.dt]
    for name, width in _LOG_BLOCKS:
        parts.append(getattr(log, name)[:k])
    slack = np.zeros((k, 1))
    forces = np.zeros((k, 12))
    slack[:k - 1, 0] = log.slack[:k - 1]
    forces[:k - 1] = log.forces[:k - 1].reshape(-1, 12)
    m = dict(meta or {})
    m.update(dt=log.dt, fell=log.fell, fall_step=log.fall_step, steps=log.steps, **log.meta)
    _write_csv(path, "quadplan-log", m, cols, np.hstack(parts + [slack, forces]))


def load_log(path) -> TrackingLog:
    meta, cols, table = _read_csv(path, "quadplan-log")
    kw, off = {}, 1
    for name, width in _LOG_BLOCKS:
        kw[name] = table[:, off:off + width]
        off += width
    slack = table[:-1, off]
    forces = table[:-1, off + 1:off + 13].reshape(-1, 4, 3)
    extra = {k: meta[k] for k in ("seed", "disturbance_std", "source", "feedforward", "com_reference") if k in meta}
    return TrackingLog(float(meta["dt"]), forces=forces, torques=np.zeros_like(forces), slack=slack,
                       fell=bool(meta["fell"]), fall_step=int(meta["fall_step"]), steps=int(meta["steps"]),
                       meta=extra, **kw)


def save_table(path, tag: str, columns, rows, meta: dict | None = None) -> None:
    _write_csv(path, tag, meta or {}, columns, rows)


def load_table(path, tag: str):
    return _read_csv(path, tag)
