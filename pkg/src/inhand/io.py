"""Model, scenario and artifact file formats.

Hand and object descriptions are YAML. Poses are written ``{p: [x, y, z],
rpy: [roll, pitch, yaw]}`` or ``{p: ..., quat: [x, y, z, w]}``.

Hand file::

    name: three-finger
    base: {p: [0, 0, 0.17]}
    palm: {center: [0.025, 0, 0.01], half_extents: [0.06, 0.065, 0.01]}
    home: [...]                      # optional, one value per joint
    fingers:
      - name: thumb
        base: {p: [0, -0.045, 0]}
        joints:
          - {name: t0, axis: [0, 1, 0], origin: {p: [0, 0, 0]}, limits: [-0.5, 0.5]}
        links:
          - {name: t0, end: [0, 0, 0], radius: 0.005, contact_points: [[0, 0.005, -0.035]]}

Each finger lists one link per joint. Object file::

    name: bar
    mass: 0.2
    inertia: [ixx, iyy, izz]         # or a full 3x3 matrix
    primitives:
      - {type: box, center: [0, 0, 0], half_extents: [0.08, 0.015, 0.015]}
      - {type: capsule, a: [...], b: [...], radius: 0.01}
      - {type: sphere, center: [...], radius: 0.01}
    contacts:
      - {name: T0, point: [...], normal: [...], tangent: [...], approach: [[...]]}

Tables (trajectories, logs, paths) are CSV with one schema line
``# schema: <name>/<version>`` ahead of the column header.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .collision import Box, Capsule, Sphere
from .geometry import Pose, rpy_to_matrix
from .model import ContactCandidate, Finger, HandModel, Joint, Link, ModelError, ObjectModel

TABLE_SCHEMA_PREFIX = "# schema: "


def read_yaml(path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path) as fh:
        return yaml.safe_load(fh)


def _vec(x, n=3, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ModelError(f"{name}: expected {n} values, got {list(v)}")
    return v


def parse_pose(d: dict | None) -> Pose:
    if d is None:
        return Pose()
    p = _vec(d.get("p", [0, 0, 0]), name="pose p")
    if "quat" in d:
        return Pose.from_quat(p, _vec(d["quat"], 4, "pose quat"))
    return Pose(p, rpy_to_matrix(*_vec(d.get("rpy", [0, 0, 0]), name="pose rpy")))


def pose_dict(pose: Pose) -> dict:
    return {"p": [float(x) for x in pose.p], "quat": [float(x) for x in pose.quat]}


def parse_primitive(d: dict):
    kind = d.get("type")
    if kind == "box":
        R = rpy_to_matrix(*_vec(d.get("rpy", [0, 0, 0]))) if "rpy" in d else np.eye(3)
        return Box(_vec(d.get("center", [0, 0, 0])), _vec(d["half_extents"]), R)
    if kind == "capsule":
        return Capsule(_vec(d["a"]), _vec(d["b"]), float(d["radius"]))
    if kind == "sphere":
        return Sphere(_vec(d.get("center", [0, 0, 0])), float(d["radius"]))
    raise ModelError(f"unknown primitive type {kind!r}")


def parse_hand(d: dict) -> HandModel:
    fingers = []
    for fd in d["fingers"]:
        joints = [Joint(j["name"], _vec(j["axis"]), parse_pose(j.get("origin")), float(j["limits"][0]),
                        float(j["limits"][1])) for j in fd["joints"]]
        links = [Link(l["name"], _vec(l.get("end", [0, 0, 0])), float(l.get("radius", 0.005)),
                      [_vec(c) for c in l.get("contact_points", [])]) for l in fd["links"]]
        fingers.append(Finger(fd["name"], parse_pose(fd.get("base")), joints, links))
    palm = d.get("palm", {"center": [0, 0, 0], "half_extents": [0.01, 0.01, 0.01]})
    palm_box = parse_primitive({"type": "box", **palm})
    home = d.get("home")
    return HandModel(d.get("name", "hand"), fingers, palm_box, parse_pose(d.get("base")),
                     None if home is None else np.asarray(home, dtype=float))


def parse_object(d: dict) -> ObjectModel:
    I = np.asarray(d["inertia"], dtype=float)
    if I.shape == (3,):
        I = np.diag(I)
    contacts = []
    for c in d.get("contacts", []):
        n = _vec(c["normal"])
        t = _vec(c["tangent"])
        appr = c.get("approach")
        contacts.append(ContactCandidate(c["name"], _vec(c["point"]), n / np.linalg.norm(n), t / np.linalg.norm(t),
                                         None if appr is None else [_vec(a) for a in appr]))
    prims = [parse_primitive(p) for p in d.get("primitives", [])]
    return ObjectModel(d.get("name", "object"), float(d["mass"]), I, contacts, prims)


def load_hand(path) -> HandModel:
    return parse_hand(read_yaml(path))


def load_object(path) -> ObjectModel:
    return parse_object(read_yaml(path))


def write_table(path, schema: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a schema line; floats use ``repr`` so reloading is lossless."""
    path = Path(path)
    buf = _io.StringIO()
    buf.write(f"{TABLE_SCHEMA_PREFIX}{schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())
    return path


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def read_table(path, schema: str | None = None) -> tuple[str, list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(TABLE_SCHEMA_PREFIX):
        raise ValueError(f"{path}: missing schema line")
    found = lines[0][len(TABLE_SCHEMA_PREFIX):].strip()
    if schema is not None and found.split("/")[0] != schema.split("/")[0]:
        raise ValueError(f"{path}: schema {found!r}, expected {schema!r}")
    rd = list(csv.reader(lines[1:]))
    return found, rd[0], rd[1:]


def read_numeric_table(path, schema: str | None = None) -> tuple[list[str], np.ndarray]:
    _, cols, rows = read_table(path, schema)
    return cols, np.array([[float(x) for x in r] for r in rows]).reshape(-1, len(cols))


TRAJ_SCHEMA = "inhand-trajectory/1"
TRAJ_COLUMNS = (["t", "px", "py", "pz", "qx", "qy", "qz", "qw", "vx", "vy", "vz", "wx", "wy", "wz",
                 "vdx", "vdy", "vdz", "wdx", "wdy", "wdz", "grasp_id"])
PATH_SCHEMA = "inhand-path/1"
PATH_COLUMNS = ["px", "py", "pz", "qx", "qy", "qz", "qw", "witness"]
TIMESTAMP_SCHEMA = "inhand-timestamps/1"


def write_path(path, pose_path) -> Path:
    rows = [list(w.p) + list(w.quat) + [-1 if g is None else g]
            for w, g in zip(pose_path.waypoints, pose_path.witnesses)]
    return write_table(path, PATH_SCHEMA, PATH_COLUMNS, rows)


def read_path(path):
    from .traj import PosePath
    _, data = read_numeric_table(path, PATH_SCHEMA)
    wps = [Pose.from_quat(r[:3], r[3:7]) for r in data]
    wit = [None if r[7] < 0 else int(r[7]) for r in data]
    return PosePath(wps, wit)


def write_jsonl(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    return path


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
