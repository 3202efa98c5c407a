"""File formats shared by the command-line front end.

Frame, pose and fit-result streams are JSON Lines, one record per frame.
Sensor images use the binary map container from :mod:`mocapsolve.heatmap`.
"""
from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .body import BodyParams, ParameterError
from .capture import Sensor, SensorFrame
from .corruption import MarkerFrame
from .heatmap import pack_container, unpack_container


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    # repr-exact floats and sorted keys make the bytes reproducible
    return json.dumps(obj, sort_keys=True, default=_default)


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def write_json(path, obj):
    atomic_write_text(path, dumps(obj) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path, records):
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_jsonl(path):
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}:{n}: invalid JSON ({exc})") from exc
    return out


# ------------------------------------------------------------------ streams

def write_frames(path, frames):
    write_jsonl(path, [f.to_dict() for f in sorted(frames, key=lambda f: f.frame_id)])


def read_frames(path):
    return [MarkerFrame.from_dict(r) for r in read_jsonl(path)]


def pose_record(frame_id, params):
    return {"frame_id": int(frame_id), **params.to_dict()}


def write_poses(path, items):
    """`items` are (frame_id, BodyParams) pairs."""
    write_jsonl(path, [pose_record(i, p) for i, p in sorted(items, key=lambda x: x[0])])


def read_poses(path):
    return [(int(r["frame_id"]), BodyParams.from_dict(r)) for r in read_jsonl(path)]


def read_fits(path):
    """Fit-result records keyed by frame id, with the parameters parsed."""
    out = {}
    for r in read_jsonl(path):
        out[int(r["frame_id"])] = (BodyParams.from_dict(r), r)
    return out


# ------------------------------------------------------------------ capture

def write_sensor_frame(path, frame, sensor_id):
    atomic_write_bytes(path, pack_container(sensor_id, np.stack([frame.ir, frame.depth])))


def read_sensor_frame(path, timestamp=0.0):
    code, data = unpack_container(Path(path).read_bytes())
    if data.shape[0] != 2:
        raise ParameterError(f"{path}: sensor frames carry 2 channels (ir, depth)")
    return code, SensorFrame(data[0], data[1], timestamp)


def write_rig(path, sensors, extra=None):
    write_json(path, {"sensors": [s.to_dict() for s in sensors], **(extra or {})})


def read_rig(path):
    d = read_json(path)
    if not d.get("sensors"):
        raise ParameterError(f"{path}: rig lists no sensors")
    return [Sensor.from_dict(s) for s in d["sensors"]]


# ----------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    seed: int
    version: str
    config_paths: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    stage_seconds: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def stage(self, name):
        """Record seconds elapsed since the previous stage mark under `name`."""
        now = time.perf_counter()
        self.stage_seconds[name] = now - self._t0
        self._t0 = now

    def to_dict(self):
        d = asdict(self)
        d.pop("_t0")
        return d

    def write(self, path):
        write_json(path, self.to_dict())
