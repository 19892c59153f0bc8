"""Binary CSI / CIR containers and the ground-truth sidecar.

CSI trace (``CIRS1``)::

    b"CIRS1" | uint32 LE header length | UTF-8 JSON header | records

Each record is a little-endian float64 timestamp followed by 2*K float32
values (real and imaginary parts interleaved). The header carries the
system config, the sample rate and the frame count.

CIR container (``CIRT1``) uses the same layout with |L| taps per record and
``tap_offset`` in the header. Ground truth is JSON lines: one ``scene``
record followed by one ``frame`` record per frame.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .channel_model import CsiSeries, Distortions, GroundTruth, SystemConfig
from .errors import ConfigError, TraceFormatError
from .recovery import CirSeries

CSI_MAGIC = b"CIRS1"
CIR_MAGIC = b"CIRT1"


def _record_dtype(width):
    return np.dtype([("t", "<f8"), ("v", "<f4", (2 * width,))])


def _write(path, magic, header, timestamps, values):
    path = Path(path)
    raw = json.dumps(header, sort_keys=True).encode()
    rec = np.empty(len(timestamps), dtype=_record_dtype(values.shape[1]))
    rec["t"] = timestamps
    inter = np.empty((values.shape[0], 2 * values.shape[1]), dtype="<f4")
    inter[:, 0::2] = values.real
    inter[:, 1::2] = values.imag
    rec["v"] = inter
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(rec.tobytes())
    return path


def _read(path, magic, width_key):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc}") from exc
    if not data.startswith(magic):
        raise TraceFormatError(f"{path.name}: bad magic, expected {magic.decode()}")
    if len(data) < len(magic) + 4:
        raise TraceFormatError(f"{path.name}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, len(magic))
    start = len(magic) + 4
    try:
        header = json.loads(data[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"{path.name}: header is not valid JSON") from exc
    width = header.get(width_key)
    n = header.get("n_frames")
    if not isinstance(width, int) or not isinstance(n, int):
        raise TraceFormatError(f"{path.name}: header lacks {width_key} / n_frames")
    dt = _record_dtype(width)
    body = data[start + hlen :]
    if len(body) != n * dt.itemsize:
        raise TraceFormatError(f"{path.name}: expected {n} records of {dt.itemsize} bytes, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt)
    v = rec["v"].astype(np.float64)
    values = v[:, 0::2] + 1j * v[:, 1::2]
    return header, rec["t"].astype(np.float64), values


def write_trace(path, frames: CsiSeries, scene=None, d0_m=None):
    header = {
        "format": "CIRS1",
        "config": frames.cfg.to_dict(),
        "n_subcarriers": len(frames.cfg.active_subcarriers),
        "n_frames": len(frames),
        "sample_rate_hz": float(frames.sample_rate_hz) if len(frames) > 1 else None,
        "scene": scene,
        "d0_m": d0_m,
    }
    return _write(path, CSI_MAGIC, header, frames.timestamps, frames.values)


def read_trace(path):
    """Returns (CsiSeries, header dict)."""
    header, t, values = _read(path, CSI_MAGIC, "n_subcarriers")
    try:
        cfg = SystemConfig.from_dict(header["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise TraceFormatError(f"{Path(path).name}: bad config in header: {exc}") from exc
    if values.shape[1] != len(cfg.active_subcarriers):
        raise TraceFormatError("record width does not match the subcarrier set")
    return CsiSeries(cfg, t, values), header


def write_cir(path, cir: CirSeries, cfg: SystemConfig | None = None):
    header = {
        "format": "CIRT1",
        "tap_offset": int(cir.tap_offset),
        "n_taps": int(cir.taps.shape[0]),
        "n_frames": int(cir.n_frames),
        "config": cfg.to_dict() if cfg is not None else None,
    }
    return _write(path, CIR_MAGIC, header, cir.timestamps, cir.taps.T)


def read_cir(path):
    header, t, values = _read(path, CIR_MAGIC, "n_taps")
    offset = header.get("tap_offset")
    if not isinstance(offset, int):
        raise TraceFormatError("CIR header lacks tap_offset")
    return CirSeries(offset, values.T.copy(), t)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def write_ground_truth(path, gt: GroundTruth):
    path = Path(path)
    scene = {
        "record": "scene",
        "los_delay_s": gt.los_delay_s,
        "d0_m": gt.d0_m,
        "noise_std": gt.noise_std,
        "targets": gt.targets,
        "static_paths": gt.static_paths,
        "meta": gt.meta,
    }
    d = gt.distortions
    with open(path, "w") as fh:
        fh.write(json.dumps(scene, sort_keys=True, default=_jsonable) + "\n")
        for i, t in enumerate(gt.timestamps):
            g = gt.dynamic_gains[i]
            rec = {
                "record": "frame",
                "t": float(t),
                "beta": float(d.beta[i]),
                "theta": float(d.theta[i]),
                "eps_s": float(d.eps_s[i]),
                "delays_s": gt.dynamic_delays_s[i].tolist(),
                "gains": np.column_stack([g.real, g.imag]).tolist(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_ground_truth(path) -> GroundTruth:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc}") from exc
    recs = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            recs.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path.name}: line {no} is not valid JSON") from exc
    if not recs or recs[0].get("record") != "scene":
        raise TraceFormatError(f"{path.name}: first record must be the scene record")
    scene = recs[0]
    frames = [r for r in recs[1:] if r.get("record") == "frame"]
    n_t = len(scene.get("targets", []))
    t = np.array([r["t"] for r in frames], dtype=float)
    delays = np.array([r["delays_s"] for r in frames], dtype=float).reshape(len(frames), n_t)
    gains = np.array([r["gains"] for r in frames], dtype=float).reshape(len(frames), n_t, 2)
    dist = Distortions(
        np.array([r["beta"] for r in frames], dtype=float),
        np.array([r["theta"] for r in frames], dtype=float),
        np.array([r["eps_s"] for r in frames], dtype=float),
    )
    return GroundTruth(
        timestamps=t,
        distortions=dist,
        los_delay_s=float(scene["los_delay_s"]),
        dynamic_delays_s=delays,
        dynamic_gains=gains[..., 0] + 1j * gains[..., 1],
        d0_m=float(scene.get("d0_m") or 0.0),
        noise_std=float(scene.get("noise_std") or 0.0),
        targets=scene.get("targets", []),
        static_paths=scene.get("static_paths", []),
        meta=scene.get("meta", {}),
    )
