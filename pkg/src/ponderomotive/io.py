"""Run configuration, CSV/JSON outputs and trace files.

Trace files are raw little-endian float32 samples (channels interleaved) next
to a JSON sidecar with the same stem and suffix ``.json``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import GAIN_MODES, TWO_PI, ParameterError, SystemParams
from .detection import DetectionChain, DetuningJitter
from .dsp import IQTrace, RawTrace

FORMAT_VERSION = 1
TRACE_SUFFIX = ".f32"


class ConfigError(ValueError):
    """Configuration file is malformed or violates the schema."""


# section -> {key: (type, required)}; "pos" marks values that must be > 0
_SCHEMA = {
    "system": {
        "kappa_hz": ("pos", True),
        "delta_hz": ("num", True),
        "omega_m_hz": ("pos", True),
        "gamma_m_hz": ("pos", True),
        "g_hz": ("nonneg", True),
        "n_bar": ("nonneg", False),
        "omega_s_hz": ("pos", False),
    },
    "detection": {
        "eps_cav": ("pos", False),
        "eps_det": ("pos", False),
        "p_lo_w": ("pos", False),
        "shot_noise_psd": ("pos", False),
        "detector_floor": ("nonneg", False),
    },
    "jitter": {
        "mean_delta_over_kappa": ("num", False),
        "sigma_over_kappa": ("nonneg", False),
        "n_points": ("int", False),
        "method": ("str", False),
    },
    "grid": {
        "f_min_hz": ("pos", False),
        "f_max_hz": ("pos", False),
        "n_points": ("int", False),
        "theta_min_deg": ("num", False),
        "theta_max_deg": ("num", False),
        "n_theta": ("int", False),
    },
    "synthesis": {
        "kind": ("str", False),
        "duration_s": ("pos", False),
        "sample_rate_hz": ("pos", False),
        "f_if_hz": ("pos", False),
        "iq_rate_hz": ("pos", False),
        "n_seeds": ("int", False),
        "drive_hz": ("pos", False),
        "drive_snr_db": ("num", False),
        "segment_length": ("int", False),
    },
    "fit": {
        "kind": ("str", False),
        "f_min_hz": ("pos", False),
        "f_max_hz": ("pos", False),
        "exclude_hz": ("list", False),
        "fit_amplitude": ("bool", False),
        "input": ("str", False),
    },
    "output": {
        "path": ("str", False),
        "format": ("str", False),
    },
}
_TOP = {"format_version", "gain_mode"} | set(_SCHEMA)


def _check_value(where, kind, v):
    if kind == "str":
        ok = isinstance(v, str)
    elif kind == "bool":
        ok = isinstance(v, bool)
    elif kind == "list":
        ok = isinstance(v, list)
    elif kind == "int":
        ok = isinstance(v, int) and not isinstance(v, bool) and v > 0
    else:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        if ok and kind == "pos":
            ok = v > 0
        if ok and kind == "nonneg":
            ok = v >= 0
    if not ok:
        expect = {"pos": "a positive number", "nonneg": "a number >= 0", "num": "a finite number",
                  "int": "a positive integer"}.get(kind, f"a {kind}")
        raise ConfigError(f"{where} must be {expect}, got {v!r}")


def validate_config(raw: dict) -> dict:
    """Check ``raw`` against the schema; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    version = raw.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}; expected {FORMAT_VERSION}")
    mode = raw.get("gain_mode", "full")
    if mode not in GAIN_MODES:
        raise ConfigError(f"gain_mode must be one of {GAIN_MODES}, got {mode!r}")
    for section, keys in _SCHEMA.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        extra = set(body) - set(keys)
        if extra:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
        for key, (kind, required) in keys.items():
            if key in body:
                _check_value(f"{section}.{key}", kind, body[key])
            elif required and section in raw:
                raise ConfigError(f"missing required key {section}.{key}")
    system = raw.get("system", {})
    if "n_bar" in system and "omega_s_hz" in system:
        raise ConfigError("give either system.n_bar or system.omega_s_hz, not both")
    for pair in raw.get("fit", {}).get("exclude_hz", []):
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, (int, float)) for x in pair)
                and 0 < pair[0] < pair[1]):
            raise ConfigError(f"fit.exclude_hz entries must be [lo, hi] with 0 < lo < hi, got {pair!r}")
    grid = raw.get("grid", {})
    if grid.get("f_min_hz", 0) >= grid.get("f_max_hz", math.inf):
        raise ConfigError("grid.f_min_hz must be below grid.f_max_hz")
    return raw


@dataclass
class RunConfig:
    """Validated run configuration with typed accessors."""

    raw: dict = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        validate_config(self.raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls(data, str(path))

    def section(self, name) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def format_version(self) -> int:
        return self.raw.get("format_version", FORMAT_VERSION)

    @property
    def gain_mode(self) -> str:
        return self.raw.get("gain_mode", "full")

    def system(self) -> SystemParams:
        s = self.section("system")
        if not s:
            raise ConfigError("config has no 'system' section")
        try:
            p = SystemParams.from_hz(s["kappa_hz"], s["delta_hz"], s["omega_m_hz"], s["gamma_m_hz"], s["g_hz"],
                                     s.get("n_bar", 0.0))
            if "omega_s_hz" in s:
                p = p.with_shifted_frequency(TWO_PI * s["omega_s_hz"])
        except ParameterError as exc:
            raise ConfigError(f"system: {exc}") from exc
        return p

    def chain(self) -> DetectionChain:
        d = self.section("detection")
        kw = {k: d[k] for k in ("eps_cav", "eps_det", "shot_noise_psd", "detector_floor") if k in d}
        if "p_lo_w" in d:
            kw["p_lo"] = d["p_lo_w"]
        try:
            return DetectionChain(**kw)
        except ParameterError as exc:
            raise ConfigError(f"detection: {exc}") from exc

    def jitter(self) -> DetuningJitter:
        j = self.section("jitter")
        try:
            return DetuningJitter(**j)
        except ParameterError as exc:
            raise ConfigError(f"jitter: {exc}") from exc

    def freqs(self) -> np.ndarray:
        """Analysis grid in rad/s."""
        g = self.section("grid")
        return TWO_PI * np.linspace(g.get("f_min_hz", 50e3), g.get("f_max_hz", 300e3), g.get("n_points", 500))

    def thetas(self) -> np.ndarray:
        g = self.section("grid")
        return np.radians(np.linspace(g.get("theta_min_deg", -90.0), g.get("theta_max_deg", 90.0),
                                      g.get("n_theta", 181)))


def header_lines(command: str, format_version: int = FORMAT_VERSION, extra: dict | None = None):
    meta = {"program": "ponderomotive", "version": __version__, "format_version": format_version,
            "command": command}
    meta.update(extra or {})
    return [f"# {k}={v}" for k, v in meta.items()]


def write_csv(path, columns: dict, command: str, format_version: int = FORMAT_VERSION, extra=None):
    """Write equal-length columns with a ``#``-comment provenance header."""
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    rows = len(data[0]) if data else 0
    if any(len(d) != rows for d in data):
        raise ValueError("CSV columns must have equal lengths")
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in header_lines(command, format_version, extra):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(rows):
            w.writerow([repr(float(d[k])) if np.isrealobj(d) else str(d[k]) for d in data])


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv` into float arrays."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    names = next(reader)
    rows = [list(map(float, r)) for r in reader if r]
    arr = np.array(rows, dtype=float).reshape(-1, len(names))
    return {n: arr[:, k] for k, n in enumerate(names)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(float(obj)) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, payload: dict, command: str, format_version: int = FORMAT_VERSION):
    body = {"program": "ponderomotive", "version": __version__, "format_version": format_version,
            "command": command}
    body.update(_jsonable(payload))
    Path(path).write_text(json.dumps(body, indent=2) + "\n")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_trace(path, trace) -> Path:
    """Store a :class:`RawTrace` or :class:`IQTrace` as float32 plus JSON sidecar."""
    path = Path(path)
    if isinstance(trace, IQTrace):
        data = np.stack([trace.i, trace.q], 1)
        channels = ["i", "q"]
    elif isinstance(trace, RawTrace):
        data = np.asarray(trace.samples)[:, None]
        channels = ["samples"]
    else:
        raise TypeError("expected RawTrace or IQTrace")
    data.astype("<f4").tofile(path)
    meta = {"format_version": FORMAT_VERSION, "version": __version__, "sample_rate": trace.sample_rate,
            "channels": channels, "n_samples": int(data.shape[0]), "dtype": "<f4",
            "metadata": _jsonable(trace.metadata)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_trace(path):
    """Load a trace written by :func:`write_trace`."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported trace format_version {meta.get('format_version')!r}")
    channels = meta["channels"]
    data = np.fromfile(path, dtype="<f4").astype(float)
    if data.size != meta["n_samples"] * len(channels):
        raise OSError(f"{path}: expected {meta['n_samples'] * len(channels)} samples, found {data.size}")
    data = data.reshape(meta["n_samples"], len(channels))
    if channels == ["i", "q"]:
        return IQTrace(data[:, 0], data[:, 1], meta["sample_rate"], None, meta.get("metadata", {}))
    return RawTrace(data[:, 0], meta["sample_rate"], meta.get("metadata", {}))
