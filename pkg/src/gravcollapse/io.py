"""Configuration parsing and byte-stable CSV/JSON output."""
from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .units import CSLParams, DPParams, ModelParams, RigidBodySpec, parse_quantity, preset

OUTPUT_DIR_ENV = "GRAVCOLLAPSE_OUTPUT_DIR"

DEFAULT_PRESET = {"dp": "diosi", "csl": "csl_grw"}

# key -> (unit the value must be compatible with, whether zero is allowed)
_PARAM_KEYS = {
    "R0": ("m", False),
    "m_r": ("kg", True),
    "gamma": ("m^3/s", False),
    "r_c": ("m", False),
    "m0": ("kg", False),
    "mass": ("kg", True),
    "radius": ("m", True),
}
_RUN_KEYS = {
    "seed": int, "n_traj": int, "points": int, "sites": int, "particles": int,
    "t_final": float, "dt": float, "spacing": float, "k": float, "x_min": float,
    "x_max": float, "weight": float,
}
_TOP_KEYS = {"model", "preset", "coarse_graining", "form_factor", "run", *_PARAM_KEYS}


def format_float(x) -> str:
    """Scientific notation with 17 significant digits; round-trips through float()."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.16e}"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, enum.Enum):
        return obj.value
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if obj is None or isinstance(obj, (int, str)):
        return obj
    return str(obj)


def json_bytes(obj) -> bytes:
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def atomic_write(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def emit_csv(path, header, rows) -> Path:
    return atomic_write(path, csv_bytes(header, rows))


def emit_json(path, obj) -> Path:
    return atomic_write(path, json_bytes(obj))


def read_csv(path):
    """Header and float rows of a file written by :func:`emit_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",") if lines else []
    return header, [[float(c) for c in line.split(",")] for line in lines[1:]]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int
    tool_version: str
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0

    def add_output(self, path) -> None:
        self.outputs.append({"path": str(path), "sha256": sha256_file(path)})

    def verify(self) -> bool:
        return all(Path(o["path"]).exists() and sha256_file(o["path"]) == o["sha256"]
                   for o in self.outputs)

    def write(self, path) -> Path:
        return emit_json(path, asdict(self))

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def output_dir(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


@dataclass(frozen=True)
class ResolvedConfig:
    params: ModelParams
    mass: float | None
    body: RigidBodySpec | None
    run: dict
    echo: dict


def _quantity(key, value, unit, zero_ok):
    try:
        x = parse_quantity(value, unit)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{key}: {exc}") from None
    if not math.isfinite(x) or x < 0 or (x == 0 and not zero_ok):
        raise ConfigurationError(f"{key}: must be {'non-negative' if zero_ok else 'positive'}, got {value!r}")
    return x


def parse_config(source) -> ResolvedConfig:
    """Resolve a JSON config (path, JSON text or dict) into SI parameters.

    Schema: ``model`` ("dp" | "csl"), optional ``preset``, parameter keys
    with unit strings (R0, m_r, gamma, r_c, m0, mass, radius), optional
    ``coarse_graining``/``form_factor`` and a ``run`` section. Unknown keys
    are rejected; anything not given comes from the model's default preset.
    """
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown key(s): {', '.join(unknown)}")
    model = raw.get("model")
    if model not in ("dp", "csl"):
        raise ConfigurationError(f"model: must be 'dp' or 'csl', got {model!r}")
    base = preset(raw.get("preset", DEFAULT_PRESET[model]))

    values = {k: _quantity(k, raw[k], *_PARAM_KEYS[k]) for k in _PARAM_KEYS if k in raw}
    dp_kw = {"R0": values.get("R0", base.dp.R0), "m_r": values.get("m_r", base.dp.m_r),
             "coarse_graining": raw.get("coarse_graining", base.dp.coarse_graining)}
    try:
        dp = DPParams(**dp_kw)
    except ValueError as exc:
        raise ConfigurationError(f"coarse_graining: {exc}") from None
    csl = CSLParams(gamma=values.get("gamma", base.csl.gamma), r_c=values.get("r_c", base.csl.r_c),
                    m0=values.get("m0", base.csl.m0))
    params = ModelParams(model, dp=dp, csl=csl, provenance=base.provenance)
    body = None
    if "radius" in values:
        try:
            body = RigidBodySpec(values.get("mass", 0.0), values["radius"],
                                 raw.get("form_factor", "gaussian_approx"))
        except ValueError as exc:
            raise ConfigurationError(f"form_factor: {exc}") from None

    run_raw = raw.get("run", {})
    if not isinstance(run_raw, dict):
        raise ConfigurationError("run: must be an object")
    bad = sorted(set(run_raw) - set(_RUN_KEYS))
    if bad:
        raise ConfigurationError(f"run: unknown key(s): {', '.join('run.' + b for b in bad)}")
    run = {}
    for k, v in run_raw.items():
        try:
            run[k] = _RUN_KEYS[k](v)
        except (TypeError, ValueError):
            raise ConfigurationError(f"run.{k}: expected {_RUN_KEYS[k].__name__}, got {v!r}") from None
    echo = {"model": model, "dp": asdict(dp), "csl": asdict(csl),
            "mass": values.get("mass"), "body": None if body is None else asdict(body), "run": run}
    return ResolvedConfig(params, values.get("mass"), body, run, echo)
