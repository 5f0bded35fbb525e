"""File formats: run configs, measure files, reports and columnar data.

All files are JSON.  Floats are written with ``repr`` (shortest round-trip
form, at most 17 significant digits), so reading back what was written
reproduces every value bit for bit.  Writes go through a temporary file in
the target directory followed by ``os.replace``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .fgeometry import ModelParams, make_point
from .measures import ConstraintSpec, DiscreteMeasure
from .solver import SolverConfig
from .verifier import VerifyConfig

SCHEMA_VERSION = "1.0"
MEASURE_FORMAT = "causalvp-measure/1"


class ConfigError(ValueError):
    """Malformed run configuration or input file."""


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    format: str = "tree"
    scan_count: int = 10000

    def __post_init__(self):
        if self.format not in ("tree", "columnar"):
            raise ConfigError(f"output.format must be 'tree' or 'columnar', got {self.format!r}")
        if self.scan_count < 0:
            raise ConfigError("output.scan_count must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = field(default_factory=lambda: ModelParams(2, 1))
    constraint_kind: str = "trace"
    constraint_C: float | str = math.inf
    constraint_real_symmetric: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def constraint(self, C=None) -> ConstraintSpec:
        C = self.constraint_C if C is None else C
        k = self.model.k
        if self.constraint_kind == "trace":
            return ConstraintSpec.trace(k, C)
        return ConstraintSpec.identity(k, C, self.constraint_real_symmetric)

    @property
    def seed(self) -> int:
        return self.solver.seed

    def with_seed(self, seed: int) -> "RunConfig":
        from dataclasses import replace

        return replace(self, solver=replace(self.solver, seed=seed), verify=replace(self.verify, seed=seed))


_SECTIONS = {"solver": SolverConfig, "verify": VerifyConfig, "output": OutputConfig}
_CONSTRAINT_KEYS = ("kind", "C", "real_symmetric")


def _coerce(key: str, value, default):
    """Check a config value against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if default is None or isinstance(default, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported value {value!r}")


def config_from_dict(flat: dict) -> RunConfig:
    """Build a RunConfig from flat dotted keys, rejecting unknown ones."""
    if not isinstance(flat, dict):
        raise ConfigError("config must be a JSON object of dotted keys")
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    model: dict = {}
    constraint: dict = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if head == "model" and tail in ("k", "n"):
            model[tail] = _coerce(key, value, 0)
        elif head == "constraint" and tail in _CONSTRAINT_KEYS:
            constraint[tail] = value
        elif head in _SECTIONS and tail in {f.name for f in fields(_SECTIONS[head])}:
            default = next(f.default for f in fields(_SECTIONS[head]) if f.name == tail)
            sections[head][tail] = _coerce(key, value, default)
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    C = constraint.get("C", "inf")
    if isinstance(C, str):
        if C in ("inf", "infinity"):
            C = math.inf
        elif C != "auto":
            raise ConfigError(f"constraint.C: expected a number, 'inf' or 'auto', got {C!r}")
    elif isinstance(C, bool) or not isinstance(C, (int, float)):
        raise ConfigError(f"constraint.C: expected a number, 'inf' or 'auto', got {C!r}")
    else:
        C = float(C)
    kind = constraint.get("kind", "trace")
    if kind not in ("trace", "identity"):
        raise ConfigError(f"constraint.kind: expected 'trace' or 'identity', got {kind!r}")
    rs = constraint.get("real_symmetric", False)
    if not isinstance(rs, bool):
        raise ConfigError(f"constraint.real_symmetric: expected a boolean, got {rs!r}")
    try:
        cfg = RunConfig(
            model=ModelParams(model.get("k", 2), model.get("n", 1)),
            constraint_kind=kind,
            constraint_C=C,
            constraint_real_symmetric=rs,
            solver=SolverConfig(**sections["solver"]),
            verify=VerifyConfig(**sections["verify"]),
            output=OutputConfig(**sections["output"]),
        )
        cfg.constraint()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    C = cfg.constraint_C
    out = {
        "model.k": cfg.model.k,
        "model.n": cfg.model.n,
        "constraint.kind": cfg.constraint_kind,
        "constraint.C": "inf" if C == math.inf else C,
        "constraint.real_symmetric": cfg.constraint_real_symmetric,
    }
    for name, obj in (("solver", cfg.solver), ("verify", cfg.verify), ("output", cfg.output)):
        for key, value in asdict(obj).items():
            out[f"{name}.{key}"] = value
    return out


def read_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def write_config(path, cfg: RunConfig) -> Path:
    return atomic_write_text(path, dumps(config_to_dict(cfg)))


# ---------------------------------------------------------------------------
# measure files


def _cplx(a: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def _uncplx(rows, shape, what: str) -> np.ndarray:
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected nested [re, im] pairs") from exc
    if arr.shape != shape + (2,):
        raise ConfigError(f"{what}: expected shape {shape} of [re, im] pairs, got {arr.shape[:-1]}")
    return arr[..., 0] + 1j * arr[..., 1]


def measure_to_dict(rho: DiscreteMeasure) -> dict:
    return {
        "format": MEASURE_FORMAT,
        "k": rho.params.k,
        "n": rho.params.n,
        "points": [
            {"weight": float(w), "A": _cplx(p.a_factor), "B": _cplx(p.b_factor)}
            for p, w in zip(rho.points, rho.weights)
        ],
    }


def measure_from_dict(data: dict, params: ModelParams | None = None) -> DiscreteMeasure:
    if not isinstance(data, dict) or data.get("format") != MEASURE_FORMAT:
        raise ConfigError(f"not a measure file (expected format {MEASURE_FORMAT!r})")
    try:
        k, n = int(data["k"]), int(data["n"])
        entries = data["points"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed measure file: {exc}") from exc
    if params is not None and (k, n) != (params.k, params.n):
        raise ConfigError(f"measure has k={k}, n={n} but the config has k={params.k}, n={params.n}")
    try:
        mp = ModelParams(k, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(entries, list) or not entries:
        raise ConfigError("measure file has no points")
    pts, ws = [], []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or set(e) != {"weight", "A", "B"}:
            raise ConfigError(f"point {i}: expected keys weight, A, B")
        pts.append(make_point(_uncplx(e["A"], (k, n), f"point {i} A"), _uncplx(e["B"], (k, n), f"point {i} B"), mp))
        ws.append(e["weight"])
    try:
        return DiscreteMeasure(tuple(pts), np.array(ws, dtype=float))
    except ValueError as exc:
        raise ConfigError(f"invalid measure: {exc}") from exc


def read_measure(path, params: ModelParams | None = None) -> DiscreteMeasure:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read measure {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"measure file {path} is not valid JSON: {exc}") from exc
    return measure_from_dict(data, params)


def write_measure(path, rho: DiscreteMeasure) -> Path:
    return atomic_write_text(path, dumps(measure_to_dict(rho)))


# ---------------------------------------------------------------------------
# reports


def finite_or_none(x):
    """JSON-safe scalar: non-finite floats become ``None``."""
    if x is None or isinstance(x, (bool, str)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else None


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return jsonable(np.stack([obj.real, obj.imag], axis=-1).tolist())
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return finite_or_none(obj)


def write_report(path, report: dict) -> Path:
    return atomic_write_text(path, dumps(jsonable(report)))


def write_columns(path, header, rows) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def report_to_rows(report: dict, prefix: str = ""):
    """Flatten a report tree into ``(key, value)`` rows for columnar output."""
    for key, value in report.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from report_to_rows(value, name + ".")
        else:
            yield name, json.dumps(jsonable(value), allow_nan=False)
