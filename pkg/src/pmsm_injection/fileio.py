"""
Plain-text artifacts: ``key = value`` config files and CSV tables.

Config syntax is one ``key = value`` per line, ``#`` starts a comment.  Values
that look like numbers become floats; comma-separated lists and ``t:v`` knots
are parsed by the callers that know the key.  Config floats are written in
their shortest exact form, CSV cells with nine significant digits.  Every file is written atomically
through a temporary file in the target directory.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .magnetics import PRESETS, MotorParams
from .simulation import Profile, ScenarioTrace

FLOAT_FORMAT = "%.9g"


class ConfigError(ValueError):
    pass


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- key-value files ------------------------------------------------------------------------

def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_kv(text, str(path))


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest form that round-trips exactly
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def dump_kv(values: Mapping[str, object]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def _float(key: str, value: str, source: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{source}: {key} must be a number, got {value!r}") from None


def _floats(key: str, value: str, source: str) -> list[float]:
    return [_float(key, v.strip(), source) for v in value.split(",") if v.strip()]


def _knots(key: str, value: str, source: str) -> list[tuple[float, ...]]:
    knots = []
    for item in value.split(","):
        item = item.strip()
        if item:
            knots.append(tuple(_float(key, v, source) for v in item.split(":")))
    return knots


# --- motors ---------------------------------------------------------------------------------

def motor_from_kv(values: Mapping[str, str], source: str = "<config>") -> MotorParams:
    parsed = {}
    for key, value in values.items():
        if value.lower() in ("", "none"):
            parsed[key] = None
        else:
            parsed[key] = _float(key, value, source)
    try:
        return MotorParams.from_mapping(parsed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_motor(name_or_path: str | Path) -> MotorParams:
    """A preset name (``ipm``, ``spm``) or the path of a motor config file."""
    key = str(name_or_path).lower()
    if key in PRESETS and not Path(name_or_path).exists():
        return PRESETS[key]
    return motor_from_kv(read_kv(name_or_path), str(name_or_path))


def motor_to_kv(p: MotorParams) -> str:
    return dump_kv(p.to_mapping())


# --- scenario profiles ----------------------------------------------------------------------

def profile_from_kv(values: Mapping[str, str], source: str = "<profile>") -> Profile:
    """
    Keys: ``duration``, ``omega_c`` and ``tau_L`` as ``t:value`` knot lists,
    ``u_rd`` as ``t:u_gamma:u_delta`` targets, optional ``u_rd_tau``,
    ``u_tilde`` (``u_gamma, u_delta``) and ``name``.
    """
    allowed = {"duration", "omega_c", "tau_L", "u_rd", "u_rd_tau", "u_tilde", "name"}
    extra = set(values) - allowed
    if extra:
        raise ConfigError(f"{source}: unknown profile keys {sorted(extra)}")
    if "duration" not in values:
        raise ConfigError(f"{source}: missing 'duration'")
    kw: dict[str, object] = {"duration": _float("duration", values["duration"], source)}
    for key in ("omega_c", "tau_L"):
        if key in values:
            knots = _knots(key, values[key], source)
            if any(len(k) != 2 for k in knots):
                raise ConfigError(f"{source}: {key} knots must be 't:value'")
            kw[key] = tuple(knots)
    if "u_rd" in values:
        targets = _knots("u_rd", values["u_rd"], source)
        if any(len(k) != 3 for k in targets):
            raise ConfigError(f"{source}: u_rd targets must be 't:u_gamma:u_delta'")
        kw["u_rd"] = tuple((k[0], (k[1], k[2])) for k in targets)
    if "u_rd_tau" in values:
        kw["u_rd_tau"] = _float("u_rd_tau", values["u_rd_tau"], source)
    if "u_tilde" in values:
        u = _floats("u_tilde", values["u_tilde"], source)
        if len(u) != 2:
            raise ConfigError(f"{source}: u_tilde needs two components")
        kw["u_tilde"] = (u[0], u[1])
    if "name" in values:
        kw["name"] = values["name"]
    try:
        return Profile(**kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _plain(knots):
    return [(float(t), float(v)) for t, v in knots]


def profile_to_kv(profile: Profile) -> str:
    values: dict[str, object] = {
        "name": profile.name,
        "duration": profile.duration,
        "omega_c": ", ".join(f"{t!r}:{v!r}" for t, v in _plain(profile.omega_c)),
        "tau_L": ", ".join(f"{t!r}:{v!r}" for t, v in _plain(profile.tau_L)),
        "u_rd": ", ".join(f"{float(t)!r}:{float(u[0])!r}:{float(u[1])!r}" for t, u in profile.u_rd),
        "u_rd_tau": profile.u_rd_tau,
    }
    if profile.u_tilde is not None:
        values["u_tilde"] = profile.u_tilde
    return dump_kv(values)


def load_profile(path: str | Path) -> Profile:
    return profile_from_kv(read_kv(path), str(path))


# --- CSV ------------------------------------------------------------------------------------

def format_csv(columns: Mapping[str, Sequence]) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = len(arrays[0]) if arrays else 0
    if any(len(a) != n for a in arrays):
        raise ValueError("CSV columns must have equal length")
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    if n:
        cells = [a.astype(int).astype(str) if a.dtype == bool else np.char.mod(FLOAT_FORMAT, a)
                 for a in arrays]
        for row in zip(*cells):
            buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_csv(path: str | Path, columns: Mapping[str, Sequence]) -> None:
    atomic_write(path, format_csv(columns))


def read_csv(path: str | Path, required: Iterable[str] = ()) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise ConfigError(f"{path}: empty file (no header)")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    body = [r for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise ConfigError(f"{path}: ragged rows")
    try:
        data = np.array(body, dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric cell ({exc})") from None
    return {name: data[:, j] for j, name in enumerate(header)}


def write_trace(path: str | Path, trace: ScenarioTrace) -> None:
    write_csv(path, trace.columns())


def read_trace(path: str | Path) -> ScenarioTrace:
    cols = read_csv(path, ScenarioTrace.COLUMNS)
    try:
        return ScenarioTrace(**{k: cols[k] for k in ScenarioTrace.COLUMNS})
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
