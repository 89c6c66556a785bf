"""Plain-text scenario files.

Format: ``[section]`` headers, ``key = value`` lines, and bare piece lines
``start end constant a`` / ``start end sinusoid a b c`` inside the four
rate-function sections.  ``#`` starts a comment; blank lines are ignored.
Unknown sections or keys are rejected so typos fail loudly.

Sections::

    [rates]               mu11 mu12 mu21 mu22 theta1 theta2
    [control]             mode r12 r21 k12 k21 tau12 tau21
                          (+ optional integer overrides k12_n k21_n tau12_n tau21_n)
    [arrivals.class1]     piece lines (fluid-scale arrival rate of class 1)
    [arrivals.class2]     piece lines
    [staffing.pool1]      piece lines (fluid-scale staffing level)
    [staffing.pool2]      piece lines
    [run]                 n horizon  (+ optional x0 = q1 q2 z11 z12 z21 z22, name)
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .model import (
    ControlMode,
    ControlParams,
    FluidState,
    Piece,
    RateFunction,
    Scenario,
    ServiceRates,
)


class ScenarioFormatError(ValueError):
    """Raised for malformed scenario text; message carries the line number."""


_RATE_KEYS = ("mu11", "mu12", "mu21", "mu22", "theta1", "theta2")
_CONTROL_FLOAT_KEYS = ("r12", "r21", "k12", "k21", "tau12", "tau21")
_CONTROL_INT_KEYS = ("k12_n", "k21_n", "tau12_n", "tau21_n")
_PIECE_SECTIONS = (
    "arrivals.class1",
    "arrivals.class2",
    "staffing.pool1",
    "staffing.pool2",
)
_SECTIONS = ("rates", "control", "run") + _PIECE_SECTIONS


def _parse_float(text: str, lineno: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioFormatError(f"line {lineno}: {what} is not a number: {text!r}") from None


def _parse_piece_line(parts: list[str], lineno: int) -> Piece:
    if len(parts) < 4:
        raise ScenarioFormatError(
            f"line {lineno}: piece line needs 'start end kind params...', got {' '.join(parts)!r}"
        )
    start = _parse_float(parts[0], lineno, "piece start")
    end = _parse_float(parts[1], lineno, "piece end")
    kind = parts[2]
    args = [_parse_float(p, lineno, "piece parameter") for p in parts[3:]]
    if kind == "constant":
        if len(args) != 1:
            raise ScenarioFormatError(f"line {lineno}: constant piece takes 1 parameter")
        return Piece(start, end, "constant", args[0])
    if kind == "sinusoid":
        if len(args) != 3:
            raise ScenarioFormatError(f"line {lineno}: sinusoid piece takes 3 parameters (a b c)")
        return Piece(start, end, "sinusoid", args[0], args[1], args[2])
    raise ScenarioFormatError(f"line {lineno}: unknown piece kind {kind!r}")


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text into a :class:`Scenario`; raise on any unknown content."""
    section: str | None = None
    kv: dict[str, dict[str, tuple[str, int]]] = {"rates": {}, "control": {}, "run": {}}
    pieces: dict[str, list[Piece]] = {name: [] for name in _PIECE_SECTIONS}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ScenarioFormatError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise ScenarioFormatError(f"line {lineno}: content before any [section] header")
        if section in _PIECE_SECTIONS:
            if "=" in line:
                raise ScenarioFormatError(
                    f"line {lineno}: [{section}] holds piece lines, not key = value entries"
                )
            pieces[section].append(_parse_piece_line(line.split(), lineno))
        else:
            if "=" not in line:
                raise ScenarioFormatError(f"line {lineno}: expected 'key = value' in [{section}]")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in kv[section]:
                raise ScenarioFormatError(f"line {lineno}: duplicate key {key!r} in [{section}]")
            kv[section][key] = (value, lineno)

    def take(section_name: str, key: str, required: bool = True) -> tuple[str, int] | None:
        entry = kv[section_name].pop(key, None)
        if entry is None and required:
            raise ScenarioFormatError(f"missing key {key!r} in [{section_name}]")
        return entry

    rate_values = {}
    for key in _RATE_KEYS:
        value, lineno = take("rates", key)
        rate_values[key] = _parse_float(value, lineno, f"rates.{key}")
    rates = ServiceRates(**rate_values)

    mode_entry = take("control", "mode", required=False)
    if mode_entry is None:
        mode = ControlMode.FQR_ART
    else:
        try:
            mode = ControlMode(mode_entry[0])
        except ValueError:
            valid = ", ".join(m.value for m in ControlMode)
            raise ScenarioFormatError(
                f"line {mode_entry[1]}: control.mode must be one of {valid}"
            ) from None
    control_values = {}
    for key in _CONTROL_FLOAT_KEYS:
        value, lineno = take("control", key)
        control_values[key] = _parse_float(value, lineno, f"control.{key}")
    control = ControlParams(mode=mode, **control_values)

    overrides: dict[str, int | None] = {}
    for key in _CONTROL_INT_KEYS:
        entry = take("control", key, required=False)
        if entry is None:
            overrides[key] = None
            continue
        value, lineno = entry
        try:
            overrides[key] = int(value)
        except ValueError:
            raise ScenarioFormatError(
                f"line {lineno}: control.{key} must be an integer, got {value!r}"
            ) from None

    n_entry = take("run", "n")
    try:
        n = int(n_entry[0])
    except ValueError:
        raise ScenarioFormatError(f"line {n_entry[1]}: run.n must be an integer") from None
    horizon_entry = take("run", "horizon")
    horizon = _parse_float(horizon_entry[0], horizon_entry[1], "run.horizon")

    x0_entry = take("run", "x0", required=False)
    if x0_entry is None:
        x0 = FluidState()
    else:
        parts = x0_entry[0].split()
        if len(parts) != 6:
            raise ScenarioFormatError(
                f"line {x0_entry[1]}: x0 needs six numbers (q1 q2 z11 z12 z21 z22)"
            )
        x0 = FluidState.from_tuple(
            tuple(_parse_float(p, x0_entry[1], "x0 component") for p in parts)
        )
    name_entry = take("run", "name", required=False)
    name = name_entry[0] if name_entry is not None else ""

    for section_name in ("rates", "control", "run"):
        for key, (_, lineno) in kv[section_name].items():
            raise ScenarioFormatError(f"line {lineno}: unknown key {key!r} in [{section_name}]")
    for section_name in _PIECE_SECTIONS:
        if not pieces[section_name]:
            raise ScenarioFormatError(f"section [{section_name}] has no pieces")

    return Scenario(
        rates=rates,
        control=control,
        lambda1=RateFunction(tuple(pieces["arrivals.class1"])),
        lambda2=RateFunction(tuple(pieces["arrivals.class2"])),
        m1=RateFunction(tuple(pieces["staffing.pool1"])),
        m2=RateFunction(tuple(pieces["staffing.pool2"])),
        n=n,
        horizon=horizon,
        x0=x0,
        k12_n=overrides["k12_n"],
        k21_n=overrides["k21_n"],
        tau12_n=overrides["tau12_n"],
        tau21_n=overrides["tau21_n"],
        name=name,
    )


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def _fmt(x: float) -> str:
    return format(x, ".10g")


def _piece_lines(f: RateFunction) -> list[str]:
    lines = []
    for p in f.pieces:
        if p.kind == "constant":
            lines.append(f"{_fmt(p.start)} {_fmt(p.end)} constant {_fmt(p.a)}")
        else:
            lines.append(
                f"{_fmt(p.start)} {_fmt(p.end)} sinusoid {_fmt(p.a)} {_fmt(p.b)} {_fmt(p.c)}"
            )
    return lines


def serialize_scenario(s: Scenario) -> str:
    """Canonical text form; ``parse_scenario(serialize_scenario(s))`` equals ``s``."""
    r, c = s.rates, s.control
    lines = ["[rates]"]
    lines += [f"{key} = {_fmt(getattr(r, key))}" for key in _RATE_KEYS]
    lines += ["", "[control]", f"mode = {c.mode.value}"]
    lines += [f"{key} = {_fmt(getattr(c, key))}" for key in _CONTROL_FLOAT_KEYS]
    for key in _CONTROL_INT_KEYS:
        v = getattr(s, key)
        if v is not None:
            lines.append(f"{key} = {v}")
    for section_name, f in zip(_PIECE_SECTIONS, s.rate_functions()):
        lines += ["", f"[{section_name}]"]
        lines += _piece_lines(f)
    lines += ["", "[run]", f"n = {s.n}", f"horizon = {_fmt(s.horizon)}"]
    if s.x0 != FluidState():
        lines.append("x0 = " + " ".join(_fmt(v) for v in s.x0.as_tuple()))
    if s.name:
        lines.append(f"name = {s.name}")
    return "\n".join(lines) + "\n"


def scenario_hash(s: Scenario) -> str:
    """Stable content hash of a scenario (canonical serialization, sha256)."""
    return hashlib.sha256(serialize_scenario(s).encode()).hexdigest()
