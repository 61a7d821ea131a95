"""Experiment configuration files.

Configs are INI files read with :mod:`configparser`.  Every value is
validated on load; failures raise :class:`ConfigError` naming the section,
key and (when known) the line.  Sections and keys:

``[grid]``        ``n``, ``N``, ``L`` (default ``2*pi``; the literal ``2pi`` is accepted)
``[mask]``        ``lo`` and ``hi`` (comma lists, box corners) or ``bitmap`` (text file of 0/1 rows)
``[problem]``     ``s``, ``p``, ``kind`` = ``exterior`` | ``interior``
``[data]``        ``type`` = ``zero`` | ``gaussian`` | ``cosine`` | ``file``; ``amplitude``,
                  ``width``, ``center``, ``k``, ``path``
``[anisotropy]``  ``type`` = ``identity`` | ``diagonal`` | ``constant``; ``diag`` or ``matrix`` (row-major)
``[sigma]``       ``value`` (background), ``floor``, optional ``inclusion_lo``, ``inclusion_hi``,
                  ``inclusion_value``
``[solver]``      ``tol``, ``budget``, ``eps_schedule``, ``seeds``
``[poincare]``    ``restarts``, ``seeds``
``[dn]``          ``mode`` = ``matrix`` | ``pairs``, ``pairs``, ``seed``
``[extend]``      ``heights`` or ``y_min``, ``ratio``, ``levels``
``[invert]``      ``probes``, ``probe_seed``, ``levels`` (``start:stop:step``), ``block``,
                  ``window_margin``, ``eta``, ``noise_seed``, ``max_sweeps``, ``budget``
``[verify]``      ``only`` (criterion numbers; default all)

Keys are case-sensitive.  Only the sections a command needs must be present.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""

    def __init__(self, section: str, key: str | None, message: str, line: int | None = None):
        where = f"[{section}]" + (f" {key}" if key else "")
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.section, self.key, self.line = section, key, line


def _line_numbers(text: str) -> dict:
    """Map (section, key) to the line where the key is defined."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and ("=" in line or ":" in line) and not line.startswith(("#", ";")):
            key = line.split("=", 1)[0].split(":", 1)[0].strip()
            out[(section, key)] = i
    return out


@dataclass
class ExperimentConfig:
    """Parsed config; ``raw`` keeps the resolved key/value strings for manifests."""

    raw: dict
    lines: dict = field(default_factory=dict, repr=False)
    source: str | None = None

    def has(self, section: str) -> bool:
        return section in self.raw

    def _fail(self, section, key, msg):
        raise ConfigError(section, key, msg, self.lines.get((section, key)))

    def get(self, section: str, key: str, kind=float, default=None, required: bool = True):
        sec = self.raw.get(section)
        if sec is None or key not in sec:
            if default is not None or not required:
                return default
            if sec is None:
                raise ConfigError(section, None, "missing section")
            raise ConfigError(section, key, "missing required field")
        text = sec[key]
        try:
            return _convert(text, kind)
        except (ValueError, TypeError) as exc:
            self._fail(section, key, f"cannot parse {text!r}: {exc}")

    def set(self, section: str, key: str, value) -> None:
        self.raw.setdefault(section, {})[key] = str(value)


def _float(text: str) -> float:
    t = text.strip().lower().replace(" ", "")
    if t.endswith("pi"):
        head = t[:-2].rstrip("*")
        if head in ("", "+", "-"):
            head += "1"
        return float(head) * math.pi
    return float(t)


def _convert(text: str, kind):
    if kind is float:
        return _float(text)
    if kind is int:
        v = _float(text)
        if v != int(v):
            raise ValueError("expected an integer")
        return int(v)
    if kind is bool:
        t = text.strip().lower()
        if t in ("1", "true", "yes", "on"):
            return True
        if t in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind == "floats":
        return [_float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    if kind == "ints":
        return [_convert(x, int) for x in text.replace(";", ",").split(",") if x.strip()]
    if kind == "range":
        if ":" in text:
            a, b, c = (_float(x) for x in text.split(":"))
            if c <= 0:
                raise ValueError("step must be positive")
            return list(np.arange(a, b + 0.5 * c, c))
        return _convert(text, "floats")
    if kind is str:
        return text.strip()
    raise TypeError(f"unknown field kind {kind!r}")


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case-sensitive: n and N differ
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError("file", None, str(exc).splitlines()[0], line) from exc
    raw = {sec: dict(parser[sec]) for sec in parser.sections()}
    return ExperimentConfig(raw, _line_numbers(text), source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", None, f"cannot read {path}: {exc.strerror}") from exc
    cfg = parse_config(text, str(path))
    cfg.base_dir = path.parent
    return cfg
