"""Flat ``key = value`` configuration files with sections.

Schema::

    [scenario]      any ScenarioConfig field; tuples are comma separated
    [run]           workers, out_dir, csv_only
    [certify]       N, T, eps, seeds, instance_seed, sigma
    [scaling]       sizes, trials, T, restarts, q_fraction

Every error names the file and line it came from.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FeatselError
from .simenv import ScenarioConfig


class ConfigError(FeatselError):
    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class CertifySettings:
    N: int = 120
    T: int = 2
    eps: float = 0.5
    seeds: int = 400
    instance_seed: int = 2024
    sigma: float = 1.0


@dataclass
class ScalingSettings:
    sizes: tuple = (64, 128, 256, 512, 1024)
    trials: int = 3
    T: int = 2
    restarts: int = 16
    q_fraction: float = 0.5


@dataclass
class RunSettings:
    workers: int | None = None
    out_dir: str = "runs"
    csv_only: bool = False


@dataclass
class LoadedConfig:
    scenario: dict = field(default_factory=dict)     # overrides only
    run: RunSettings = field(default_factory=RunSettings)
    certify: CertifySettings = field(default_factory=CertifySettings)
    scaling: ScalingSettings = field(default_factory=ScalingSettings)


SECTIONS = {
    "scenario": ScenarioConfig,
    "run": RunSettings,
    "certify": CertifySettings,
    "scaling": ScalingSettings,
}


def _field_types(cls) -> dict:
    defaults = cls() if cls is not ScenarioConfig else ScenarioConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}


def parse_value(text: str, kind):
    """Convert ``text`` to the type of the field's default value."""
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("expected a comma-separated list")
        return tuple(int(p) if re.fullmatch(r"[+-]?\d+", p) else float(p) for p in parts)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is type(None):
        return None if text.lower() in ("", "none", "auto") else int(text)
    return text


def _key_lines(lines: list[str]) -> dict:
    """``(section, key) -> 1-based line number`` for error reporting."""
    out = {}
    section = None
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = i
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def load_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(path, None, "config file not found") from None
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config: {exc.strerror}") from None

    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str     # keep the user's spelling for messages
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(path, lineno, "malformed line (expected 'key = value')") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(path, exc.lineno, "key outside of any [section]") from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(path, exc.lineno, exc.message.split(": ", 1)[-1]) from None

    lines = _key_lines(text.splitlines())
    out = LoadedConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(path, lines.get((section, None)), f"unknown section [{section}]")
        types = _field_types(SECTIONS[section])
        names = {name.lower(): name for name in types}    # keys are case-insensitive
        values = {}
        for key, raw in parser.items(section):
            line = lines.get((section, key.lower()))
            if key.lower() not in names:
                raise ConfigError(path, line, f"unknown key {key!r} in [{section}]")
            name = names[key.lower()]
            if name in values:
                raise ConfigError(path, line, f"duplicate key {key!r} in [{section}]")
            try:
                values[name] = parse_value(raw, types[name])
            except ValueError as exc:
                raise ConfigError(path, line, f"{name}: {exc}") from None
        if section == "scenario":
            try:
                ScenarioConfig(**values)
            except FeatselError as exc:
                # attribute the failure to the first key it mentions
                line = next((lines.get((section, k.lower())) for k in values if k in str(exc)),
                            lines.get((section, None)))
                raise ConfigError(path, line, str(exc)) from None
            out.scenario = values
        else:
            setattr(out, section, SECTIONS[section](**values))
    return out
