"""A small sectioned ``key = value`` config format with line-numbered errors.

    # comment
    [train]
    rounds = 2
    lr = 0.1

Unknown sections or keys and malformed values are errors that name the line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import InvalidArgument


class ConfigError(InvalidArgument):
    def __init__(self, source: str, lineno: int, message: str):
        super().__init__(f"{source}:{lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Entry:
    value: str
    lineno: int


def parse_config(text: str, source: str = "<config>") -> dict[str, dict[str, Entry]]:
    sections: dict[str, dict[str, Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(source, lineno, f"malformed section header {raw.strip()!r}")
            current = line[1:-1].strip()
            if current in sections:
                raise ConfigError(source, lineno, f"duplicate section [{current}]")
            sections[current] = {}
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(source, lineno, f"expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ConfigError(source, lineno, "key outside of any section")
        if key in sections[current]:
            raise ConfigError(source, lineno, f"duplicate key {key!r}")
        sections[current][key] = Entry(value, lineno)
    return sections


def read_config(path: str | Path) -> dict[str, dict[str, Entry]]:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def _convert(kind: type, entry: Entry, key: str, source: str) -> Any:
    text = entry.value
    try:
        if kind is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(x) for x in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(source, entry.lineno, f"bad value {text!r} for {key} (expected {kind.__name__})") from None


def fill_dataclass(cls, section: dict[str, Entry], source: str, **overrides):
    """Instantiate ``cls`` from a section; every key must name a field of ``cls``."""
    defaults = cls()
    kinds = {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    values = {}
    for key, entry in section.items():
        if key not in kinds:
            raise ConfigError(source, entry.lineno, f"unknown key {key!r}")
        values[key] = _convert(kinds[key], entry, key, source)
    values.update(overrides)
    try:
        return cls(**values)
    except InvalidArgument as exc:
        line = min((e.lineno for e in section.values()), default=0)
        raise ConfigError(source, line, str(exc)) from None


def check_sections(sections: dict, allowed: dict[str, set[str] | None], source: str) -> None:
    """Reject unknown sections, and unknown keys in sections whose key set is given."""
    for name, entries in sections.items():
        if name not in allowed:
            line = min((e.lineno for e in entries.values()), default=0)
            raise ConfigError(source, line, f"unknown section [{name}]")
        keys = allowed[name]
        if keys is not None:
            for key, entry in entries.items():
                if key not in keys:
                    raise ConfigError(source, entry.lineno, f"unknown key {key!r} in [{name}]")
