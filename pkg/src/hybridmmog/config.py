"""INI configuration files for SimConfig, plus ``section.key=value`` overrides.

Layout::

    [sim]       vs_count, steps, seed, subsystems, ...
    [world]     WorldConfig fields (the SAM workload)
    [manager]   ManagerConfig fields
    [pam]       PamConfig fields
    [pam_world] WorldConfig fields for the overlay simulation (optional)

Tuples are written comma separated; the mobility transition matrix uses
``;`` between rows.
"""

import configparser
import dataclasses
import os
from dataclasses import fields, replace

from . import pamsim, workload
from .harness import ConfigError, SimConfig
from .sam import ManagerConfig

SECTIONS = {
    "sim": SimConfig,
    "world": workload.WorldConfig,
    "manager": ManagerConfig,
    "pam": pamsim.PamConfig,
    "pam_world": workload.WorldConfig,
}
NESTED = ("world", "manager", "pam", "pam_world")

# fields whose default is None, with the type of a non-None value
OPTIONAL_TYPES = {"n_peers": int, "rtt_file": str, "out_dir": str, "xi_scale": float}


def _field_type(cls, name):
    for f in fields(cls):
        if f.name == name:
            default = f.default
            if default is dataclasses.MISSING and f.default_factory is not dataclasses.MISSING:
                default = f.default_factory()
            if default is None:
                return OPTIONAL_TYPES.get(name, str)
            return type(default)
    raise KeyError(name)


def parse_value(cls, name, text):
    """Convert the text of one INI entry to the type of the dataclass field."""
    text = text.strip()
    kind = _field_type(cls, name)
    if text.lower() in ("none", "") and name in OPTIONAL_TYPES:
        return None
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(float(text)) if float(text).is_integer() else int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            if name == "transitions":
                return tuple(tuple(float(x) for x in row.replace(",", " ").split()) for row in text.split(";"))
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def format_value(value):
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(f"{x:g}" for x in row) for row in value)
        return ", ".join(f"{x:g}" for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_updates(cls, items):
    known = {f.name for f in fields(cls)}
    out = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        out[key] = parse_value(cls, key, text)
    return out


def from_parser(parser):
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {}
    for name in NESTED:
        if parser.has_section(name):
            cls = SECTIONS[name]
            try:
                parts[name] = cls(**_section_updates(cls, parser.items(name)))
            except TypeError as exc:
                raise ConfigError(str(exc)) from exc
    sim = _section_updates(SimConfig, parser.items("sim")) if parser.has_section("sim") else {}
    for key in NESTED:
        if key in sim:
            raise ConfigError(f"{key!r} is a section, not a [sim] key")
    return SimConfig(**parts, **sim)


def loads(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return from_parser(parser)


def load(path):
    """Read and validate a config file; raises ConfigError on any problem."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return loads(fh.read()).validate()


def dumps(cfg):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["sim"] = {f.name: format_value(getattr(cfg, f.name)) for f in fields(cfg)
                     if f.name not in NESTED and getattr(cfg, f.name) is not None}
    for name in NESTED:
        sub = getattr(cfg, name)
        if sub is not None:
            parser[name] = {f.name: format_value(getattr(sub, f.name)) for f in fields(sub)
                            if getattr(sub, f.name) is not None}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def dump(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def resolve_key(key):
    """``section.field`` or a bare field name -> (section, field)."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        if name not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"unknown key {key!r}")
        return section, name
    hits = [s for s in ("sim", "world", "manager", "pam") if key in {f.name for f in fields(SECTIONS[s])}]
    if not hits:
        raise ConfigError(f"unknown key {key!r}")
    if len(hits) > 1 and hits[0] != "sim":
        raise ConfigError(f"ambiguous key {key!r}, use one of {', '.join(h + '.' + key for h in hits)}")
    return hits[0], key


def override(cfg, key, text):
    """Copy of ``cfg`` with one field replaced; ``text`` is parsed like an INI value."""
    section, name = resolve_key(key)
    value = parse_value(SECTIONS[section], name, text)
    if section == "sim":
        return replace(cfg, **{name: value})
    sub = getattr(cfg, section)
    if sub is None:
        sub = replace(cfg.world)
    return replace(cfg, **{section: replace(sub, **{name: value})})


def apply_overrides(cfg, pairs):
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        cfg = override(cfg, key.strip(), text)
    return cfg
