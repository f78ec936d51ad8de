"""Experiment configuration files.

Plain INI key/value text read with :mod:`configparser`::

    # comments start with '#' or ';'
    [task]
    name = mackey

    [model]
    d = 40
    theta = 50

Values are typed on load: integers, floats, ``true``/``false`` and
comma-separated lists; anything else stays a string. A bare name such as
``mackey`` resolves to a config shipped in ``lmufit/configs``.
"""
import configparser
import os
from importlib import resources

SECTIONS = ("task", "model", "data", "train")


def _typed(raw):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        return [_typed(part) for part in text.split(",") if part.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def shipped_configs():
    root = resources.files("lmufit") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve(name_or_path):
    if os.path.exists(name_or_path):
        return name_or_path
    candidate = resources.files("lmufit") / "configs" / f"{name_or_path}.ini"
    if candidate.is_file():
        return str(candidate)
    raise FileNotFoundError(f"no config file {name_or_path!r}; shipped configs: {', '.join(shipped_configs())}")


def load_config(name_or_path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = resolve(name_or_path)
    with open(path) as fh:
        parser.read_file(fh)
    cfg = {section: {} for section in SECTIONS}
    for section in parser.sections():
        cfg.setdefault(section, {})
        for key, value in parser.items(section):
            cfg[section][key] = _typed(value)
    cfg["_path"] = str(path)
    return cfg


def apply_overrides(cfg, pairs):
    """Apply ``section.key=value`` strings on top of a loaded config."""
    for pair in pairs or ():
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise ValueError(f"override {pair!r} is not of the form section.key=value")
        lhs, value = pair.split("=", 1)
        section, key = lhs.split(".", 1)
        cfg.setdefault(section, {})[key] = _typed(value)
    return cfg
