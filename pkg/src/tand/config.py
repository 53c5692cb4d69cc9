"""INI run configuration: typed, fail-closed, round-trip stable.

Grammar is plain `[section]` / `key = value` lines (hand-editable in batch
runs, no host-language literals). Every key is declared in SCHEMA with its
converter; unknown sections or keys reject the whole file rather than being
silently ignored, so a typo cannot run a subtly different scan. Lists are
comma-separated, per-M maps are `M: count` pairs.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _str(s):
    return s.strip()


def _int_list(s):
    return tuple(int(v) for v in s.split(","))


def _float_list(s):
    return tuple(float(v) for v in s.split(","))


def _realizations(s):
    """Either a flat count or per-M `M: count` pairs."""
    if ":" not in s:
        return int(s)
    out = {}
    for item in s.split(","):
        m, count = item.split(":")
        out[int(m)] = int(count)
    return out


SCHEMA = {
    "run": {
        "master_seed": _int,
        "out": _str,
        "workers": _int,
    },
    "disorder": {
        "k0": _float,
        "v0": _float,
        "dims": _int,
        "k_cut": _int,
        "normalization": _str,
    },
    "grid": {
        "n": _int,
        "dims": _int,
    },
    "tmm": {
        "energies_over_esigma": _float_list,
        "m_values": _int_list,
        "delta": _float,
        "l_max": _int,
        "realizations": _realizations,
        "mode": _str,
        "qr_period": _int,
        "rtol": _float,
        "transverse_boundary": _str,
    },
    "fss": {
        "n_u": _int,
        "n_f": _int,
        "n_boot": _int,
        "window": _float_list,
    },
    "spectral": {
        "target_over_esigma": _float,
        "n_states": _int,
        "tol": _float,
        "realization": _int,
        "axis": _int,
        "floor": _float,
    },
    "driven1d": {
        "v0": _float,
        "omega1": _float,
        "omega2": _float,
        "omega3": _float,
        "k0": _int,
        "envelope": _str,
        "g_mode": _str,
        "n": _int,
        "periods": _int,
        "steps_per_period": _int,
        "realization": _int,
        "n_worst": _int,
    },
}

_MISSING = object()


def _format_value(v):
    if isinstance(v, dict):
        return ", ".join(f"{k}: {v[k]}" for k in sorted(v))
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)  # shortest exact decimal, parses back bit-identical
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: {section: {key: typed value}}."""

    sections: dict

    def get(self, section, key, default=_MISSING):
        try:
            return self.sections[section][key]
        except KeyError:
            if default is not _MISSING:
                return default
            raise ConfigError(f"missing required key [{section}] {key}") from None

    def section(self, name):
        return dict(self.sections.get(name, {}))

    def with_overrides(self, section, **kv):
        """Copy with some keys replaced; None values are ignored."""
        new = {s: dict(d) for s, d in self.sections.items()}
        for k, v in kv.items():
            if v is None:
                continue
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown key in override: [{section}] {k}")
            new.setdefault(section, {})[k] = v
        return RunConfig(sections=new)

    def to_text(self):
        """Canonical rendering; parse(to_text()) reproduces self exactly."""
        out = []
        for sec in SCHEMA:
            if sec not in self.sections or not self.sections[sec]:
                continue
            out.append(f"[{sec}]")
            for key in sorted(self.sections[sec]):
                out.append(f"{key} = {_format_value(self.sections[sec][key])}")
            out.append("")
        return "\n".join(out)

    @property
    def config_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        sections[sec] = {}
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key [{sec}] {key}")
            try:
                sections[sec][key] = SCHEMA[sec][key](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value [{sec}] {key} = {raw!r}: {exc}") from exc
    return RunConfig(sections=sections)


def load_config(path):
    with io.open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
