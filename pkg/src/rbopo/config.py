"""Run-config documents: schema validation, presets and object builders."""

from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from rbopo.cavity import CavityGeometry, KerrScanConfig, detuning_grid
from rbopo.errors import ConfigError
from rbopo.model import OperatingPoint, SqueezingModel, TemperatureModel
from rbopo.synth import SynthConfig
from rbopo.umz import InterferometerConfig, optimal_path_difference

SCHEMA_VERSION = 1
SCHEMA_NAME = f"run_config.v{SCHEMA_VERSION}.json"


@lru_cache(maxsize=None)
def load_schema() -> dict:
    text = resources.files("rbopo").joinpath("schemas", SCHEMA_NAME).read_text(encoding="utf-8")
    return json.loads(text)


def validate(doc) -> dict:
    """Raise ConfigError listing every schema violation in ``doc``."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid run config:\n  " + "\n  ".join(lines))
    return doc


def preset_names() -> list[str]:
    root = resources.files("rbopo").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    text = resources.files("rbopo").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")
    return validate(json.loads(text))


def load_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate(doc)


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``override`` replace those in ``base``."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(config_path=None, preset: str | None = None, seed: int | None = None) -> dict:
    """Preset (if any), overlaid by the config file (if any), then the seed override."""
    doc = {"schema_version": SCHEMA_VERSION}
    if preset is not None:
        doc = load_preset(preset)
    if config_path is not None:
        doc = deep_merge(doc, load_file(config_path))
    if seed is not None:
        doc = deep_merge(doc, {"synth": {"seed": seed}})
        for section in ("linearity", "threshold"):
            if section in doc:
                doc[section]["seed"] = seed
    return validate(doc)


# -- builders ----------------------------------------------------------------------

def _build(fn, *args):
    try:
        return fn(*args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def build_model(doc) -> SqueezingModel:
    return _build(SqueezingModel.from_dict, doc.get("model", {}))


def build_synth(doc) -> SynthConfig:
    if "operating_point" not in doc:
        raise ConfigError("simulation needs an operating_point section")
    data = {"model": doc.get("model", {}), "operating_point": doc["operating_point"], "synth": doc.get("synth", {})}
    return _build(SynthConfig.from_dict, data)


def build_operating_point(doc) -> OperatingPoint:
    return _build(OperatingPoint.from_dict, doc["operating_point"])


def build_temperature(doc) -> tuple[TemperatureModel, list[float]]:
    section = dict(doc.get("temperature", {}))
    temps = section.pop("temperatures_c", [91.0, 96.0, 101.0, 108.0])
    return _build(TemperatureModel.from_dict, section), [float(t) for t in temps]


def build_kerr(doc) -> KerrScanConfig:
    k = doc.get("kerr")
    if k is None:
        raise ConfigError("scan needs a kerr section")
    grid = detuning_grid(k.get("detuning_min", -6.0), k.get("detuning_max", 10.0), k.get("n_points", 801))
    return _build(
        KerrScanConfig, k["kerr_parameter"], k.get("drive", 1.0), grid, "up", k.get("output_coupling", 1.0)
    )


def build_cavity(doc) -> dict:
    """Cavity section with defaults filled in; FSR is primary, length only informational."""
    c = {"fsr_hz": 404e6, "finesse": 15.0, "twin_separation_hz": 6.070e9, **doc.get("cavity", {})}
    c["geometry"] = _build(
        CavityGeometry, c.get("round_trip_length_m", 299792458.0 / c["fsr_hz"]), c["twin_separation_hz"]
    )
    return c


def build_umz(doc) -> tuple[InterferometerConfig, float, float]:
    """Interferometer plus (signal, idler) optical frequencies."""
    u = {"visibility": 0.99, "twin_separation_hz": 6.070e9, "signal_frequency_hz": 377.107e12, **doc.get("umz", {})}
    dl = u.get("path_difference_m")
    if dl is None:
        dl = optimal_path_difference(u["twin_separation_hz"])
    cfg = _build(InterferometerConfig, dl, 0.0, u["visibility"])
    nu_s = u["signal_frequency_hz"]
    return cfg, nu_s, nu_s - u["twin_separation_hz"]
