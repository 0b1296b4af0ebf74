"""Experiment configuration: flat `key = value` files with [section] headers.

Every key is declared in SCHEMA with its type and default. Unknown sections
or keys are hard errors so typos cannot silently fall back to defaults.
`format_resolved` materializes every default in a canonical order; feeding
the resolved file back in reproduces the exact same configuration.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .diffusion import NoiseSchedule, quadratic_schedule
from .errors import ConfigError, DataError
from .guidance import GuidanceConfig, mode_from_string
from .world import GaussianOracleWorld, make_gaussian_world

__all__ = [
    "SCHEMA", "PRESETS", "parse_config_file", "resolve_config",
    "format_resolved", "write_resolved", "schedule_from", "world_from",
    "guidance_from", "load_world_spec",
]


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "backend": (str, "oracle", "oracle | neural"),
        "seed": (int, 0, "base seed for truth draw and sampling"),
    },
    "world": {
        "nodes": (int, 6, "grid nodes N"),
        "steps": (int, 12, "grid time slices T (also the window length)"),
        "rho_s": (float, 0.6, "spatial ring correlation, |rho| < 1"),
        "rho_t": (float, 0.8, "temporal correlation, |rho| < 1"),
        "mean": (float, 0.0, "constant process mean"),
        "seed": (int, 0, "world identity seed (data synthesis stream)"),
    },
    "data": {
        "length": (int, 240, "synthesized series length for training runs"),
        "stride": (int, 1, "training window stride"),
    },
    "mask": {
        "pattern": (str, "SR-TC", "SR-TC | SC-TC"),
        "alpha": (float, 0.8, "missing rate in [0, 1]"),
        "patch": (int, 12, "temporal patch length"),
        "communities": (int, 0, "SC-TC community count (0 = derive none)"),
        "seed": (int, 1, "mask RNG seed"),
    },
    "schedule": {
        "steps": (int, 50, "diffusion steps K"),
        "beta1": (float, 1e-4, "minimum noise level"),
        "beta_k": (float, 0.5, "maximum noise level"),
        "variance_mode": (str, "beta_tilde", "beta_tilde | beta"),
    },
    "guidance": {
        "mode": (str, "fence", "fence | cfg:<lambda> | none"),
        "pi": (float, 0.5, "prior confidence in (0, 1]"),
        "lambda_ref": (float, 1.6, "reference scale > 1"),
        "t0": (float, 0.8, "activation time in (0, 1)"),
        "t1": (float, 0.5, "peak-update time in (0, 1)"),
        "alpha_scale": (float, 10.0, "temperature divisor"),
        "lambda_max": (float, 10.0, "scale clamp"),
        "scope": (str, "cluster", "cluster | global | per_node"),
        "clusters": (str, "auto", "cluster count K_c, or auto = N/20"),
    },
    "sampler": {
        "samples": (int, 10, "ensemble size S for point metrics"),
        "crps_samples": (int, 100, "ensemble size for CRPS (reused if equal to samples)"),
        "anchoring": (str, "free", "free | clamp observed coordinates"),
        "threads": (int, 1, "trajectory worker threads"),
    },
    "training": {
        "epochs_uncond": (int, 150, "stage-1 epochs"),
        "lr_uncond": (float, 2e-3, "stage-1 learning rate"),
        "patience_uncond": (int, 20, "stage-1 early-stop patience"),
        "weight_decay_uncond": (float, 1e-6, "stage-1 L2 coefficient"),
        "epochs_cond": (int, 80, "stage-2 epochs"),
        "lr_cond": (float, 1e-3, "stage-2 learning rate"),
        "patience_cond": (int, 10, "stage-2 early-stop patience"),
        "weight_decay_cond": (float, 1e-5, "stage-2 L2 coefficient"),
        "batch": (int, 8, "windows per optimizer step"),
        "d_model": (int, 16, "model width"),
        "layers": (int, 2, "attention blocks"),
        "heads": (int, 2, "attention heads"),
        "seed": (int, 0, "init and shuffling seed"),
    },
}

# preset -> {(section, key): value}; presets override file values
PRESETS: dict[str, dict[tuple[str, str], str]] = {
    "wo-C": {("guidance", "clusters"): "1", ("guidance", "scope"): "global"},
    "wo-F": {("guidance", "mode"): "cfg:1"},
    "paper-defaults": {
        ("schedule", "steps"): "50",
        ("schedule", "beta1"): "1e-4",
        ("schedule", "beta_k"): "0.5",
        ("guidance", "pi"): "0.5",
        ("guidance", "lambda_ref"): "1.6",
        ("guidance", "t0"): "0.8",
        ("guidance", "t1"): "0.5",
        ("training", "d_model"): "64",
        ("training", "layers"): "4",
        ("training", "heads"): "8",
    },
}


def parse_config_file(path) -> dict[str, dict[str, str]]:
    """Raw string values from the file, validated against SCHEMA names."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            out.setdefault(section, {})[key] = value
    return out


def resolve_config(file_values: dict | None = None,
                   preset: str | None = None) -> dict[str, dict]:
    """Typed config with every default materialized.

    Precedence: defaults, then file values, then the preset (a requested
    ablation preset is an explicit override).
    """
    merged: dict[str, dict[str, str]] = {
        s: {k: None for k in keys} for s, keys in SCHEMA.items()
    }
    if file_values:
        for section, keys in file_values.items():
            for key, value in keys.items():
                merged[section][key] = value
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        for (section, key), value in PRESETS[preset].items():
            merged[section][key] = value

    resolved: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        resolved[section] = {}
        for key, (parse, default, _help) in keys.items():
            raw = merged[section][key]
            if raw is None:
                resolved[section][key] = default
                continue
            try:
                resolved[section][key] = parse(str(raw).strip())
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc
    return resolved


def format_resolved(cfg: dict[str, dict]) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = cfg[section][key]
            text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: dict[str, dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_resolved(cfg))


def schedule_from(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    return quadratic_schedule(s["steps"], s["beta1"], s["beta_k"],
                              variance_mode=s["variance_mode"])


def world_from(cfg: dict) -> GaussianOracleWorld:
    w = cfg["world"]
    return make_gaussian_world(w["nodes"], w["steps"], w["rho_s"], w["rho_t"],
                               w["mean"], seed=w["seed"])


def guidance_from(cfg: dict) -> tuple[GuidanceConfig, int | None]:
    g = cfg["guidance"]
    mode, fixed = mode_from_string(g["mode"])
    gcfg = GuidanceConfig(mode=mode, fixed_lambda=fixed, pi=g["pi"],
                          lambda_ref=g["lambda_ref"], t0=g["t0"], t1=g["t1"],
                          alpha_scale=g["alpha_scale"],
                          lambda_max=g["lambda_max"], scope=g["scope"])
    raw = g["clusters"]
    if raw == "auto":
        return gcfg, None
    try:
        return gcfg, int(raw)
    except ValueError:
        raise ConfigError(f"[guidance] clusters must be an integer or auto, got {raw!r}") \
            from None


WORLD_SPEC_KEYS = ("nodes", "steps", "rho_s", "rho_t", "mean", "seed")


def load_world_spec(path) -> GaussianOracleWorld:
    """Oracle spec file: flat `key = value` lines, no sections."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"oracle spec not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        if key not in WORLD_SPEC_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown oracle key {key!r}")
        values[key] = value.strip()
    try:
        return make_gaussian_world(
            n_nodes=int(values.get("nodes", "6")),
            n_steps=int(values.get("steps", "12")),
            spatial_corr=float(values.get("rho_s", "0.6")),
            temporal_corr=float(values.get("rho_t", "0.8")),
            mean=float(values.get("mean", "0.0")),
            seed=int(values.get("seed", "0")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad oracle spec value: {exc}") from exc
