"""Experiment configuration: flat dotted keys, file parsing, manifests.

The config format is a flat key-value text file (``key = value`` per
line, ``#`` comments).  Every knob has a default, so an empty file is
a valid full configuration.  Unknown keys are rejected with the key
path in the error.  A JSON run manifest (as written next to every
run's outputs) can be loaded in place of a config file; re-running
from a manifest reproduces the run bit for bit.
"""

import json
from dataclasses import dataclass, field, fields

from .darcy import SolverSettings
from .errors import ConfigError, ParameterError, PermflowError
from .lifting import LiftingConfig
from .model import PriorHyperparams
from .smc import SMCSettings


def _to_bool(raw):
    val = str(raw).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


# key -> (converter, default)
SCHEMA = {
    "smc.particles": (int, 740),
    "smc.densities": (int, 740),
    "smc.ess_factor": (float, 0.95),
    "smc.initial_step": (float, 0.25),
    "smc.stop_threshold": (float, 0.0),
    "smc.max_scale": (int, 5),
    "smc.run_all_scales": (_to_bool, False),
    "prior.gamma_root": (float, 0.85),
    "prior.gamma_default": (float, 0.5),
    "prior.variance_alpha_inv": (float, 0.7),
    "prior.scaling_factor_r": (float, 0.5),
    "likelihood.a0": (float, 0.001),
    "likelihood.b0": (float, 0.001),
    "solver.finest_level": (int, 5),
    "solver.residual_tolerance": (float, 1e-5),
    "solver.refinement_threshold": (float, 0.02),
    "solver.max_vcycles": (int, 120),
    "solver.smoother_sweeps": (int, 3),
    "wavelet.half_width": (int, 2),
    "wavelet.boundary": (str, "periodic"),
    "observation.sensor_grid": (int, 10),
    "observation.noise_fraction": (float, 0.01),
    "run.seed": (int, 0),
    "run.benchmark": (str, "I"),
    "run.output_dir": (str, "runs"),
}

_NONNEGATIVE = ("observation.noise_fraction", "solver.refinement_threshold",
                "smc.stop_threshold")
_POSITIVE = ("smc.particles", "smc.densities", "smc.ess_factor",
             "smc.initial_step", "prior.gamma_root", "prior.gamma_default",
             "prior.variance_alpha_inv", "prior.scaling_factor_r",
             "likelihood.a0", "likelihood.b0", "solver.residual_tolerance",
             "solver.max_vcycles", "solver.smoother_sweeps",
             "observation.sensor_grid", "wavelet.half_width")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved flat configuration."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def hyperparams(self):
        return PriorHyperparams(
            gamma_root=self["prior.gamma_root"],
            gamma_default=self["prior.gamma_default"],
            variance_alpha_inv=self["prior.variance_alpha_inv"],
            scaling_factor_r=self["prior.scaling_factor_r"],
            likelihood_a0=self["likelihood.a0"],
            likelihood_b0=self["likelihood.b0"],
        )

    def solver_settings(self):
        return SolverSettings(
            finest_level=self["solver.finest_level"],
            residual_tolerance=self["solver.residual_tolerance"],
            refinement_threshold=self["solver.refinement_threshold"],
            max_vcycles=self["solver.max_vcycles"],
            smoother_sweeps=self["solver.smoother_sweeps"],
        )

    def smc_settings(self):
        return SMCSettings(
            particles=self["smc.particles"],
            densities=self["smc.densities"],
            ess_factor=self["smc.ess_factor"],
            initial_step=self["smc.initial_step"],
            stop_threshold=self["smc.stop_threshold"],
            max_scale=self["smc.max_scale"],
            seed=self["run.seed"],
            run_all_scales=self["smc.run_all_scales"],
        )

    def lifting(self):
        return LiftingConfig(
            half_width=self["wavelet.half_width"],
            boundary=self["wavelet.boundary"],
        )

    def to_manifest(self, **extra):
        doc = {"config": {k: self.values[k] for k in sorted(self.values)}}
        doc.update(extra)
        return doc


def resolve_config(overrides=None):
    """Defaults plus overrides -> validated ExperimentConfig."""
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for key, raw in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError("unknown configuration key", key=key)
        conv, _ = SCHEMA[key]
        try:
            values[key] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot parse value {raw!r} ({exc})", key=key)
    for key in _POSITIVE:
        if not values[key] > 0:
            raise ConfigError(f"must be > 0, got {values[key]}", key=key)
    for key in _NONNEGATIVE:
        if values[key] < 0:
            raise ConfigError(f"must be >= 0, got {values[key]}", key=key)
    cfg = ExperimentConfig(values=values)
    try:
        cfg.hyperparams()
        cfg.solver_settings()
        cfg.smc_settings()
        cfg.lifting()
    except (ParameterError, PermflowError) as exc:
        raise ConfigError(str(exc))
    return cfg


def parse_config_text(text):
    """Parse the flat key-value format into an ExperimentConfig."""
    overrides = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        overrides[key.strip()] = value.strip()
    return resolve_config(overrides)


def parse_config(path):
    """Load a config file (flat text) or a run manifest (JSON)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        return resolve_config(doc.get("config", doc))
    return parse_config_text(text)
