"""Validation of YAML run configuration files."""
from __future__ import annotations

from copy import deepcopy
import logging
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .const import (
    COND_THRESHOLD,
    DEFAULT_REPLICATES,
    DERIVATIVE_ARE,
    LOTKA_VOLTERRA_REFERENCE,
    MAX_POLY_ORDER,
    REFINE_FACTOR,
)
from .direct_estimator import ESTIMATORS, PipelineConfig
from .experiments import (
    DISTRIBUTIONS,
    GridDesign,
    McConfig,
    NoiseSpec,
    RepeatedDesign,
)
from .ode_core import BUILTIN_MODELS, OdeModel
from .smoothing import BANDWIDTH_UNITS, KERNELS, SmootherConfig

_LOGGER = logging.getLogger(__name__)

CONF_MODEL = "model"
CONF_TRUE = "true"
CONF_THETA = "theta"
CONF_NU = "nu"
CONF_XI = "xi"
CONF_DESIGN = "design"
CONF_KIND = "kind"
CONF_HORIZON = "horizon"
CONF_POINTS = "points"
CONF_INTERVALS = "intervals"
CONF_REPLICATES = "replicates"
CONF_NOISE = "noise"
CONF_DISTRIBUTION = "distribution"
CONF_VARIANCE = "variance"
CONF_PIPELINE = "pipeline"
CONF_ESTIMATOR = "estimator"
CONF_ORDER = "order"
CONF_BANDWIDTH = "bandwidth"
CONF_BANDWIDTH_UNITS = "bandwidth_units"
CONF_SMOOTHNESS = "smoothness"
CONF_KERNEL = "kernel"
CONF_REFINE = "refine"
CONF_KNOWN_XI = "known_xi"
CONF_COND_THRESHOLD = "cond_threshold"
CONF_BOOTSTRAP = "bootstrap"
CONF_MONTE_CARLO = "monte_carlo"
CONF_RATE = "rate"
CONF_LADDER = "ladder"
CONF_REFERENCE = "reference"
CONF_CELL = "cell"
CONF_SEED = "seed"

REFERENCES = ("derivative", "profiling", "lotka_volterra")

REQUIRED_SECTIONS: dict[str, tuple[str, ...]] = {
    "simulate": (CONF_MODEL, CONF_TRUE, CONF_DESIGN, CONF_NOISE),
    "fit": (CONF_MODEL, CONF_DESIGN),
    "mc": (CONF_MODEL, CONF_TRUE, CONF_DESIGN, CONF_NOISE),
    "rate": (CONF_MODEL, CONF_TRUE, CONF_DESIGN, CONF_NOISE),
    "identify": (CONF_MODEL, CONF_DESIGN),
}


class ConfigError(Exception):
    """Exception for an invalid run configuration."""

    def __init__(self, message: str, path: str | None = None) -> None:
        """Initialize the error."""
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _integer(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise vol.Invalid("expected an integer")
    return value


POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
NONNEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
VECTOR = vol.All([vol.Coerce(float)], vol.Length(min=1))

TRUE_SCHEMA = vol.Schema(
    {
        vol.Exclusive(CONF_THETA, "parameter"): VECTOR,
        vol.Exclusive(CONF_NU, "parameter"): VECTOR,
        vol.Required(CONF_XI): VECTOR,
    },
    extra=vol.PREVENT_EXTRA,
)

GRID_DESIGN_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_KIND): "grid",
        vol.Required(CONF_HORIZON): POSITIVE,
        vol.Required(CONF_POINTS): vol.All(_integer, vol.Range(min=2)),
    },
    extra=vol.PREVENT_EXTRA,
)

REPEATED_DESIGN_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_KIND): "repeated",
        vol.Required(CONF_HORIZON): POSITIVE,
        vol.Required(CONF_INTERVALS): vol.All(_integer, vol.Range(min=1)),
        vol.Required(CONF_REPLICATES): vol.All(_integer, vol.Range(min=1)),
    },
    extra=vol.PREVENT_EXTRA,
)

DESIGN_SCHEMAS = {"grid": GRID_DESIGN_SCHEMA, "repeated": REPEATED_DESIGN_SCHEMA}


def design_schema(value: Any) -> dict:
    """Validate a design section against the schema of its kind."""
    if not isinstance(value, dict):
        raise vol.Invalid("expected a mapping")
    kind = value.get(CONF_KIND)
    if kind not in DESIGN_SCHEMAS:
        raise vol.Invalid("must be grid or repeated", path=[CONF_KIND])
    return DESIGN_SCHEMAS[kind](value)


NOISE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_DISTRIBUTION, default="gaussian"): vol.In(DISTRIBUTIONS),
        vol.Required(CONF_VARIANCE): vol.Any(
            NONNEGATIVE, vol.All([NONNEGATIVE], vol.Length(min=1))
        ),
    },
    extra=vol.PREVENT_EXTRA,
)

PIPELINE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_ESTIMATOR, default="smooth"): vol.In(ESTIMATORS),
        vol.Optional(CONF_ORDER, default=1): vol.All(
            _integer, vol.Range(min=0, max=MAX_POLY_ORDER)
        ),
        vol.Optional(CONF_BANDWIDTH, default=None): vol.Any(None, POSITIVE),
        vol.Optional(CONF_BANDWIDTH_UNITS, default="normalized"): vol.In(
            BANDWIDTH_UNITS
        ),
        vol.Optional(CONF_SMOOTHNESS, default=None): vol.Any(
            None, vol.All(vol.Coerce(float), vol.Range(min=1))
        ),
        vol.Optional(CONF_KERNEL, default="epanechnikov"): vol.In(sorted(KERNELS)),
        vol.Optional(CONF_REFINE, default=REFINE_FACTOR): vol.All(
            _integer, vol.Range(min=1)
        ),
        vol.Optional(CONF_KNOWN_XI, default=None): vol.Any(None, VECTOR),
        vol.Optional(CONF_COND_THRESHOLD, default=COND_THRESHOLD): POSITIVE,
    },
    extra=vol.PREVENT_EXTRA,
)

MONTE_CARLO_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_REPLICATES, default=DEFAULT_REPLICATES): vol.All(
            _integer, vol.Range(min=1)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)

RATE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_LADDER, default=[100, 200, 400, 800, 1600]): vol.All(
            [vol.All(_integer, vol.Range(min=2))], vol.Length(min=3)
        ),
        vol.Optional(CONF_REPLICATES, default=200): vol.All(_integer, vol.Range(min=1)),
    },
    extra=vol.PREVENT_EXTRA,
)

REFERENCE_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_KIND): vol.In(REFERENCES),
        vol.Optional(CONF_CELL): vol.All([vol.Coerce(float)], vol.Length(min=2, max=2)),
    },
    extra=vol.PREVENT_EXTRA,
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_MODEL): vol.In(sorted(BUILTIN_MODELS)),
        vol.Optional(CONF_TRUE): TRUE_SCHEMA,
        vol.Optional(CONF_DESIGN): design_schema,
        vol.Optional(CONF_NOISE): NOISE_SCHEMA,
        vol.Optional(CONF_PIPELINE): PIPELINE_SCHEMA,
        vol.Optional(CONF_BOOTSTRAP, default=0): vol.All(
            _integer, vol.Any(0, vol.Range(min=2))
        ),
        vol.Optional(CONF_MONTE_CARLO): MONTE_CARLO_SCHEMA,
        vol.Optional(CONF_RATE): RATE_SCHEMA,
        vol.Optional(CONF_REFERENCE): REFERENCE_SCHEMA,
        vol.Optional(CONF_SEED, default=0): vol.All(
            _integer, vol.Range(min=0, max=2**64 - 1)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)

# Sections that are filled from their schema defaults when left out.
_DEFAULTED_SECTIONS = (CONF_PIPELINE, CONF_MONTE_CARLO, CONF_RATE)


def _dotted(path: list) -> str:
    return ".".join(str(part) for part in path)


def _check_lengths(config: dict, model: OdeModel) -> None:
    true = config.get(CONF_TRUE)
    if true is not None:
        if CONF_THETA not in true and CONF_NU not in true:
            raise ConfigError("one of theta or nu is required", CONF_TRUE)
        expected = {CONF_THETA: model.p, CONF_NU: model.q, CONF_XI: model.d}
        for key, size in expected.items():
            if key in true and len(true[key]) != size:
                raise ConfigError(
                    f"expected {size} values for model {model.name}, got {len(true[key])}",
                    f"{CONF_TRUE}.{key}",
                )
        if CONF_NU in true and not model.identity_link and model.h_inverse is None:
            raise ConfigError("model has no inverse link", f"{CONF_TRUE}.{CONF_NU}")
    known = config[CONF_PIPELINE][CONF_KNOWN_XI]
    if known is not None and len(known) != model.d:
        raise ConfigError(
            f"expected {model.d} values, got {len(known)}",
            f"{CONF_PIPELINE}.{CONF_KNOWN_XI}",
        )
    pipeline = config[CONF_PIPELINE]
    bandwidth = pipeline[CONF_BANDWIDTH]
    if (
        bandwidth is not None
        and pipeline[CONF_BANDWIDTH_UNITS] == "normalized"
        and bandwidth > 1
    ):
        raise ConfigError(
            "normalized bandwidth must be at most 1",
            f"{CONF_PIPELINE}.{CONF_BANDWIDTH}",
        )
    noise = config.get(CONF_NOISE)
    if noise is not None and isinstance(noise[CONF_VARIANCE], list):
        if len(noise[CONF_VARIANCE]) not in (1, model.d):
            raise ConfigError(
                f"expected 1 or {model.d} values", f"{CONF_NOISE}.{CONF_VARIANCE}"
            )


def validate(raw: Any, command: str | None = None) -> dict:
    """Return the validated configuration with defaults filled in.

    Raises:
        ConfigError: with the dotted path of the first offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    raw = deepcopy(raw)
    # YAML 1.1 reads an unquoted `true:` key as the boolean True
    if True in raw:
        raw[CONF_TRUE] = raw.pop(True)
    for section in _DEFAULTED_SECTIONS:
        if raw.get(section) is None:
            raw[section] = {}
    try:
        config = CONFIG_SCHEMA(raw)
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        raise ConfigError(first.msg, _dotted(first.path)) from err
    except vol.Invalid as err:
        raise ConfigError(err.msg, _dotted(err.path)) from err

    if command is not None:
        for section in REQUIRED_SECTIONS[command]:
            if section not in config:
                raise ConfigError(f"section required by {command}", section)

    model = BUILTIN_MODELS[config[CONF_MODEL]]()
    _check_lengths(config, model)
    design = config.get(CONF_DESIGN)
    if design is not None:
        step = config[CONF_PIPELINE][CONF_ESTIMATOR] == "step"
        if step != (design[CONF_KIND] == "repeated"):
            raise ConfigError(
                "step estimator needs a repeated design, smooth a grid design",
                f"{CONF_PIPELINE}.{CONF_ESTIMATOR}",
            )
    reference = config.get(CONF_REFERENCE)
    if reference is not None and reference[CONF_KIND] == "derivative":
        cell = reference_cell(config)
        if cell not in DERIVATIVE_ARE:
            raise ConfigError("unknown variance cell", f"{CONF_REFERENCE}.{CONF_CELL}")
    if reference is not None and reference[CONF_KIND] == "lotka_volterra":
        if CONF_NOISE not in config or CONF_CELL not in reference:
            raise ConfigError("needs a noise section and a [setup, J] cell", CONF_REFERENCE)
        if reference_cell(config) not in LOTKA_VOLTERRA_REFERENCE:
            raise ConfigError("unknown setup cell", f"{CONF_REFERENCE}.{CONF_CELL}")
    _LOGGER.debug("Validated configuration for model %s", model.name)
    return config


def reference_cell(config: dict) -> tuple | None:
    """Return the lookup key of the configured reference, if it has one.

    A ``lotka_volterra`` cell is ``[setup, J]`` and is keyed together with
    the configured noise distribution.
    """
    reference = config.get(CONF_REFERENCE)
    if reference is None or CONF_CELL not in reference:
        return None
    cell = tuple(reference[CONF_CELL])
    if reference[CONF_KIND] == "lotka_volterra":
        setup, per_time = cell
        return (config[CONF_NOISE][CONF_DISTRIBUTION], int(setup), int(per_time))
    return cell


def load_config(
    path: str | Path,
    command: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> dict:
    """Read and validate a YAML configuration file.

    ``overrides`` maps dotted keys such as ``monte_carlo.replicates`` to
    values that replace the file's before validation.

    Raises:
        OSError: if the file cannot be read.
        ConfigError: if it is not valid YAML or fails validation.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"not valid YAML: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    for dotted, value in (overrides or {}).items():
        *parents, leaf = dotted.split(".")
        target = raw
        for part in parents:
            if not isinstance(target.get(part), dict):
                target[part] = {}
            target = target[part]
        target[leaf] = value
    return validate(raw, command)


def _section_keys(schema: Any, prefix: str) -> list[str]:
    if schema is design_schema:
        return sorted(
            {key for nested in DESIGN_SCHEMAS.values() for key in _section_keys(nested, prefix)}
        )
    if not isinstance(schema, vol.Schema) or not isinstance(schema.schema, dict):
        return [prefix.rstrip(".")]
    keys = []
    for marker, value in schema.schema.items():
        name = getattr(marker, "schema", marker)
        keys.extend(_section_keys(value, f"{prefix}{name}."))
    return keys


def schema_keys() -> list[str]:
    """Return every accepted key as a dotted path."""
    return _section_keys(CONFIG_SCHEMA, "")


def build_model(config: dict) -> OdeModel:
    """Return the model named by the configuration."""
    return BUILTIN_MODELS[config[CONF_MODEL]]()


def build_design(config: dict) -> GridDesign | RepeatedDesign:
    """Return the sampling design."""
    design = config[CONF_DESIGN]
    if design[CONF_KIND] == "grid":
        return GridDesign(design[CONF_HORIZON], design[CONF_POINTS])
    return RepeatedDesign(
        design[CONF_HORIZON], design[CONF_INTERVALS], design[CONF_REPLICATES]
    )


def build_noise(config: dict) -> NoiseSpec:
    """Return the noise specification seeded from the configuration."""
    noise = config[CONF_NOISE]
    variance = noise[CONF_VARIANCE]
    if isinstance(variance, list):
        variance = tuple(variance)
    return NoiseSpec(noise[CONF_DISTRIBUTION], variance, config[CONF_SEED])


def build_pipeline(config: dict) -> PipelineConfig:
    """Return the estimator pipeline settings."""
    pipeline = config[CONF_PIPELINE]
    smoother = SmootherConfig(
        order=pipeline[CONF_ORDER],
        bandwidth=pipeline[CONF_BANDWIDTH],
        kernel=KERNELS[pipeline[CONF_KERNEL]](),
        smoothness=pipeline[CONF_SMOOTHNESS],
        bandwidth_units=pipeline[CONF_BANDWIDTH_UNITS],
    )
    known = pipeline[CONF_KNOWN_XI]
    return PipelineConfig(
        estimator=pipeline[CONF_ESTIMATOR],
        smoother=smoother,
        refine=pipeline[CONF_REFINE],
        known_xi=None if known is None else tuple(known),
        cond_threshold=pipeline[CONF_COND_THRESHOLD],
    )


def build_mc_config(config: dict) -> McConfig:
    """Return the Monte Carlo experiment described by the configuration."""
    true = config[CONF_TRUE]
    theta = true.get(CONF_THETA)
    nu = true.get(CONF_NU)
    return McConfig(
        model=build_model(config),
        xi=tuple(true[CONF_XI]),
        design=build_design(config),
        noise=build_noise(config),
        pipeline=build_pipeline(config),
        theta=None if theta is None else tuple(theta),
        nu=None if nu is None else tuple(nu),
        replicates=config[CONF_MONTE_CARLO][CONF_REPLICATES],
        bootstrap=config[CONF_BOOTSTRAP],
        seed=config[CONF_SEED],
    )
