"""Declarative model/domain configuration.

Models and domains can be described in a JSON-compatible mapping naming the
built-in field families and domains, e.g.::

    {
      "model": {"kind": "sde",
                "drift": {"family": "horizontal_drift", "a_coeffs": [1, 0, 1]},
                "noise": [{"family": "constant", "vector": [0.0, 1.0]}]},
      "domain": {"kind": "cylinder_strip"}
    }

or ``{"model": {"kind": "pdmp", "switch_rate": 2.0}}`` for the two-mode
transport process (whose double-branch domain is implied by the model).
"""

import json

from .domains import (
    DomainSpec,
    cylinder_strip_domain,
    disk_domain,
    interval_domain,
    rectangle_domain,
)
from .errors import ConfigError
from .fields import constant_field, horizontal_drift, linear_field, polynomial_field
from .models import PDMPModel, sde_model

__all__ = ["load_config", "field_from_config", "domain_from_config", "model_from_config"]


def field_from_config(spec: dict):
    try:
        family = spec["family"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"field spec {spec!r} has no 'family'") from exc
    label = spec.get("label")
    if family == "constant":
        f = constant_field(spec["vector"])
    elif family == "linear":
        f = linear_field(spec["matrix"], spec.get("offset"))
    elif family == "polynomial":
        f = polynomial_field(int(spec["dim"]), spec["components"])
    elif family == "horizontal_drift":
        f = horizontal_drift(spec["a_coeffs"])
    else:
        raise ConfigError(f"unknown field family {family!r}")
    if label:
        object.__setattr__(f, "label", label)
    return f


def domain_from_config(spec: dict) -> DomainSpec:
    try:
        kind = spec["kind"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"domain spec {spec!r} has no 'kind'") from exc
    if kind == "interval":
        return interval_domain(spec.get("a", 0.0), spec.get("b", 1.0))
    if kind == "rectangle":
        return rectangle_domain(spec["lo"], spec["hi"])
    if kind == "disk":
        return disk_domain(spec.get("center", (0.0, 0.0)), spec.get("radius", 1.0))
    if kind == "cylinder_strip":
        return cylinder_strip_domain(
            spec.get("y_min", 0.0), spec.get("y_max", 1.0), spec.get("period", 1.0)
        )
    raise ConfigError(f"unknown domain kind {kind!r}")


def model_from_config(spec: dict):
    try:
        kind = spec["kind"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model spec {spec!r} has no 'kind'") from exc
    if kind == "pdmp":
        try:
            return PDMPModel(switch_rate=float(spec["switch_rate"]))
        except KeyError as exc:
            raise ConfigError("pdmp model needs 'switch_rate'") from exc
    if kind == "sde":
        drift = field_from_config(spec["drift"])
        noise = [field_from_config(s) for s in spec.get("noise", [])]
        return sde_model(drift, noise)
    raise ConfigError(f"unknown model kind {kind!r}")


def load_config(source):
    """Build (model, domain) from a mapping, JSON string, or file path.

    The domain entry is optional for the two-mode model, whose branch domain
    is part of the model itself; it is returned as None in that case.
    """
    if isinstance(source, str):
        try:
            if source.lstrip().startswith("{"):
                data = json.loads(source)
            else:
                with open(source) as fh:
                    data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    else:
        data = dict(source)
    if "model" not in data:
        raise ConfigError("config needs a 'model' entry")
    model = model_from_config(data["model"])
    domain = None
    if "domain" in data:
        domain = domain_from_config(data["domain"])
    elif not isinstance(model, PDMPModel):
        raise ConfigError("SDE configs need a 'domain' entry")
    return model, domain
