"""Experiment configuration: JSON schema, parsing, and object builders."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .fields import CoefficientPair, ScalarFieldC1, constant_coefficients, constant_field, smooth_coefficients
from .geometry import Grid3
from .solutions import HarmonicGradient, KelvinSource, harmonic_gradient_field, kelvin_field, solve_dirichlet

EXPERIMENTS = (
    "ellipticity-check",
    "factorization-check",
    "carleman-scan",
    "three-spheres",
    "iteration-plan",
    "vanishing",
    "cauchy-stability",
    "solver-convergence",
)

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "lamelab experiment configuration",
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["constant", "smooth", "affine"]},
                "mu0": _pos,
                "lambda0": {"type": "number"},
                "mu_grad": _vec3,
                "lambda_grad": _vec3,
                "alpha0": _pos,
                "beta0": _pos,
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius": _pos,
                "h": _pos,
                "box": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "solution": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["kelvin", "harmonic_gradient", "fd_dirichlet", "constant"]},
                "y": _vec3,
                "b": _vec3,
                "mu0": _pos,
                "lambda0": _pos,
                "terms": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                },
                "value": _vec3,
                "h": _pos,
                "box": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "tol": _pos,
            },
        },
        "params": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    coefficients: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    solution: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d):
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config invalid at {list(exc.absolute_path)}: {exc.message}") from None
        return cls(
            d["experiment"],
            d.get("coefficients", {}),
            d.get("geometry", {}),
            d.get("solution", {}),
            d.get("params", {}),
            d.get("seed", 0),
            d.get("output_dir", "out"),
            raw=d,
        )

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_dict(d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def build_coefficients(self) -> CoefficientPair:
        c = self.coefficients
        fam = c.get("family", "constant")
        if fam == "constant":
            return constant_coefficients(c.get("mu0", 1.0), c.get("lambda0", 1.0))
        if fam == "smooth":
            return smooth_coefficients()
        mu = ScalarFieldC1.affine(c.get("mu0", 1.0), c.get("mu_grad", [0, 0, 0]))
        lam = ScalarFieldC1.affine(c.get("lambda0", 0.0), c.get("lambda_grad", [0, 0, 0]))
        if "alpha0" not in c or "beta0" not in c:
            raise ConfigError("affine coefficients need explicit alpha0 and beta0")
        return CoefficientPair(mu, lam, c["alpha0"], c["beta0"], name="affine")

    def build_solution(self, coeffs=None):
        s = self.solution
        kind = s.get("kind", "kelvin")
        if kind == "kelvin":
            b = np.asarray(s.get("b", [0, 0, 1.0]), dtype=float)
            return kelvin_field(KelvinSource(tuple(s.get("y", [0, 0, 2.0])), tuple(b / np.linalg.norm(b)),
                                             s.get("mu0", 1.0), s.get("lambda0", 1.0)))
        if kind == "harmonic_gradient":
            terms = s.get("terms", [[1, 1, 1, 1.0]])
            return harmonic_gradient_field(HarmonicGradient({(int(a), int(b), int(c)): float(v) for a, b, c, v in terms}))
        if kind == "constant":
            return constant_field(s.get("value", [1.0, 0.0, 0.0]))
        # fd_dirichlet: homogeneous solve with Kelvin boundary data
        kel = kelvin_field(KelvinSource(tuple(s.get("y", [0, 0, 2.0])), (0.0, 0.0, 1.0)))
        lo, hi = s.get("box", [-1.0, 1.0])
        grid = Grid3.cube(lo, hi, s.get("h", 1 / 16))
        return solve_dirichlet(coeffs or self.build_coefficients(), None, kel.value, grid, tol=s.get("tol", 1e-10))
