"""Experiment configuration: strict JSON schema, explicit defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .covariance import CovarianceModel, QuadratureSpec
from .errors import ConfigError, SpdeLabError
from .grid import GridSpec
from .kernels import InitialData, Kernel, check_regularity
from .solver import Coefficients

SCHEMES = ("linear-spectral", "picard", "euler")
SUITES = ("linear-variance", "isometry", "dalang", "initial-terms", "equivalence",
          "picard", "moments", "weighted-norms", "acceptance")

TOP_KEYS = {"equation", "dimension", "covariance", "grid", "coefficients", "initial_data",
            "scheme", "replicates", "seed", "output_dir", "suite", "picard", "quadrature"}
GRID_KEYS = {"half_width", "points", "horizon", "steps", "window"}
COEFF_FIELDS = {"zero": set(), "one": set(), "linear": {"c"},
                "affine": {"slope", "intercept"}, "sine": {"amplitude"},
                "custom-table": {"x", "y"}}
INITIAL_FIELDS = {"zero": set(), "constant": {"value", "velocity"},
                  "gaussian_bump": {"amplitude", "width", "velocity"},
                  "indicator": {"radius", "value"}, "table": {"x", "u", "v"}}
COV_PARAMS = {"white": set(), "riesz": {"alpha"}, "exponential": {"lambda"},
              "gaussian": {"ell"},
              "tabulated": {"radii", "spectral", "spatial_radii", "spatial"}}


@dataclass(frozen=True)
class ExperimentConfig:
    equation: str
    dimension: int
    covariance: CovarianceModel
    grid: GridSpec
    coefficients: Coefficients
    initial_data: InitialData
    initial_spec: dict
    scheme: str = "picard"
    replicates: int = 1
    seed: int = 0
    output_dir: str = "out"
    suite: str = "linear-variance"
    picard: dict = field(default_factory=lambda: {"tol": None, "rtol": 1e-6, "max_iter": 50})
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    @property
    def kernel(self) -> Kernel:
        return Kernel(self.equation, self.dimension)

    def to_dict(self) -> dict:
        """Fully defaulted form; parsing it again gives the same config."""
        q = self.quadrature
        return {"equation": self.equation, "dimension": self.dimension,
                "covariance": {"kind": self.covariance.kind,
                               "params": self.covariance.params},
                "grid": {k: v for k, v in self.grid.to_dict().items() if k != "dimension"},
                "coefficients": self.coefficients.to_dict(),
                "initial_data": dict(self.initial_spec),
                "scheme": self.scheme, "replicates": self.replicates, "seed": self.seed,
                "output_dir": self.output_dir, "suite": self.suite,
                "picard": dict(self.picard),
                "quadrature": {"radius": q.radius, "panels": q.panels, "tol": q.tol,
                               "tail": q.tail}}


def _keys(obj, allowed: set, path: str, required: set = frozenset()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(required - set(obj))
    if missing:
        raise ConfigError(f"{path}: missing key(s) {', '.join(missing)}")


def _number(obj, key, path, default=None, kind=float, positive=False):
    value = obj.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    if kind is int and value != int(value):
        raise ConfigError(f"{path}.{key}: expected an integer")
    value = kind(value)
    if positive and not value > 0:
        raise ConfigError(f"{path}.{key}: must be positive")
    return value


def _wrap(path, func, *args):
    try:
        return func(*args)
    except (SpdeLabError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate JSON config text; errors name the offending field
    (or line and column for syntax errors)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _keys(raw, TOP_KEYS, "config", {"equation", "dimension"})
    equation = raw["equation"]
    if equation not in ("heat", "wave"):
        raise ConfigError("equation: expected 'heat' or 'wave'")
    d = _number(raw, "dimension", "config", kind=int, positive=True)
    if equation == "wave" and d not in (1, 2, 3):
        raise ConfigError("dimension: wave requires d ∈ {1,2,3}")
    _keys(raw, TOP_KEYS, "config", {"covariance", "grid"})

    cov = raw["covariance"]
    _keys(cov, {"kind", "params"}, "covariance", {"kind"})
    kind = cov["kind"]
    if kind not in COV_PARAMS:
        raise ConfigError(f"covariance.kind: unknown kind {kind!r}")
    params = cov.get("params") or {}
    _keys(params, COV_PARAMS[kind], "covariance.params")
    model = _wrap("covariance", CovarianceModel.from_dict,
                  {"kind": kind, "params": params, "dimension": d})

    g = raw["grid"]
    _keys(g, GRID_KEYS, "grid", GRID_KEYS - {"window"})
    grid = _wrap("grid", GridSpec, d, _number(g, "half_width", "grid", positive=True),
                 _number(g, "points", "grid", kind=int, positive=True),
                 _number(g, "horizon", "grid", positive=True),
                 _number(g, "steps", "grid", kind=int, positive=True),
                 _number(g, "window", "grid", positive=True))

    co = raw.get("coefficients", {"sigma": {"name": "one"}, "b": {"name": "zero"}})
    _keys(co, {"sigma", "b"}, "coefficients")
    specs = {}
    for name in ("sigma", "b"):
        spec = co.get(name, {"name": "one" if name == "sigma" else "zero"})
        path = f"coefficients.{name}"
        _keys(spec, {"name"} | COEFF_FIELDS.get(spec.get("name") if isinstance(spec, dict) else None, set()),
              path, {"name"})
        if spec["name"] not in COEFF_FIELDS:
            raise ConfigError(f"{path}.name: unknown coefficient {spec['name']!r}")
        filled = dict(spec)
        if spec["name"] == "sine":
            filled.setdefault("amplitude", 1.0)
        specs[name] = filled
    coeffs = _wrap("coefficients", Coefficients.from_specs, specs["sigma"], specs["b"])

    init = dict(raw.get("initial_data", {"kind": "zero"}))
    _keys(init, {"kind"} | INITIAL_FIELDS.get(init.get("kind"), set()), "initial_data",
          {"kind"})
    ik = init["kind"]
    if ik not in INITIAL_FIELDS:
        raise ConfigError(f"initial_data.kind: unknown kind {ik!r}")
    data = _wrap("initial_data", _initial_data, init, d)
    _wrap("initial_data", check_regularity, Kernel(equation, d), data)

    scheme = raw.get("scheme", "picard")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme: expected one of {', '.join(SCHEMES)}")
    suite = raw.get("suite", "linear-variance")
    if suite not in SUITES:
        raise ConfigError(f"suite: expected one of {', '.join(SUITES)}")
    pic = dict(raw.get("picard", {}))
    _keys(pic, {"tol", "rtol", "max_iter"}, "picard")
    picard = {"tol": _number(pic, "tol", "picard", None, positive=True),
              "rtol": _number(pic, "rtol", "picard", 1e-6, positive=True),
              "max_iter": _number(pic, "max_iter", "picard", 50, kind=int, positive=True)}
    qd = dict(raw.get("quadrature", {}))
    _keys(qd, {"radius", "panels", "tol", "tail"}, "quadrature")
    quad = _wrap("quadrature", QuadratureSpec,
                 _number(qd, "radius", "quadrature", 1000.0, positive=True),
                 _number(qd, "panels", "quadrature", 4000, kind=int, positive=True),
                 _number(qd, "tol", "quadrature", 1e-8, positive=True),
                 qd.get("tail", "auto"))
    _wrap("quadrature.tail", quad.resolve_tail, model)
    if equation == "wave" and scheme != "linear-spectral":
        _wrap("grid", grid.check_wave_window)
    replicates = _number(raw, "replicates", "config", 1, kind=int, positive=True)
    seed = _number(raw, "seed", "config", 0, kind=int)
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return ExperimentConfig(equation, d, model, grid, coeffs, data, _initial_spec(init),
                            scheme, replicates, seed, out, suite, picard, quad)


def _initial_spec(init: dict) -> dict:
    defaults = {"constant": {"value": 0.0, "velocity": 0.0},
                "gaussian_bump": {"amplitude": 1.0, "width": 1.0, "velocity": 0.0},
                "indicator": {"radius": 1.0, "value": 1.0}}
    return dict(defaults.get(init["kind"], {}), **init)


def _initial_data(init: dict, d: int) -> InitialData:
    spec = _initial_spec(init)
    kind = spec["kind"]
    if kind == "zero":
        return InitialData.zero(d)
    if kind == "constant":
        return InitialData.constant(spec["value"], d, spec["velocity"])
    if kind == "gaussian_bump":
        return InitialData.gaussian_bump(spec["amplitude"], spec["width"], d, spec["velocity"])
    if kind == "indicator":
        return InitialData.indicator(spec["radius"], d, spec["value"])
    if d != 1:
        raise ConfigError("initial_data: tables are only supported in d = 1")
    return InitialData.table(spec["x"], spec["u"], spec.get("v"))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
