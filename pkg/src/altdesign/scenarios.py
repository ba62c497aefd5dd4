"""Scenario configuration, design search pipelines and efficiency reports.

A scenario bundles a design space, a family of objectives and the Monte
Carlo / optimiser settings. Configs are plain JSON; :func:`resolve_config`
validates one and fills in every default so that a report can echo the
complete configuration it was produced from.

Random streams for a run with root seed ``s``:

* ``RandomStream(s).child(1, i)`` the common-random-number stream used while
  searching for and comparing designs under objective ``i``;
* ``RandomStream(s).child(2, r)`` the initial design of restart ``r``;
* ``RandomStream(s).child(3, i)`` an independent stream used to re-estimate
  stochastic objectives for the report.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import __version__
from .core import Design, efficiency
from .errors import ConfigError, DomainError, InfeasibleStart
from .linear import (
    first_order_model_matrix,
    objective as linear_objective,
    second_order_model_matrix,
    treatment_structure,
)
from .michaelis import MM_KINDS, MmPriors, mm_asymptotic, mm_objectives
from .numerics import RandomStream
from .optimize import ExchangeConfig, candidate_grid, coordinate_exchange, multistart, random_grid_design
from .spline import MmTruthPrior, SplinePrior, pse_expected_loss

log = logging.getLogger(__name__)

SCENARIOS = ("linear-fulltreatment", "michaelis-menten", "cubic-spline")
KINDS = {
    "linear-fulltreatment": ("D", "DE", "A", "AE", "DP", "AP"),
    "michaelis-menten": MM_KINDS + ("eq19", "eq20"),
    "cubic-spline": ("int-PSE", "ext-PSE"),
}
MAX_CROSS_SEED_PASSES = 10

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "altdesign scenario",
    "type": "object",
    "required": ["scenario", "n"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "n": _COUNT,
        "k": _COUNT,
        "objectives": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
        "bounds": {
            "type": "array",
            "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            "minItems": 1,
        },
        "model": {"enum": ["first-order", "second-order"]},
        "prior": {"type": "object"},
        "designer": {"type": "object"},
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"B": _COUNT, "B_inner": {"type": "integer", "minimum": 2}},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_points_per_variable": {"type": "integer", "minimum": 2},
                "sweeps_max": _COUNT,
                "restarts": _COUNT,
                "improvement_tolerance": {"type": ["number", "null"], "minimum": 0},
                "se_fraction": {"type": "number", "minimum": 0},
                "replicate_moves": {"type": "boolean"},
            },
        },
        "root_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "scale": {"enum": ["desk", "paper"]},
    },
}

_PRIOR_SCHEMAS = {
    "linear-fulltreatment": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "kappa": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        },
    },
    "michaelis-menten": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "theta_low": _POS, "theta_high": _POS, "sigma2_rate": _POS,
            "rho_rate": _POS, "alpha_rate": _POS, "L": _POS,
        },
    },
    "cubic-spline": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"kappa": _POS, "a": _POS, "b": _POS,
                       "m_max": {"type": ["integer", "null"], "minimum": 4}},
    },
}
_DESIGNER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"low": _POS, "high": _POS, "a": _POS, "b": _POS, "L": _POS},
}

_OPTIMIZER_DEFAULTS = {
    "grid_points_per_variable": 21,
    "sweeps_max": 20,
    "restarts": 10,
    "improvement_tolerance": None,
    "se_fraction": 0.1,
    "replicate_moves": True,
}

# scale-dependent defaults; anything not listed is scale independent
_DEFAULTS = {
    "linear-fulltreatment": {
        "k": 3,
        "objectives": ["D", "DE", "A", "AE"],
        "model": "second-order",
        "prior": {"kappa": None, "alpha": None},
        "optimizer": {},
    },
    "michaelis-menten": {
        "k": 1,
        "objectives": ["ext-SE", "ext-TV", "int-SE"],
        "prior": {"theta_low": 20.0, "theta_high": 200.0, "sigma2_rate": 1.0, "rho_rate": 1.0,
                  "alpha_rate": 5.0, "L": 400.0},
        "optimizer": {"restarts": 2, "sweeps_max": 4},
        "mc": {"desk": {"B": 2000, "B_inner": 2000}, "paper": {"B": 20000, "B_inner": 20000}},
    },
    "cubic-spline": {
        "k": 1,
        "objectives": ["int-PSE", "ext-PSE"],
        # m_max None means max(4, n - 2): with m near n the model all but
        # interpolates and the internal loss is dominated by rare blow-ups
        "prior": {"kappa": 1e6, "a": 6.0, "b": 4.0, "m_max": None},
        "designer": {"low": 20.0, "high": 200.0, "a": 6.0, "b": 4.0, "L": 400.0},
        "optimizer": {"restarts": 4},
        "mc": {"desk": {"B": 500}, "paper": {"B": 20000}},
    },
}

PRESETS = {
    "gt-linear": {
        "desk": {"scenario": "linear-fulltreatment", "n": 16, "k": 3, "prior": {"kappa": 16.0}},
        "paper": {"scenario": "linear-fulltreatment", "n": 16, "k": 3, "prior": {"kappa": 16.0}},
    },
    "michaelis-menten": {
        "desk": {"scenario": "michaelis-menten", "n": 10, "scale": "desk"},
        "paper": {"scenario": "michaelis-menten", "n": 20, "scale": "paper",
                  "optimizer": {"restarts": 10, "sweeps_max": 20}},
    },
    "cubic-spline": {
        "desk": {"scenario": "cubic-spline", "n": 10, "scale": "desk"},
        "paper": {"scenario": "cubic-spline", "n": 10, "scale": "paper", "optimizer": {"restarts": 10}},
    },
}
DEFAULT_SEED = 20240601


def _path_of(error):
    return tuple(str(p) for p in error.absolute_path)


def _validate(instance, schema, prefix=()):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: (len(e.absolute_path), str(e.message)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, prefix + _path_of(err))


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(raw) -> dict:
    """Validate a raw config and return it with every default materialised.

    Raises :class:`ConfigError` naming the offending field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _validate(raw, SCHEMA)
    name = raw["scenario"]
    scale = raw.get("scale", "desk")
    d = _DEFAULTS[name]
    cfg = {
        "scenario": name,
        "n": raw["n"],
        "k": raw.get("k", d["k"]),
        "objectives": list(raw.get("objectives", d["objectives"])),
        "root_seed": raw.get("root_seed", DEFAULT_SEED),
        "scale": scale,
    }
    if "prior" in raw:
        _validate(raw["prior"], _PRIOR_SCHEMAS[name], ("prior",))
    cfg["prior"] = _merge(d["prior"], raw.get("prior", {}))
    if name == "linear-fulltreatment":
        cfg["model"] = raw.get("model", d["model"])
        if cfg["prior"]["kappa"] is None:
            cfg["prior"]["kappa"] = float(cfg["n"])
        default_bounds = [[-1.0, 1.0]] * cfg["k"]
    else:
        default_bounds = [[0.0, 1.0]]
    if name == "cubic-spline":
        if cfg["prior"]["m_max"] is None:
            cfg["prior"]["m_max"] = max(4, cfg["n"] - 2)
        if "designer" in raw:
            _validate(raw["designer"], _DESIGNER_SCHEMA, ("designer",))
        cfg["designer"] = _merge(d["designer"], raw.get("designer", {}))
    elif "designer" in raw:
        raise ConfigError(f"scenario {name} takes no designer block", ("designer",))
    if "model" in raw and name != "linear-fulltreatment":
        raise ConfigError(f"scenario {name} takes no model field", ("model",))
    cfg["bounds"] = [list(map(float, b)) for b in raw.get("bounds", default_bounds)]
    if "mc" in d:
        cfg["mc"] = _merge(d["mc"][scale], raw.get("mc", {}))
    elif "mc" in raw:
        raise ConfigError(f"scenario {name} has closed-form objectives and takes no mc block", ("mc",))
    cfg["optimizer"] = _merge(_merge(_OPTIMIZER_DEFAULTS, d["optimizer"]), raw.get("optimizer", {}))
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    name, n, k = cfg["scenario"], cfg["n"], cfg["k"]
    for i, kind in enumerate(cfg["objectives"]):
        if kind not in KINDS[name]:
            raise ConfigError(f"{kind!r} is not an objective of {name}; choose from {list(KINDS[name])}",
                              ("objectives", str(i)))
    if name != "linear-fulltreatment" and k != 1:
        raise ConfigError(f"scenario {name} has a single design variable", ("k",))
    if len(cfg["bounds"]) != k:
        raise ConfigError(f"need one [low, high] pair per variable (k = {k})", ("bounds",))
    for i, (lo, hi) in enumerate(cfg["bounds"]):
        if not hi > lo:
            raise ConfigError("upper bound must exceed lower bound", ("bounds", str(i)))
    prior = cfg["prior"]
    if name == "linear-fulltreatment":
        p = _linear_p(cfg)
        if n <= p:
            raise ConfigError(f"n must exceed the number of model parameters ({p})", ("n",))
        if any(kind in ("DP", "AP") for kind in cfg["objectives"]) and prior["alpha"] is None:
            raise ConfigError("DP and AP objectives need prior.alpha", ("prior", "alpha"))
    else:
        lo, hi = cfg["bounds"][0]
        if lo < 0 or hi > 1:
            raise ConfigError("concentrations must lie in [0, 1]", ("bounds", "0"))
    if name == "michaelis-menten":
        if not prior["theta_high"] > prior["theta_low"]:
            raise ConfigError("theta_high must exceed theta_low", ("prior", "theta_high"))
        if n < 2:
            raise ConfigError("need at least two runs", ("n",))
    if name == "cubic-spline":
        if n < 5:
            raise ConfigError("the spline scenario needs n >= 5", ("n",))
        if not 4 <= prior["m_max"] <= n:
            raise ConfigError(f"m_max must lie in 4..n = 4..{n}", ("prior", "m_max"))
        if not cfg["designer"]["high"] > cfg["designer"]["low"]:
            raise ConfigError("designer high must exceed low", ("designer", "high"))


def _linear_p(cfg):
    k = cfg["k"]
    if cfg["model"] == "first-order":
        return 1 + k
    return 1 + 2 * k + k * (k - 1) // 2


def preset_config(name, scale="desk", seed=None) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", ("example",))
    raw = copy.deepcopy(PRESETS[name][scale])
    if seed is not None:
        raw["root_seed"] = seed
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    """A resolved config turned into objective callables."""

    config: dict
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def name(self):
        return self.config["scenario"]

    @property
    def kinds(self):
        return tuple(self.config["objectives"])

    @property
    def bounds(self):
        return np.asarray(self.config["bounds"], dtype=float)

    @property
    def root(self):
        return RandomStream(self.config["root_seed"])

    def kind_index(self, kind):
        return KINDS[self.name].index(kind)

    def search_stream(self, kind):
        return self.root.child(1, self.kind_index(kind))

    def validation_stream(self, kind):
        return self.root.child(3, self.kind_index(kind))

    def exchange_config(self, threads=1):
        o = self.config["optimizer"]
        return ExchangeConfig(
            grid_points_per_variable=o["grid_points_per_variable"],
            sweeps_max=o["sweeps_max"],
            restarts=o["restarts"],
            improvement_tolerance=o["improvement_tolerance"],
            se_fraction=o["se_fraction"],
            replicate_moves=o["replicate_moves"],
            root_seed=self.config["root_seed"],
            threads=threads,
        )

    def grids(self):
        include = (-1.0, 0.0, 1.0) if self.name == "linear-fulltreatment" else ()
        return candidate_grid(self.bounds, self.config["optimizer"]["grid_points_per_variable"], include)

    def sampler(self):
        grids = self.grids()
        n, bounds = self.config["n"], self.bounds
        return lambda stream: random_grid_design(grids, n, bounds, stream.generator())

    def model_matrix(self):
        return second_order_model_matrix if self.config.get("model") == "second-order" else first_order_model_matrix

    @property
    def p(self):
        if self.name == "linear-fulltreatment":
            return _linear_p(self.config)
        return None

    def scale(self, kind):
        if self.name == "linear-fulltreatment" and kind in ("D", "DE", "DP"):
            return "log"
        return "ratio"

    def objective(self, kind):
        """``f(design, stream)`` returning a float or an ``ExpectedLossEstimate``."""
        cfg = self.config
        prior = cfg["prior"]
        if self.name == "linear-fulltreatment":
            mm = self.model_matrix()
            return lambda d, s: linear_objective(kind, d, mm, kappa=prior["kappa"], alpha=prior["alpha"])
        if self.name == "michaelis-menten":
            priors = MmPriors(**prior)
            mc = cfg["mc"]
            if kind in ("eq19", "eq20"):
                return lambda d, s: mm_asymptotic(kind, d, mc["B"], s, priors)
            return lambda d, s: mm_objectives(kind, d, mc["B"], mc["B_inner"], s, priors)
        sp = SplinePrior(kappa=prior["kappa"], a=prior["a"], b=prior["b"],
                         m_values=tuple(range(4, prior["m_max"] + 1)))
        truth = MmTruthPrior(**cfg["designer"])
        frame = "internal" if kind == "int-PSE" else "external"
        return lambda d, s: pse_expected_loss(frame, d, cfg["mc"]["B"], s, sp, truth)

    def evaluate(self, kind, design, stream=None):
        """``(value, standard_error)`` of one objective at one design."""
        stream = self.search_stream(kind) if stream is None else stream
        result = self.objective(kind)(design, stream)
        if hasattr(result, "value"):
            return float(result.value), float(result.mc_standard_error)
        return float(result), 0.0

    def describe(self, design):
        ts = treatment_structure(design)
        return {"q": int(ts.q), "d": int(ts.d)}

    def check_design(self, design: Design):
        if design.n != self.config["n"] or design.k != self.config["k"]:
            raise ConfigError(
                f"design is {design.n} x {design.k} but the config expects "
                f"{self.config['n']} x {self.config['k']}", ("design",))


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def search(scenario: Scenario, kind, threads=1, initials=()):
    log.info("searching for the %s-optimal design", kind)
    return multistart(
        scenario.objective(kind),
        scenario.sampler(),
        scenario.exchange_config(threads),
        stream=scenario.search_stream(kind),
        grids=scenario.grids(),
        initials=initials,
    )


def value_table(scenario: Scenario, designs, kinds, threads=1, stream_of=None):
    """``values[i][j]`` and ``ses[i][j]`` for design ``i`` under objective ``j``."""
    stream_of = stream_of or scenario.search_stream
    values = np.empty((len(designs), len(kinds)))
    ses = np.empty_like(values)
    for j, kind in enumerate(kinds):
        for i, design in enumerate(designs):
            values[i, j], ses[i, j] = scenario.evaluate(kind, design, stream_of(kind))
    return values, ses


def efficiency_matrix(scenario: Scenario, values, kinds, reference_rows=None):
    """Efficiencies (%) of each design relative to a reference design per column.

    ``reference_rows[j]`` is the row holding the reference for column ``j``;
    by default the column minimum. The reference entry is exactly 100.
    """
    rows, cols = values.shape
    out = np.full((rows, cols), np.nan)
    for j, kind in enumerate(kinds):
        col = values[:, j]
        ref = int(np.argmin(col)) if reference_rows is None else reference_rows[j]
        for i in range(rows):
            if i == ref or col[i] == col[ref]:
                out[i, j] = 100.0
            elif not math.isfinite(col[i]):
                out[i, j] = 0.0
            else:
                out[i, j] = efficiency(col[ref], col[i], scenario.scale(kind), scenario.p)
    return out


def optimal_designs(scenario: Scenario, threads=1, progress=None):
    """Search every objective, then re-search any objective beaten by another's design.

    Returns ``(designs, traces, passes)`` with ``designs[j]`` no worse than
    any other found design under objective ``j`` (same stream). ``progress``
    is called with ``(stage, kind)`` before each search.
    """
    kinds = scenario.kinds
    designs, traces = [], []
    for kind in kinds:
        if progress:
            progress("search", kind)
        res = search(scenario, kind, threads)
        designs.append(res.design)
        traces.append(res.trace)
    values, _ = value_table(scenario, designs, kinds, threads)
    passes = 0
    for passes in range(1, MAX_CROSS_SEED_PASSES + 1):
        changed = False
        for j, kind in enumerate(kinds):
            i = int(np.argmin(values[:, j]))
            if values[i, j] < values[j, j]:
                if progress:
                    progress("cross-seed", kind)
                log.info("%s: design %d beats the %s-optimal design; searching from it", kind, i, kind)
                design, trace = coordinate_exchange(
                    scenario.objective(kind), designs[i], scenario.exchange_config(threads),
                    scenario.search_stream(kind), scenario.grids(),
                )
                designs[j], traces[j] = design, trace
                for jj, kk in enumerate(kinds):
                    values[j, jj], _ = scenario.evaluate(kk, design)
                changed = True
        if not changed:
            break
    return designs, traces, passes


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def build_report(scenario: Scenario, command, designs, labels, values, ses, validation=None,
                 reference_rows=None, extra=None):
    kinds = list(scenario.kinds)
    eff = efficiency_matrix(scenario, values, kinds, reference_rows)
    entries = []
    for i, (label, design) in enumerate(zip(labels, designs)):
        entry = {"label": label, **scenario.describe(design),
                 "values": {k: {"value": _num(values[i, j]), "se": _num(ses[i, j])} for j, k in enumerate(kinds)}}
        if validation is not None:
            vals, vses = validation
            entry["validation"] = {k: {"value": _num(vals[i, j]), "se": _num(vses[i, j])}
                                   for j, k in enumerate(kinds)}
        entry["points"] = design.points.tolist()
        entries.append(entry)
    report = {
        "tool": "altdesign",
        "version": __version__,
        "command": command,
        "status": "ok",
        "config": scenario.config,
        "objectives": kinds,
        "designs": entries,
        "efficiency": {"rows": list(labels), "columns": kinds, "percent": [[_num(v) for v in row] for row in eff]},
    }
    if extra:
        report.update(extra)
    return report


def reproduce_report(scenario: Scenario, threads=1, progress=None):
    """Full pipeline: optimal design per objective, cross-evaluation, report."""
    designs, traces, passes = optimal_designs(scenario, threads, progress)
    values, ses = value_table(scenario, designs, scenario.kinds, threads)
    validation = None
    if scenario.name != "linear-fulltreatment":
        validation = value_table(scenario, designs, scenario.kinds, threads, scenario.validation_stream)
    labels = [f"{k}-optimal" for k in scenario.kinds]
    search_info = [
        {"objective": k, "value": _num(t.value), "initial_value": _num(t.initial_value),
         "sweeps": len(t.sweep_values), "accepted": t.accepted, "converged": t.converged}
        for k, t in zip(scenario.kinds, traces)
    ]
    report = build_report(scenario, "reproduce", designs, labels, values, ses, validation,
                          reference_rows=list(range(len(designs))),
                          extra={"search": search_info, "cross_seed_passes": passes})
    return report, designs, labels


def evaluate_report(scenario: Scenario, designs, labels, threads=1):
    for d in designs:
        scenario.check_design(d)
    values, ses = value_table(scenario, designs, scenario.kinds, threads)
    return build_report(scenario, "evaluate", designs, labels, values, ses)


def design_report(scenario: Scenario, threads=1, progress=None):
    if len(scenario.kinds) == 1:
        kind = scenario.kinds[0]
        if progress:
            progress("search", kind)
        res = search(scenario, kind, threads)
        designs, traces = [res.design], [res.trace]
        values, ses = value_table(scenario, designs, scenario.kinds, threads)
        labels = [f"{kind}-optimal"]
        search_info = [{"objective": kind, "value": _num(res.trace.value),
                        "initial_value": _num(res.trace.initial_value),
                        "sweeps": len(res.trace.sweep_values), "accepted": res.trace.accepted,
                        "converged": res.trace.converged}]
        report = build_report(scenario, "design", designs, labels, values, ses,
                              reference_rows=[0], extra={"search": search_info})
        return report, designs, labels
    report, designs, labels = reproduce_report(scenario, threads, progress)
    report["command"] = "design"
    return report, designs, labels

