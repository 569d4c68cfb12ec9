"""Run configuration: YAML schema, validation, canonical echo, content hash.

A run file has up to four blocks::

    mode: team_pbp             # team_pbp | evaluate_only | checks_only | oracle
    problem:
      family: linear_quadratic # linear_quadratic | bilinear | cascade_ss
      horizon: 1.0
      parameters: { ... family coefficient arrays ... }
      info:                    # one block per DM
        - kind: FIS            # NIS | FIS
          observed: [0]        # FIS: state coordinates; NIS uses sources: [..]
          memory: markov_current
    numerics:
      steps: 50                # K
      paths: 10000             # M
      seed: 7                  # mandatory; no wall-clock seeding
      atom_grid: 21            # candidate grid points per action dimension
      ridge: auto              # or a float
      gap_tol: auto            # auto = 1e-2 * (1 + |J|), or a float
      max_iters: 50
      damping: 0.5
      strategy_mode: regular   # regular | relaxed
      basis: polynomial_deg2
    tree:                      # oracle mode only: discrete-tree block
      periods: 2
      dt: 1.0
      ...

The seed can be overridden by --seed and by the TEAMSDE_SEED environment
variable; the environment wins, and the echo records which source supplied
the effective value.  The echo re-parses to an equivalent configuration and
every numeric knob appears in it with its effective value ("auto" knobs are
echoed as "auto" and their resolved values land in the results section).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "canonical_echo", "config_hash"]

MODES = ("team_pbp", "evaluate_only", "checks_only", "oracle")
FAMILIES = ("linear_quadratic", "bilinear", "cascade_ss")
SEED_ENV_VAR = "TEAMSDE_SEED"

_NUMERIC_DEFAULTS = {
    "steps": 50,
    "paths": 10_000,
    "atom_grid": 21,
    "ridge": "auto",
    "gap_tol": "auto",
    "max_iters": 50,
    "damping": 0.5,
    "strategy_mode": "regular",
    "basis": "polynomial_deg2",
}


class ConfigError(ValueError):
    """Unparseable or invalid run configuration; carries field diagnostics."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [{"field": "", "message": problems}]
        self.problems = list(problems)
        super().__init__("; ".join(f"{p['field']}: {p['message']}".lstrip(": ") for p in self.problems))


@dataclass(frozen=True)
class RunConfig:
    mode: str
    problem: Optional[dict]  # {"family", "horizon", "parameters", "info"}
    numerics: dict
    tree: Optional[dict]
    seed_source: str = "config"

    @property
    def seed(self) -> int:
        return int(self.numerics["seed"])


def _require(cond, field_name, message, problems):
    if not cond:
        problems.append({"field": field_name, "message": message})
    return cond


def _positive_int(value, field_name, problems, minimum=1) -> bool:
    ok = isinstance(value, int) and not isinstance(value, bool) and value >= minimum
    return _require(ok, field_name, f"must be an integer >= {minimum}", problems)


def parse_config(
    text: str,
    seed_override: Optional[int] = None,
    mode_override: Optional[str] = None,
) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises ConfigError with per-field diagnostics (and parser line/column
    information when the document itself does not parse).
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config does not parse{loc}: {getattr(err, 'problem', err)}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of blocks")

    problems = []
    # seed_source appears in config echoes; accepted so echoes round-trip
    known = {"mode", "problem", "numerics", "tree", "seed_source"}
    for key in raw:
        _require(key in known, key, "unknown top-level block", problems)

    mode = mode_override or raw.get("mode")
    _require(mode in MODES, "mode", f"must be one of {MODES}", problems)

    problem = raw.get("problem")
    if problem is not None:
        if not isinstance(problem, dict):
            problems.append({"field": "problem", "message": "must be a mapping"})
            problem = None
        else:
            _require(problem.get("family") in FAMILIES, "problem.family", f"must be one of {FAMILIES}", problems)
            horizon = problem.get("horizon", 1.0)
            _require(
                isinstance(horizon, (int, float)) and horizon > 0, "problem.horizon", "must be a positive number", problems
            )
            _require(isinstance(problem.get("parameters", {}), dict), "problem.parameters", "must be a mapping", problems)
            info = problem.get("info")
            if not isinstance(info, list) or not info:
                problems.append({"field": "problem.info", "message": "must be a nonempty list of DM blocks"})
            else:
                for i, blk in enumerate(info):
                    fld = f"problem.info[{i}]"
                    if not isinstance(blk, dict):
                        problems.append({"field": fld, "message": "must be a mapping"})
                        continue
                    kind = blk.get("kind")
                    _require(kind in ("NIS", "FIS"), f"{fld}.kind", "must be NIS or FIS", problems)
                    if kind == "NIS":
                        _require(
                            isinstance(blk.get("sources"), list) and blk["sources"],
                            f"{fld}.sources",
                            "NIS needs a nonempty source list",
                            problems,
                        )
                    if kind == "FIS":
                        _require(
                            isinstance(blk.get("observed"), list) and blk["observed"],
                            f"{fld}.observed",
                            "FIS needs a nonempty observed-coordinate list",
                            problems,
                        )
                    memory = blk.get("memory", "markov_current")
                    _require(
                        memory in ("markov_current", "full_path_features"),
                        f"{fld}.memory",
                        "must be markov_current or full_path_features",
                        problems,
                    )

    numerics = dict(_NUMERIC_DEFAULTS)
    numerics.update(raw.get("numerics") or {})

    seed_source = "config"
    if seed_override is not None:
        numerics["seed"] = seed_override
        seed_source = "flag"
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            numerics["seed"] = int(env_seed)
            seed_source = "env"
        except ValueError:
            problems.append({"field": SEED_ENV_VAR, "message": "environment seed must be an integer"})
    _require("seed" in numerics, "numerics.seed", "seed is mandatory (no wall-clock seeding)", problems)
    if "seed" in numerics:
        _positive_int(numerics["seed"], "numerics.seed", problems, minimum=0)
    _positive_int(numerics["steps"], "numerics.steps", problems)
    _positive_int(numerics["paths"], "numerics.paths", problems)
    _positive_int(numerics["max_iters"], "numerics.max_iters", problems)
    _positive_int(numerics["atom_grid"], "numerics.atom_grid", problems, minimum=2)
    _require(
        numerics["ridge"] == "auto" or (isinstance(numerics["ridge"], (int, float)) and numerics["ridge"] >= 0),
        "numerics.ridge",
        'must be "auto" or a nonnegative number',
        problems,
    )
    _require(
        numerics["gap_tol"] == "auto" or (isinstance(numerics["gap_tol"], (int, float)) and numerics["gap_tol"] > 0),
        "numerics.gap_tol",
        'must be "auto" or a positive number',
        problems,
    )
    _require(
        isinstance(numerics["damping"], (int, float)) and 0 < numerics["damping"] <= 1,
        "numerics.damping",
        "must lie in (0, 1]",
        problems,
    )
    _require(
        numerics["strategy_mode"] in ("regular", "relaxed"),
        "numerics.strategy_mode",
        "must be regular or relaxed",
        problems,
    )
    _require(
        numerics["basis"] in ("polynomial_deg1", "polynomial_deg2"),
        "numerics.basis",
        "must be polynomial_deg1 or polynomial_deg2",
        problems,
    )

    tree = raw.get("tree")
    if tree is not None:
        if not isinstance(tree, dict):
            problems.append({"field": "tree", "message": "must be a mapping"})
            tree = None
        else:
            _require(tree.get("periods") in (1, 2, 3), "tree.periods", "must be 1, 2, or 3", problems)
            for key in ("x0", "noise_scale", "actions", "info"):
                _require(isinstance(tree.get(key), list), f"tree.{key}", "required list", problems)

    if mode == "team_pbp" or mode == "evaluate_only" or mode == "checks_only":
        _require(problem is not None, "problem", f"mode {mode} needs a problem block", problems)
    if mode == "oracle":
        _require(
            problem is not None or tree is not None, "problem", "oracle mode needs a problem or tree block", problems
        )

    if problems:
        raise ConfigError(problems)
    return RunConfig(mode=mode, problem=problem, numerics=numerics, tree=tree, seed_source=seed_source)


def load_config(path, seed_override: Optional[int] = None, mode_override: Optional[str] = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from None
    return parse_config(text, seed_override=seed_override, mode_override=mode_override)


def canonical_echo(config: RunConfig) -> dict:
    """The effective configuration as echoed into run.json; re-parses to an
    equivalent RunConfig.  No hidden defaults: every knob appears."""
    echo = {
        "mode": config.mode,
        "numerics": dict(sorted(config.numerics.items())),
        "seed_source": config.seed_source,
    }
    if config.problem is not None:
        echo["problem"] = config.problem
    if config.tree is not None:
        echo["tree"] = config.tree
    return echo


def config_hash(config: RunConfig) -> str:
    payload = canonical_echo(config)
    payload.pop("seed_source", None)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
