"""Experiment configuration: a YAML file with ``model``, ``solver``, ``nagent`` and ``chaos`` sections.

Example::

    model:
      family: heterogeneous-sis
      beta: 0.5
      params: {blocks: 2}
    solver: {q: 10, tol: 1.0e-6}
    nagent: {Ns: [2, 4], profile: [0, 1]}
    seed: 0
    output: out

Every field except ``model.family`` and ``model.beta`` has a default.
Validation collects every violation before reporting.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import yaml

from .errors import ConfigError
from .families import FAMILIES


@dataclass(frozen=True)
class ModelSection:
    family: str
    beta: float
    params: dict = field(default_factory=dict)
    L_F: float | None = None
    L_f: float | None = None


@dataclass(frozen=True)
class SolverSection:
    q: int = 10
    tol: float = 1e-6
    search_budget: int = 1_000_000
    restarts: int = 5
    kernel_mesh: int | None = None


@dataclass(frozen=True)
class NAgentSection:
    Ns: tuple = (2, 4)
    budget: int = 10_000_000
    mc_samples: int = 2000
    mc_tol: float = 1e-3
    profile: tuple | None = None
    gap_cap: int = 100_000
    gap_samples: int = 0
    match_budget: int = 100_000


@dataclass(frozen=True)
class ChaosSection:
    mn_samples: int = 200
    lipschitz_probes: int = 200
    gamma_uses: str = "L_F"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    solver: SolverSection = SolverSection()
    nagent: NAgentSection = NAgentSection()
    chaos: ChaosSection = ChaosSection()
    seed: int = 0
    output: str = "out"

    def as_dict(self) -> dict:
        """Every field that determines results; the output directory is left out."""
        d = asdict(self)
        del d["output"]
        d["nagent"]["Ns"] = list(d["nagent"]["Ns"])
        if d["nagent"]["profile"] is not None:
            d["nagent"]["profile"] = list(d["nagent"]["profile"])
        return d

    def config_hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical JSON of ``as_dict``, defaults included."""
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, output: str | None = None) -> "ExperimentConfig":
        d = dict(self.__dict__)
        if seed is not None:
            d["seed"] = seed
        if output is not None:
            d["output"] = output
        return ExperimentConfig(**d)


_SECTIONS = {"model": ModelSection, "solver": SolverSection, "nagent": NAgentSection, "chaos": ChaosSection}
_TOP = {"model", "solver", "nagent", "chaos", "seed", "output"}


_FLOAT_FIELDS = [("model", "beta"), ("model", "L_F"), ("model", "L_f"), ("solver", "tol"), ("nagent", "mc_tol")]


def _as_float(v):
    """YAML reads ``1e-6`` (no dot) as a string; accept it as a number."""
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _check(errors: list, ok: bool, where: str, rule: str):
    if not ok:
        errors.append(f"{where}: {rule}")


def validate(raw) -> ExperimentConfig:
    """Build a config from parsed YAML, raising one :class:`ConfigError` listing every violation."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping with a 'model' section")
    for key in sorted(set(raw) - _TOP):
        errors.append(f"{key}: unknown top-level key (allowed: {', '.join(sorted(_TOP))})")
    sections = {}
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for sec, key in _FLOAT_FIELDS:
        if isinstance(raw.get(sec), dict) and key in raw[sec]:
            raw[sec][key] = _as_float(raw[sec][key])
    for name, cls in _SECTIONS.items():
        body = raw.get(name, {}) if name != "model" else raw.get("model")
        if name == "model" and body is None:
            errors.append("model: section is required")
            continue
        if not isinstance(body, dict):
            errors.append(f"{name}: must be a mapping")
            continue
        allowed = set(cls.__dataclass_fields__)
        for key in sorted(set(body) - allowed):
            errors.append(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
        sections[name] = {k: v for k, v in body.items() if k in allowed}

    m = sections.get("model")
    if m is not None:
        fam = m.get("family")
        if fam is None:
            errors.append("model.family: required")
        elif fam not in FAMILIES:
            errors.append(f"model.family: unknown family {fam!r}; available: {', '.join(sorted(FAMILIES))}")
        beta = m.get("beta")
        if beta is None:
            errors.append("model.beta: required")
        else:
            _check(errors, _is_real(beta) and 0.0 < beta < 1.0, "model.beta", f"must lie in (0, 1), got {beta!r}")
        _check(errors, isinstance(m.get("params", {}), dict), "model.params", "must be a mapping")
        for key in ("L_F", "L_f"):
            v = m.get(key)
            _check(errors, v is None or (_is_real(v) and v >= 0), f"model.{key}", "must be a nonnegative number")

    s = sections.get("solver", {})
    _check(errors, _is_int(s.get("q", 1)) and s.get("q", 1) >= 1, "solver.q", "must be an integer >= 1")
    _check(errors, _is_real(s.get("tol", 1)) and s.get("tol", 1) > 0, "solver.tol", "must be positive")
    for key in ("search_budget", "restarts"):
        v = s.get(key, 1)
        _check(errors, _is_int(v) and v >= 1, f"solver.{key}", "must be an integer >= 1")
    km = s.get("kernel_mesh")
    _check(errors, km is None or (_is_int(km) and km >= 1), "solver.kernel_mesh", "must be null or an integer >= 1")

    n = sections.get("nagent", {})
    Ns = n.get("Ns", [2])
    _check(errors, isinstance(Ns, list) and len(Ns) > 0 and all(_is_int(v) and v >= 1 for v in Ns),
           "nagent.Ns", "must be a non-empty list of integers >= 1")
    for key in ("budget", "mc_samples", "gap_cap", "match_budget"):
        v = n.get(key, 2)
        _check(errors, _is_int(v) and v >= 1, f"nagent.{key}", "must be an integer >= 1")
    _check(errors, _is_int(n.get("mc_samples", 2)) and n.get("mc_samples", 2) >= 2, "nagent.mc_samples",
           "must be at least 2")
    _check(errors, _is_int(n.get("gap_samples", 0)) and n.get("gap_samples", 0) >= 0, "nagent.gap_samples",
           "must be an integer >= 0")
    _check(errors, _is_real(n.get("mc_tol", 1)) and n.get("mc_tol", 1) > 0, "nagent.mc_tol", "must be positive")
    prof = n.get("profile")
    _check(errors, prof is None or (isinstance(prof, list) and all(_is_int(v) and v >= 0 for v in prof)),
           "nagent.profile", "must be null or a list of state indices")

    c = sections.get("chaos", {})
    for key in ("mn_samples", "lipschitz_probes"):
        v = c.get(key, 2)
        _check(errors, _is_int(v) and v >= 2, f"chaos.{key}", "must be an integer >= 2")
    _check(errors, c.get("gamma_uses", "L_F") in ("L_F", "L_f"), "chaos.gamma_uses", "must be 'L_F' or 'L_f'")

    seed = raw.get("seed", 0)
    _check(errors, _is_int(seed) and 0 <= seed < 2**64, "seed", "must be an integer in [0, 2^64)")
    _check(errors, isinstance(raw.get("output", "out"), str), "output", "must be a path string")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    n = dict(n)
    n["Ns"] = tuple(n.get("Ns", NAgentSection.Ns))
    if n.get("profile") is not None:
        n["profile"] = tuple(n["profile"])
    s = dict(s)
    for key in ("tol",):
        if key in s:
            s[key] = float(s[key])
    if "mc_tol" in n:
        n["mc_tol"] = float(n["mc_tol"])
    mcfg = dict(m)
    mcfg["beta"] = float(mcfg["beta"])
    return ExperimentConfig(
        model=ModelSection(**mcfg),
        solver=SolverSection(**s),
        nagent=NAgentSection(**n),
        chaos=ChaosSection(**c),
        seed=raw.get("seed", 0),
        output=raw.get("output", "out"),
    )


def parse_config(path) -> ExperimentConfig:
    """Read and validate a YAML configuration file."""
    if not os.path.isfile(path):
        raise ConfigError(f"configuration file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"configuration is not valid YAML: {exc}") from None
    return validate(raw)
