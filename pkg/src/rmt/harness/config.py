"""Experiment configuration: a flat-section key/value text file.

See README.md for a complete example.  Keys are case-sensitive; unknown
sections or keys are rejected so typos surface as config errors.
"""

from __future__ import annotations

import configparser
import enum
import itertools
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from rmt.contamination import Adversary
from rmt.errors import ConfigError


class Tester(str, enum.Enum):
    __test__ = False

    SUM_VARIANCE = "SumVariance"
    ADAPTIVE_SPECTRAL = "AdaptiveSpectral"
    PLAIN_NORM = "PlainNorm"


@dataclass(frozen=True)
class GridPoint:
    d: int
    n: int
    eps: float
    alpha: float


@dataclass(frozen=True)
class Constants:
    """Named overrides for the testers and filters."""

    kappa: float = 3.0
    delta: float = 0.01
    C: float = 1.0
    decision_const: float = 0.7
    mean_const: float = 0.01
    var_const: float = 0.025
    gate_const: float = 1.0
    plain_const: float = 0.5
    gamma_const: float = 3.0
    check_const: float = 0.5
    pipeline_delta: float = 1e-3
    split_p: float = 0.0  # 0 selects 1 / (5 log^2 m)
    discard_split: int = 1
    fallback_best: int = 0
    pair_restarts: int = 200

    def __post_init__(self) -> None:
        if not 0 <= self.split_p < 1:
            raise ConfigError("split_p must lie in [0, 1)")
        if self.discard_split not in (0, 1) or self.fallback_best not in (0, 1):
            raise ConfigError("discard_split and fallback_best are 0 or 1")
        if self.pair_restarts < 1:
            raise ConfigError("pair_restarts must be positive")


@dataclass(frozen=True)
class PhaseGrid:
    d: int = 10_000
    eps_min: float = 1e-3
    eps_max: float = 0.5
    eps_points: int = 40
    alpha_min: float = 1e-2
    alpha_max: float = 1.0
    alpha_points: int = 40

    def axes(self) -> tuple[list[float], list[float]]:
        return (
            _logspace(self.eps_min, self.eps_max, self.eps_points),
            _logspace(self.alpha_min, self.alpha_max, self.alpha_points),
        )


def _logspace(lo: float, hi: float, count: int) -> list[float]:
    if count == 1:
        return [lo]
    a, b = math.log(lo), math.log(hi)
    return [math.exp(a + (b - a) * i / (count - 1)) for i in range(count)]


@dataclass(frozen=True)
class ExperimentConfig:
    tester: Tester
    adversary: Adversary
    grid: tuple[GridPoint, ...]
    trials: int
    seed: int
    constants: Constants = field(default_factory=Constants)
    output_dir: Optional[Path] = None
    phase: PhaseGrid = field(default_factory=PhaseGrid)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.grid:
            raise ConfigError("grid is empty")
        if self.adversary is Adversary.REPLAY:
            raise ConfigError("replay is selected with `power --replay`, not in the config")
        for p in self.grid:
            if p.eps > p.alpha:
                raise ConfigError(f"grid point {p} has eps > alpha")
            if p.d < 1 or p.n < 2 or not 0 <= p.eps < 1 or p.alpha <= 0:
                raise ConfigError(f"grid point {p} is out of range")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def _floats(raw: str, key: str) -> list[float]:
    try:
        return [float(v) for v in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"[grid] {key}: {exc}") from None


def _typed(cls, section: configparser.SectionProxy, name: str):
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"unknown key [{name}] {key}")
        conv = int if kinds[key] in ("int", int) else float
        try:
            out[key] = conv(raw)
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a valid {conv.__name__}") from None
    return cls(**out)


def _parser(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keep C distinct from c
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    extra = set(cp.sections()) - {"experiment", "grid", "constants", "phase"}
    if extra:
        raise ConfigError(f"{source}: unknown section(s) {sorted(extra)}")
    return cp


def parse_phase(text: str, source: str = "<string>") -> PhaseGrid:
    """Only the [phase] section; the rest of the file is not validated."""
    cp = _parser(text, source)
    return _typed(PhaseGrid, cp["phase"], "phase") if "phase" in cp else PhaseGrid()


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = _parser(text, source)
    if "experiment" not in cp:
        raise ConfigError(f"{source}: missing [experiment] section")
    exp = cp["experiment"]
    allowed = {"tester", "adversary", "trials", "seed", "output_dir"}
    unknown = set(exp) - allowed
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) in [experiment]: {sorted(unknown)}")
    try:
        tester = Tester(exp.get("tester", Tester.ADAPTIVE_SPECTRAL.value))
        adversary = Adversary(exp.get("adversary", Adversary.CLEAN.value))
        trials = int(exp.get("trials", "100"))
        seed = int(exp.get("seed", "0"), 0)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    grid: tuple[GridPoint, ...] = ()
    if "grid" in cp:
        g = cp["grid"]
        unknown = set(g) - {"d", "n", "eps", "alpha"}
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [grid]: {sorted(unknown)}")
        missing = {"d", "n", "eps", "alpha"} - set(g)
        if missing:
            raise ConfigError(f"{source}: [grid] needs {sorted(missing)}")
        axes = {k: _floats(g[k], k) for k in ("d", "n", "eps", "alpha")}
        for k in ("d", "n"):
            if any(v != int(v) for v in axes[k]):
                raise ConfigError(f"{source}: [grid] {k} must be integers")
        grid = tuple(
            GridPoint(int(d), int(n), eps, alpha)
            for d, n, eps, alpha in itertools.product(axes["d"], axes["n"], axes["eps"], axes["alpha"])
        )
    constants = _typed(Constants, cp["constants"], "constants") if "constants" in cp else Constants()
    phase = _typed(PhaseGrid, cp["phase"], "phase") if "phase" in cp else PhaseGrid()
    out_dir = exp.get("output_dir")
    return ExperimentConfig(
        tester=tester,
        adversary=adversary,
        grid=grid,
        trials=trials,
        seed=seed,
        constants=constants,
        output_dir=Path(out_dir) if out_dir else None,
        phase=phase,
    )


def _read(path: Union[str, Path]) -> tuple[str, str]:
    p = Path(path)
    try:
        return p.read_text(), str(p)
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_config(*_read(path))


def load_phase(path: Union[str, Path]) -> PhaseGrid:
    return parse_phase(*_read(path))
