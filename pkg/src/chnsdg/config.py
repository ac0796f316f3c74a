"""Run configuration stored as a flat ``key = value`` file."""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

SCENARIOS = ("accuracy", "circle", "bubble", "rayleigh", "custom")
BACKENDS = ("direct_lu", "gmres_ilu")
VELOCITY_SPACES = ("P2_bubble", "P2_cont")
PRESSURE_SPACES = ("P1_disc", "P0_disc")
SECTION = "run"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "circle"
    nx: int = 32
    ny: int | None = None
    dt: float = 1e-3
    T: float = 5e-2
    chi: float = 100.0
    eps: float = 0.01
    lam: float = 0.01
    rho1: float = 1.0
    rho2: float = 100.0
    eta: float = 1.0
    delta: float = 1e-6
    xi: float = 1e-10
    gravity: tuple[float, float] = (0.0, 0.0)
    velocity: str = "P2_bubble"
    pressure: str = "P1_disc"
    backend: str = "direct_lu"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_iter: int = 50
    damping: bool = False
    gmres_tol: float = 1e-12
    gmres_restart: int = 200
    stride: int = 10
    output_dir: str = "runs/circle"
    seed: int = 0
    check_invariants: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gravity must be two numbers: {exc}") from exc
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.scenario in SCENARIOS, f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        need(self.backend in BACKENDS, f"backend must be one of {BACKENDS}, got {self.backend!r}")
        need(self.velocity in VELOCITY_SPACES, f"velocity must be one of {VELOCITY_SPACES}")
        need(self.pressure in PRESSURE_SPACES, f"pressure must be one of {PRESSURE_SPACES}")
        need(self.nx >= 1 and self.ny >= 1, f"nx, ny must be >= 1, got {self.nx}, {self.ny}")
        for name in ("dt", "T", "eps", "lam", "eta", "abs_tol", "rel_tol", "gmres_tol"):
            v = getattr(self, name)
            need(math.isfinite(v) and v > 0, f"{name} must be positive, got {v!r}")
        for name in ("delta", "xi", "chi"):
            v = getattr(self, name)
            need(math.isfinite(v) and v >= 0, f"{name} must be non-negative, got {v!r}")
        need(0 < self.rho1 <= self.rho2, f"need 0 < rho1 <= rho2, got {self.rho1}, {self.rho2}")
        need(len(self.gravity) == 2, "gravity must have two components")
        need(self.max_iter >= 1 and self.gmres_restart >= 1 and self.stride >= 1, "counts must be >= 1")
        n = self.T / self.dt
        need(abs(n - round(n)) <= 1e-9 * max(1.0, n), f"T={self.T} is not a multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def dumps(self) -> str:
        lines = [f"[{SECTION}]"]
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {_encode(v)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str, **overrides) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keys are case-sensitive (T vs t)
        try:
            cp.read_string(text if text.lstrip().startswith("[") else f"[{SECTION}]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        raw = dict(cp[SECTION]) if cp.has_section(SECTION) else {}
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in raw.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _decode(k, v, known[k].default)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, **overrides)


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_encode(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _decode(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if key == "ny":
            return None if text.lower() == "none" else int(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.replace("(", "").replace(")", "").split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
