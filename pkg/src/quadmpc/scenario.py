"""Scenario files: flat ``key = value`` text.

Lines starting with ``#`` are comments.  Numeric values are single numbers or
lists written as ``[a, b, c]`` or ``a, b, c``.  Matrix keys accept 1 value
(scalar times identity), 3 values (diagonal) or 9 values (row-major).  The
inner-loop gains ``inner.Kw`` and ``inner.KR`` with a single value are
multipliers of the inertia matrix.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import InvalidParameterError
from .model import ThrustEnvelope
from .quadsim import InnerLoopGains, QuadParams

__all__ = [
    "Scenario",
    "InitialConditions",
    "parse_scenario",
    "load_scenario",
    "builtin_scenario",
    "builtin_names",
    "VARIANTS",
]

VARIANTS = ("tv", "ti")

_STRING_KEYS = {"traj.kind", "sim.variant", "name", "init.v", "init.w"}
_KNOWN = {
    "name",
    "quad.g", "quad.J", "quad.D", "quad.A", "quad.C", "quad.tau_g", "quad.Tmax",
    "env.delta", "env.eps1", "env.eps2",
    "traj.kind", "traj.params",
    "ctrl.h", "ctrl.gamma", "ctrl.N", "ctrl.Q", "ctrl.R", "ctrl.kkt_tol", "ctrl.max_iter",
    "ctrl.oversample",
    "inner.Kw", "inner.KR", "inner.k",
    "sim.duration", "sim.dt", "sim.seed", "sim.variant",
    "init.p_scale", "init.p_offset", "init.euler_deg", "init.v", "init.w",
    "init.ad", "init.eta", "init.noise",
}


@dataclass(frozen=True)
class InitialConditions:
    """Plant and filter start, relative to the reference at t = 0.

    ``p(0) = p_scale * p_ref(0) + p_offset``; attitude is
    ``Rx(r) Ry(p) Rz(y)`` from ``euler_deg``; ``v`` and ``w`` are ``"ref"`` or
    explicit vectors.  ``noise`` adds seeded Gaussian noise to the position.
    """

    p_scale: tuple = (1.0, 1.0, 1.0)
    p_offset: tuple = (0.0, 0.0, 0.0)
    euler_deg: tuple = (0.0, 0.0, 0.0)
    v: Any = "ref"
    w: Any = "ref"
    ad: tuple = (0.0, 0.0, 0.0)
    eta: tuple = (0.0, 0.0, 0.0)
    noise: float = 0.0

    def to_dict(self) -> dict:
        def conv(x):
            return x if isinstance(x, str) else [float(v) for v in np.ravel(x)]

        return {
            "p_scale": conv(self.p_scale),
            "p_offset": conv(self.p_offset),
            "euler_deg": conv(self.euler_deg),
            "v": conv(self.v),
            "w": conv(self.w),
            "ad": conv(self.ad),
            "eta": conv(self.eta),
            "noise": float(self.noise),
        }


@dataclass(frozen=True)
class Scenario:
    name: str
    quad: QuadParams
    env: ThrustEnvelope
    traj_kind: str
    traj_params: tuple
    h: float
    gamma: float
    n_horizon: int
    q_mat: np.ndarray
    r_mat: float
    gains: InnerLoopGains
    duration: float
    dt: float
    seed: int = 0
    variant: str = "tv"
    init: InitialConditions = field(default_factory=InitialConditions)
    kkt_tol: float = 1e-8
    max_iter: int = 100
    oversample: int | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParameterError("duration must be positive")
        if not (self.dt > 0 and self.h > 0):
            raise InvalidParameterError("dt and h must be positive")
        ratio = self.h / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise InvalidParameterError(f"h={self.h} must be an integer multiple of dt={self.dt}")
        steps = self.duration / self.h
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidParameterError("duration must be an integer multiple of h")
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_horizon < 1:
            raise InvalidParameterError("N must be >= 1")

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.h / self.dt))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.h))

    @property
    def n_plant_steps(self) -> int:
        return self.n_samples * self.steps_per_sample

    def with_variant(self, variant: str) -> "Scenario":
        return replace(self, variant=variant)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        q = self.quad
        return {
            "name": self.name,
            "quad": {
                "g": q.g,
                "J": q.inertia.tolist(),
                "D": q.drag.tolist(),
                "A": q.a_mat.tolist(),
                "C": q.c_mat.tolist(),
                "tau_g": q.tau_g.tolist(),
                "Tmax": q.t_max,
            },
            "env": {"delta": self.env.delta_margin, "eps1": self.env.eps1, "eps2": self.env.eps2},
            "traj": {"kind": self.traj_kind, "params": list(self.traj_params)},
            "ctrl": {
                "h": self.h,
                "gamma": self.gamma,
                "N": self.n_horizon,
                "Q": np.asarray(self.q_mat).tolist(),
                "R": self.r_mat,
                "kkt_tol": self.kkt_tol,
                "max_iter": self.max_iter,
                "oversample": self.oversample if self.oversample is not None else self.steps_per_sample,
            },
            "inner": {
                "Kw": self.gains.k_w.tolist(),
                "KR": self.gains.k_r.tolist(),
                "k": self.gains.k_vec.tolist(),
            },
            "sim": {"duration": self.duration, "dt": self.dt, "seed": self.seed, "variant": self.variant},
            "init": self.init.to_dict(),
            # drag values are used directly as mass-normalized coefficients
            "notes": {"drag_units": "1/s (mass-normalized)", "inertia_units": "kg m^2"},
        }


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STRING_KEYS:
        text = raw.strip("\"'")
        if key in ("init.v", "init.w") and text != "ref":
            return _parse_numbers(key, text)
        return text
    return _parse_numbers(key, raw)


def _parse_numbers(key: str, raw: str) -> list[float]:
    body = raw.strip()
    if body.startswith("[") and body.endswith("]"):
        body = body[1:-1]
    parts = [p for p in re.split(r"[,\s]+", body) if p]
    if not parts:
        raise InvalidParameterError(f"{key}: empty value")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise InvalidParameterError(f"{key}: cannot parse {raw!r} as numbers") from exc
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParameterError(f"{key}: non-finite value")
    return vals


def _matrix(key: str, vals: list[float], scale=None) -> np.ndarray:
    if len(vals) == 1:
        return vals[0] * (np.eye(3) if scale is None else np.asarray(scale))
    if len(vals) == 3:
        return np.diag(vals)
    if len(vals) == 9:
        return np.array(vals).reshape(3, 3)
    raise InvalidParameterError(f"{key}: expected 1, 3 or 9 values, got {len(vals)}")


def _scalar(key: str, vals) -> float:
    if len(vals) != 1:
        raise InvalidParameterError(f"{key}: expected a single value")
    return vals[0]


def _vec3(key: str, vals) -> tuple:
    if len(vals) == 1:
        return tuple(vals * 3)
    if len(vals) != 3:
        raise InvalidParameterError(f"{key}: expected 3 values")
    return tuple(vals)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Build a :class:`Scenario` from scenario-file text; unset keys use defaults."""
    raw: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN:
            raise InvalidParameterError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise InvalidParameterError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = _parse_value(key, value)

    def get(key, default):
        return raw.get(key, default)

    J = _matrix("quad.J", get("quad.J", [2.5e-3, 2.1e-3, 4.3e-3]))
    D = get("quad.D", [0.26, 0.28, 0.42])
    drag = np.diag(_matrix("quad.D", D)) if len(D) != 3 else np.array(D)
    quad = QuadParams(
        g=_scalar("quad.g", get("quad.g", [9.81])),
        inertia=J,
        drag=drag,
        tau_g=np.array(_vec3("quad.tau_g", get("quad.tau_g", [0.0]))),
        a_mat=_matrix("quad.A", get("quad.A", [0.1])),
        c_mat=_matrix("quad.C", get("quad.C", [0.5])),
        t_max=_scalar("quad.Tmax", get("quad.Tmax", [45.21])),
    )
    env = ThrustEnvelope(
        t_max=quad.t_max,
        delta_margin=_scalar("env.delta", get("env.delta", [0.1])),
        eps1=_scalar("env.eps1", get("env.eps1", [0.5])),
        eps2=_scalar("env.eps2", get("env.eps2", [0.5])),
        g=quad.g,
    )
    q_vals = get("ctrl.Q", [100.0, 1.0, 1.0, 1.0])
    if len(q_vals) == 4:
        q_mat = np.diag(q_vals)
    elif len(q_vals) == 16:
        q_mat = np.array(q_vals).reshape(4, 4)
    else:
        raise InvalidParameterError("ctrl.Q: expected 4 or 16 values")
    gains = InnerLoopGains(
        k_w=_matrix("inner.Kw", get("inner.Kw", [30.0]), scale=J),
        k_r=_matrix("inner.KR", get("inner.KR", [70.0]), scale=J),
        k_vec=np.array(_vec3("inner.k", get("inner.k", [4.5, 5.0, 5.5]))),
    )
    init = InitialConditions(
        p_scale=_vec3("init.p_scale", get("init.p_scale", [1.0])),
        p_offset=_vec3("init.p_offset", get("init.p_offset", [0.0])),
        euler_deg=_vec3("init.euler_deg", get("init.euler_deg", [0.0])),
        v=get("init.v", "ref") if isinstance(get("init.v", "ref"), str) else _vec3("init.v", raw["init.v"]),
        w=get("init.w", "ref") if isinstance(get("init.w", "ref"), str) else _vec3("init.w", raw["init.w"]),
        ad=_vec3("init.ad", get("init.ad", [0.0])),
        eta=_vec3("init.eta", get("init.eta", [0.0])),
        noise=_scalar("init.noise", get("init.noise", [0.0])),
    )
    oversample = get("ctrl.oversample", None)
    seed = _scalar("sim.seed", get("sim.seed", [0]))
    if seed < 0 or seed != int(seed):
        raise InvalidParameterError("sim.seed must be a non-negative integer")
    return Scenario(
        name=get("name", name),
        quad=quad,
        env=env,
        traj_kind=get("traj.kind", "hover"),
        traj_params=tuple(get("traj.params", [])),
        h=_scalar("ctrl.h", get("ctrl.h", [0.05])),
        gamma=_scalar("ctrl.gamma", get("ctrl.gamma", [0.1])),
        n_horizon=int(_scalar("ctrl.N", get("ctrl.N", [20]))),
        q_mat=q_mat,
        r_mat=_scalar("ctrl.R", get("ctrl.R", [0.01])),
        gains=gains,
        duration=_scalar("sim.duration", get("sim.duration", [25.0])),
        dt=_scalar("sim.dt", get("sim.dt", [0.001])),
        seed=int(seed),
        variant=get("sim.variant", "tv"),
        init=init,
        kkt_tol=_scalar("ctrl.kkt_tol", get("ctrl.kkt_tol", [1e-8])),
        max_iter=int(_scalar("ctrl.max_iter", get("ctrl.max_iter", [100]))),
        oversample=None if oversample is None else int(_scalar("ctrl.oversample", oversample)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), name=path.stem)


def builtin_names() -> list[str]:
    root = resources.files("quadmpc") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def builtin_scenario(name: str) -> Scenario:
    """Load one of the packaged scenarios (``circle`` or ``hover``)."""
    res = resources.files("quadmpc") / "scenarios" / f"{name}.cfg"
    if not res.is_file():
        raise InvalidParameterError(f"no builtin scenario {name!r}; have {builtin_names()}")
    return parse_scenario(res.read_text(), name=name)
