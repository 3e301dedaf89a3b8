"""Parametric model specifications and the effective coefficients they induce.

Every model can emit :class:`EffectiveCoefficients` for the forward solver
(directly, when they are known in closed form, or through Monte Carlo
projection in :mod:`forward_pide.mc_oracle`) and is simulable by the Monte
Carlo oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._validation import as_float_array, check_strictly_increasing
from .grid import GridSpec, step_start_times
from .levy_tails import (
    ConditionResult,
    DiagnosticReport,
    ExpDoubleTailTable,
    Kou,
    LevyMeasure,
    Merton,
    PointMasses,
    build_tail_table,
    check_integrability,
    measure_from_dict,
)


class ProjectionRequiredError(ValueError):
    """Effective coefficients of this model are only available by projection."""


# --------------------------------------------------------------------------- #
# Time and state functions
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function: ``values[i]`` on ``[b[i-1], b[i])``."""

    values: tuple
    breakpoints: tuple = ()

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        bps = tuple(float(b) for b in np.atleast_1d(self.breakpoints)) if len(
            np.atleast_1d(self.breakpoints)) else ()
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "breakpoints", bps)
        if len(vals) != len(bps) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("values must be finite")
        if bps:
            arr = np.asarray(bps)
            check_strictly_increasing(arr, "breakpoints")
            if arr[0] <= 0:
                raise ValueError("breakpoints must be positive")

    @classmethod
    def constant(cls, value: float):
        return cls((float(value),))

    def __call__(self, t) -> float:
        i = int(np.searchsorted(self.breakpoints, float(t), side="right"))
        return self.values[i]

    def integral(self, t: float) -> float:
        """``int_0^t f(s) ds``."""
        t = float(t)
        total, prev = 0.0, 0.0
        for b, v in zip(self.breakpoints, self.values):
            if t <= b:
                return total + v * (t - prev)
            total += v * (b - prev)
            prev = b
        return total + self.values[-1] * (t - prev)

    def integral_between(self, a: float, b: float) -> float:
        return self.integral(b) - self.integral(a)

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def to_dict(self) -> dict:
        return {"values": list(self.values), "breakpoints": list(self.breakpoints)}

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, (int, float)):
            return cls.constant(data)
        return cls(tuple(data["values"]), tuple(data.get("breakpoints", ())))


@dataclass(frozen=True)
class RateCurve(PiecewiseConstant):
    """Deterministic, bounded, nonnegative short rate."""

    def __post_init__(self):
        super().__post_init__()
        if any(v < 0 for v in self.values):
            raise ValueError("rates must be nonnegative")

    def discount(self, t: float) -> float:
        return math.exp(-self.integral(t))


@dataclass(frozen=True, eq=False)
class StateSurface:
    """A function ``f(t, x)`` of time and log-state (log-strike or log-price).

    Either a constant or a table: linear in ``x`` with flat extrapolation,
    left-constant in ``t`` (row ``i`` applies from ``times[i]`` on).
    """

    constant: float | None = None
    times: np.ndarray | None = None
    log_x: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.constant is not None:
            c = float(self.constant)
            if not math.isfinite(c) or c < 0:
                raise ValueError("surface constant must be finite and nonnegative")
            object.__setattr__(self, "constant", c)
            return
        times = as_float_array(self.times, "surface times")
        log_x = as_float_array(self.log_x, "surface log_x")
        values = as_float_array(self.values, "surface values", ndim=2)
        check_strictly_increasing(times, "surface times")
        check_strictly_increasing(log_x, "surface log_x")
        if times[0] != 0.0:
            raise ValueError("surface times must start at 0")
        if values.shape != (times.size, log_x.size):
            raise ValueError("surface values must have shape (len(times), len(log_x))")
        if np.any(values < 0):
            raise ValueError("surface values must be nonnegative")
        for arr in (times, log_x, values):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "log_x", log_x)
        object.__setattr__(self, "values", values)

    @classmethod
    def flat(cls, value: float) -> "StateSurface":
        return cls(constant=value)

    @classmethod
    def table(cls, times, log_x, values) -> "StateSurface":
        return cls(times=np.asarray(times), log_x=np.asarray(log_x), values=np.asarray(values))

    @property
    def time_homogeneous(self) -> bool:
        return self.constant is not None or self.times.size == 1

    def max(self) -> float:
        return self.constant if self.constant is not None else float(self.values.max())

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant is not None:
            return np.full_like(x, self.constant)
        row = int(np.searchsorted(self.times, float(t), side="right")) - 1
        return np.interp(x, self.log_x, self.values[max(row, 0)])

    def __eq__(self, other):
        return isinstance(other, StateSurface) and self.to_dict() == other.to_dict()

    __hash__ = None

    def to_dict(self):
        if self.constant is not None:
            return {"constant": self.constant}
        return {
            "times": self.times.tolist(),
            "log_x": self.log_x.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, (int, float)):
            return cls.flat(data)
        data = dict(data)
        if "constant" in data:
            _only(data, {"constant"}, "surface")
            return cls.flat(data["constant"])
        _only(data, {"times", "log_x", "values"}, "surface")
        return cls.table(data["times"], data["log_x"], data["values"])


@dataclass(frozen=True)
class SquareRootProcess:
    """``dv = kappa (long_run - v) dt + vol_of_vol sqrt(v) dW'`` with
    ``corr(dW', dW_asset) = correlation``."""

    initial: float
    kappa: float
    long_run: float
    vol_of_vol: float
    correlation: float = 0.0

    def __post_init__(self):
        for name in ("initial", "kappa", "long_run", "vol_of_vol", "correlation"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.initial < 0 or self.long_run < 0 or self.kappa < 0 or self.vol_of_vol < 0:
            raise ValueError("square-root process parameters must be nonnegative")
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")

    @property
    def deterministic(self) -> bool:
        return self.vol_of_vol == 0.0

    def exponential_moment_finite(self) -> bool:
        # E[exp(u int v dt)] < inf for every horizon iff u <= kappa^2 / (2 xi^2); here u = 1/2
        return self.vol_of_vol == 0.0 or self.kappa**2 >= self.vol_of_vol**2

    def to_dict(self):
        return {
            "kind": "square_root",
            "initial": self.initial,
            "kappa": self.kappa,
            "long_run": self.long_run,
            "vol_of_vol": self.vol_of_vol,
            "correlation": self.correlation,
        }


def _only(data: dict, allowed: set, what: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys for {what}: {sorted(unknown)}")


def _square_root_from_dict(data: dict) -> SquareRootProcess:
    data = dict(data)
    data.pop("kind", None)
    _only(data, {"initial", "kappa", "long_run", "vol_of_vol", "correlation"}, "square_root")
    return SquareRootProcess(**data)


# --------------------------------------------------------------------------- #
# Models
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LocalVol:
    spot: float
    rates: RateCurve
    local_vol: StateSurface
    kind = "local_vol"


@dataclass(frozen=True)
class JumpDiffusion:
    spot: float
    rates: RateCurve
    local_vol: StateSurface
    jumps: LevyMeasure
    kind = "jump_diffusion"


@dataclass(frozen=True)
class PureJumpLocalLevy:
    """Compensator ``activity(t, log S) * base(dz)``."""

    spot: float
    rates: RateCurve
    activity: StateSurface
    base: LevyMeasure
    kind = "pure_jump_local_levy"


@dataclass(frozen=True)
class TimeChangedLevy:
    """``S = exp(L_{T_t} + int r)`` with Levy triplet ``(drift, variance, jumps)``
    and activity rate ``clock`` (deterministic step function or square-root)."""

    spot: float
    rates: RateCurve
    drift: float
    variance: float
    jumps: LevyMeasure
    clock: Union[PiecewiseConstant, SquareRootProcess]
    kind = "time_changed_levy"

    @staticmethod
    def martingale_drift(variance: float, jumps: LevyMeasure) -> float:
        """Drift ``b`` making ``exp(L)`` a martingale."""
        return -0.5 * variance - (jumps.mean_exp_minus_one() - jumps.truncated_mean())

    def martingale_defect(self) -> float:
        return self.drift + 0.5 * self.variance + (
            self.jumps.mean_exp_minus_one() - self.jumps.truncated_mean())


@dataclass(frozen=True)
class StochVolJump:
    spot: float
    rates: RateCurve
    variance: SquareRootProcess
    jumps: LevyMeasure
    kind = "stoch_vol_jump"


@dataclass(frozen=True)
class BasketJumps:
    """Joint jumps: common atoms on R^d plus independent per-asset measures."""

    atom_sizes: tuple = ()
    atom_weights: tuple = ()
    marginals: tuple = ()

    def __post_init__(self):
        sizes = tuple(tuple(float(v) for v in a) for a in self.atom_sizes)
        weights = tuple(float(w) for w in self.atom_weights)
        marg = tuple((int(i), m) for i, m in self.marginals)
        object.__setattr__(self, "atom_sizes", sizes)
        object.__setattr__(self, "atom_weights", weights)
        object.__setattr__(self, "marginals", marg)
        if len(sizes) != len(weights):
            raise ValueError("atom_sizes and atom_weights must have the same length")
        if any(w < 0 for w in weights):
            raise ValueError("atom weights must be nonnegative")

    def to_dict(self):
        return {
            "atom_sizes": [list(a) for a in self.atom_sizes],
            "atom_weights": list(self.atom_weights),
            "marginals": [{"asset": i, "measure": m.to_dict()} for i, m in self.marginals],
        }


@dataclass(frozen=True)
class Basket:
    """``d`` assets with constant or square-root variances, correlated Brownian
    drivers and joint jumps; the traded underlying is ``I = sum w_i S_i``."""

    spots: tuple
    rates: RateCurve
    vols: tuple
    correlation: tuple
    weights: tuple
    jumps: BasketJumps = field(default_factory=BasketJumps)
    kind = "basket"

    def __post_init__(self):
        object.__setattr__(self, "spots", tuple(float(s) for s in self.spots))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "vols", tuple(
            v if isinstance(v, SquareRootProcess) else float(v) for v in self.vols))
        object.__setattr__(self, "correlation", tuple(
            tuple(float(c) for c in row) for row in self.correlation))
        d = len(self.spots)
        if not (len(self.weights) == len(self.vols) == len(self.correlation) == d):
            raise ValueError("spots, weights, vols and correlation must agree on dimension")
        if any(len(row) != d for row in self.correlation):
            raise ValueError("correlation must be square")

    @property
    def dimension(self) -> int:
        return len(self.spots)

    @property
    def spot(self) -> float:
        return float(sum(w * s for w, s in zip(self.weights, self.spots)))


ModelSpec = Union[LocalVol, JumpDiffusion, PureJumpLocalLevy, TimeChangedLevy, StochVolJump, Basket]


def _clock_to_dict(clock):
    if isinstance(clock, SquareRootProcess):
        return clock.to_dict()
    return {"kind": "deterministic", **clock.to_dict()}


def _clock_from_dict(data):
    if isinstance(data, (int, float)):
        return PiecewiseConstant.constant(data)
    data = dict(data)
    kind = data.pop("kind", "deterministic")
    if kind == "deterministic":
        _only(data, {"values", "breakpoints"}, "deterministic clock")
        return PiecewiseConstant.from_dict(data)
    if kind == "square_root":
        return _square_root_from_dict(data)
    raise ValueError(f"unknown clock kind {kind!r}")


def model_to_dict(model) -> dict:
    base = {"kind": model.kind, "rates": model.rates.to_dict()}
    if isinstance(model, Basket):
        base.update(
            spots=list(model.spots),
            vols=[v.to_dict() if isinstance(v, SquareRootProcess) else v for v in model.vols],
            correlation=[list(r) for r in model.correlation],
            weights=list(model.weights),
            jumps=model.jumps.to_dict(),
        )
        return base
    base["spot"] = model.spot
    if isinstance(model, (LocalVol, JumpDiffusion)):
        base["local_vol"] = model.local_vol.to_dict()
    if isinstance(model, (JumpDiffusion, TimeChangedLevy, StochVolJump)):
        base["jumps"] = model.jumps.to_dict()
    if isinstance(model, PureJumpLocalLevy):
        base.update(activity=model.activity.to_dict(), base=model.base.to_dict())
    if isinstance(model, TimeChangedLevy):
        base.update(drift=model.drift, variance=model.variance, clock=_clock_to_dict(model.clock))
    if isinstance(model, StochVolJump):
        base["variance"] = model.variance.to_dict()
    return base


_MODEL_KEYS = {
    "local_vol": {"spot", "rates", "local_vol"},
    "jump_diffusion": {"spot", "rates", "local_vol", "jumps"},
    "pure_jump_local_levy": {"spot", "rates", "activity", "base"},
    "time_changed_levy": {"spot", "rates", "drift", "variance", "jumps", "clock"},
    "stoch_vol_jump": {"spot", "rates", "variance", "jumps"},
    "basket": {"spots", "rates", "vols", "correlation", "weights", "jumps"},
}


def _measure(data):
    return PointMasses() if data is None else measure_from_dict(data)


def model_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _MODEL_KEYS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KEYS)}")
    _only(data, _MODEL_KEYS[kind] | {"rate"}, f"model {kind}")
    if "rate" in data:
        if "rates" in data:
            raise ValueError("give either 'rate' or 'rates', not both")
        rates = RateCurve.constant(data.pop("rate"))
    else:
        rates = RateCurve.from_dict(data.pop("rates", 0.0))
    if kind == "basket":
        jumps = data.get("jumps") or {}
        _only(jumps, {"atom_sizes", "atom_weights", "marginals"}, "basket jumps")
        margs = []
        for m in jumps.get("marginals", []):
            _only(m, {"asset", "measure"}, "basket marginal")
            margs.append((m["asset"], measure_from_dict(m["measure"])))
        vols = tuple(_square_root_from_dict(v) if isinstance(v, dict) else float(v)
                     for v in data["vols"])
        return Basket(
            spots=tuple(data["spots"]),
            rates=rates,
            vols=vols,
            correlation=tuple(tuple(r) for r in data["correlation"]),
            weights=tuple(data["weights"]),
            jumps=BasketJumps(tuple(tuple(a) for a in jumps.get("atom_sizes", [])),
                              tuple(jumps.get("atom_weights", [])), tuple(margs)),
        )
    spot = float(data["spot"])
    if not spot > 0:
        raise ValueError("spot must be positive")
    if kind == "local_vol":
        return LocalVol(spot, rates, StateSurface.from_dict(data["local_vol"]))
    if kind == "jump_diffusion":
        return JumpDiffusion(spot, rates, StateSurface.from_dict(data.get("local_vol", 0.0)),
                             _measure(data.get("jumps")))
    if kind == "pure_jump_local_levy":
        return PureJumpLocalLevy(spot, rates, StateSurface.from_dict(data["activity"]),
                                 _measure(data["base"]))
    if kind == "time_changed_levy":
        jumps = _measure(data.get("jumps"))
        variance = float(data.get("variance", 0.0))
        drift = data.get("drift", "martingale")
        if drift == "martingale":
            drift = TimeChangedLevy.martingale_drift(variance, jumps)
        return TimeChangedLevy(spot, rates, float(drift), variance, jumps,
                               _clock_from_dict(data.get("clock", 1.0)))
    if kind == "stoch_vol_jump":
        return StochVolJump(spot, rates, _square_root_from_dict(data["variance"]),
                            _measure(data.get("jumps")))
    raise AssertionError(kind)


# --------------------------------------------------------------------------- #
# Effective coefficients
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class StateFreeTail:
    """One tail table per coefficient time; enables the convolution path."""

    tables: tuple

    def to_dict(self):
        return {"kind": "state_free", "tables": [t.to_dict() for t in self.tables]}


@dataclass(frozen=True, eq=False)
class TailSlice:
    """State-dependent tail at one time.

    Log-price bins are separated by ``edges`` (``len(scales) - 1`` of them);
    bin ``b`` uses ``scales[b] * tables[table_ids[b]]``.
    """

    edges: np.ndarray
    scales: np.ndarray
    table_ids: np.ndarray
    tables: tuple

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        scales = np.asarray(self.scales, dtype=float)
        ids = np.asarray(self.table_ids, dtype=int)
        if scales.size != edges.size + 1 or ids.size != scales.size:
            raise ValueError("need one scale and table id per bin")
        if np.any(scales < 0):
            raise ValueError("tail scales must be nonnegative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "table_ids", ids)
        object.__setattr__(self, "tables", tuple(self.tables))

    def bin_of(self, log_price) -> np.ndarray:
        return np.searchsorted(self.edges, log_price, side="right")

    def to_dict(self):
        return {
            "edges": self.edges.tolist(),
            "scales": self.scales.tolist(),
            "table_ids": self.table_ids.tolist(),
            "tables": [t.to_dict() for t in self.tables],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["edges"], dtype=float), np.asarray(data["scales"]),
                   np.asarray(data["table_ids"], dtype=int),
                   tuple(ExpDoubleTailTable.from_dict(t) for t in data["tables"]))


@dataclass(frozen=True, eq=False)
class StateDependentTail:
    slices: tuple

    def to_dict(self):
        return {"kind": "state_dependent", "slices": [s.to_dict() for s in self.slices]}


def _tail_from_dict(data):
    if data is None:
        return None
    if data["kind"] == "state_free":
        return StateFreeTail(tuple(ExpDoubleTailTable.from_dict(t) for t in data["tables"]))
    if data["kind"] == "state_dependent":
        return StateDependentTail(tuple(TailSlice.from_dict(s) for s in data["slices"]))
    raise ValueError(f"unknown jump tail kind {data['kind']!r}")


@dataclass(frozen=True, eq=False)
class EffectiveCoefficients:
    """Inputs of the forward equation on a log-strike grid.

    ``local_vol[i]`` and the ``i``-th tail apply from ``times[i]`` until the
    next coefficient time.
    """

    rates: RateCurve
    k: np.ndarray
    times: np.ndarray
    local_vol: np.ndarray
    jump_tail: StateFreeTail | StateDependentTail | None = None

    def __post_init__(self):
        k = as_float_array(self.k, "k")
        times = as_float_array(self.times, "times")
        vol = as_float_array(self.local_vol, "local_vol", ndim=2)
        check_strictly_increasing(times, "coefficient times")
        if times[0] != 0.0:
            raise ValueError("coefficient times must start at 0")
        if vol.shape != (times.size, k.size):
            raise ValueError("local_vol must have shape (len(times), len(k))")
        if np.any(vol < 0):
            raise ValueError("local volatility must be nonnegative")
        tail = self.jump_tail
        if isinstance(tail, StateFreeTail) and len(tail.tables) != times.size:
            raise ValueError("need one tail table per coefficient time")
        if isinstance(tail, StateDependentTail) and len(tail.slices) != times.size:
            raise ValueError("need one tail slice per coefficient time")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "local_vol", vol)

    def row(self, t: float) -> int:
        return max(int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1, 0)

    def to_dict(self) -> dict:
        return {
            "rates": self.rates.to_dict(),
            "k": self.k.tolist(),
            "times": self.times.tolist(),
            "local_vol": self.local_vol.tolist(),
            "jump_tail": None if self.jump_tail is None else self.jump_tail.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EffectiveCoefficients":
        _only(data, {"rates", "k", "times", "local_vol", "jump_tail"}, "coefficients")
        return cls(
            RateCurve.from_dict(data["rates"]),
            np.asarray(data["k"], dtype=float),
            np.asarray(data["times"], dtype=float),
            np.asarray(data["local_vol"], dtype=float),
            _tail_from_dict(data.get("jump_tail")),
        )

    def __eq__(self, other):
        return isinstance(other, EffectiveCoefficients) and self.to_dict() == other.to_dict()

    __hash__ = None


def offset_tail_table(measure: LevyMeasure, grid: GridSpec) -> ExpDoubleTailTable:
    """Tail tabulated exactly at every node offset of ``grid``."""
    return build_tail_table(measure, grid.offsets())


def effective_coefficients(model, grid: GridSpec) -> EffectiveCoefficients:
    """Closed-form effective coefficients for models that admit them."""
    k = grid.k
    if isinstance(model, (StochVolJump, Basket)):
        raise ProjectionRequiredError(
            f"{model.kind} coefficients require Monte Carlo projection "
            "(use mc_oracle.project_effective_coefficients / project_index)")
    if isinstance(model, TimeChangedLevy) and isinstance(model.clock, SquareRootProcess):
        if not model.clock.deterministic:
            raise ProjectionRequiredError(
                "a stochastic activity rate requires Monte Carlo projection "
                "(use mc_oracle.project_effective_coefficients)")

    if isinstance(model, (LocalVol, JumpDiffusion)):
        surf = model.local_vol
        times = np.array([0.0]) if surf.time_homogeneous else step_start_times(grid)
        vol = np.vstack([surf(t, k) for t in times])
        tail = None
        if isinstance(model, JumpDiffusion) and not model.jumps.is_zero():
            table = offset_tail_table(model.jumps, grid)
            tail = StateFreeTail((table,) * times.size)
        return EffectiveCoefficients(model.rates, k, times, vol, tail)

    if isinstance(model, PureJumpLocalLevy):
        surf = model.activity
        times = np.array([0.0]) if surf.time_homogeneous else step_start_times(grid)
        kappa = offset_tail_table(model.base, grid)
        edges = 0.5 * (k[1:] + k[:-1])
        ids = np.zeros(k.size, dtype=int)
        slices = tuple(TailSlice(edges, surf(t, k), ids, (kappa,)) for t in times)
        return EffectiveCoefficients(model.rates, k, times, np.zeros((times.size, k.size)),
                                     StateDependentTail(slices))

    if isinstance(model, TimeChangedLevy):
        clock = model.clock
        if isinstance(clock, SquareRootProcess):
            # deterministic square-root clock: dtheta = kappa (long_run - theta) dt
            times = step_start_times(grid)
            theta = clock.long_run + (clock.initial - clock.long_run) * np.exp(-clock.kappa * times)
            if clock.kappa == 0 or clock.initial == clock.long_run:
                times, theta = np.array([0.0]), np.array([clock.initial])
        elif clock.is_constant:
            times, theta = np.array([0.0]), np.array([clock.values[0]])
        else:
            times = step_start_times(grid)
            theta = np.array([clock(t) for t in times])
        vol = np.sqrt(theta * model.variance)[:, None] * np.ones_like(k)[None, :]
        tail = None
        if not model.jumps.is_zero():
            base = offset_tail_table(model.jumps, grid)
            tail = StateFreeTail(tuple(base.scaled(th) for th in theta))
        return EffectiveCoefficients(model.rates, k, times, vol, tail)

    raise TypeError(f"unsupported model type {type(model).__name__}")


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #


def _measure_conditions(measure: LevyMeasure, prefix: str = "") -> list:
    rep = check_integrability(measure)
    return [ConditionResult(prefix + c.name, c.passed, c.detail) for c in rep.conditions]


def validate_model(model) -> DiagnosticReport:
    """Check the integrability and boundedness assumptions behind the forward equation."""
    conds: list[ConditionResult] = []
    if isinstance(model, (LocalVol, JumpDiffusion)):
        smax = model.local_vol.max()
        conds.append(ConditionResult("H'1", math.isfinite(smax),
                                     f"sup local vol = {smax:.6g} (table maximum)"))
    if isinstance(model, JumpDiffusion):
        conds += _measure_conditions(model.jumps)
    if isinstance(model, PureJumpLocalLevy):
        amax = model.activity.max()
        conds.append(ConditionResult("activity_bounded", math.isfinite(amax),
                                     f"sup activity = {amax:.6g}"))
        conds += _measure_conditions(model.base)
    if isinstance(model, TimeChangedLevy):
        conds += [c for c in _measure_conditions(model.jumps)]
        defect = model.martingale_defect()
        conds.append(ConditionResult(
            "martingale", abs(defect) <= 1e-10,
            f"b + sigma^2/2 + int(e^z-1-z1{{|z|<=1}}) nu(dz) = {defect:.3g}"))
        clock = model.clock
        if isinstance(clock, SquareRootProcess):
            conds.append(ConditionResult("H", clock.exponential_moment_finite(),
                                         "activity-rate exponential moment (kappa >= vol_of_vol)"))
        else:
            ok = all(v >= 0 for v in clock.values)
            conds.append(ConditionResult("clock", ok, "activity rate nonnegative and bounded"))
    if isinstance(model, StochVolJump):
        conds += _measure_conditions(model.jumps)
        ok = model.variance.exponential_moment_finite()
        conds.append(ConditionResult(
            "H_vol", ok, "E[exp(int v dt / 2)] finite requires kappa >= vol_of_vol"))
    if isinstance(model, Basket):
        conds += _basket_conditions(model)
    if not conds:
        conds.append(ConditionResult("model", True, "no conditions apply"))
    return DiagnosticReport(tuple(conds))


def _basket_conditions(model: Basket) -> list:
    conds = []
    rho = np.asarray(model.correlation)
    sym = np.allclose(rho, rho.T, atol=1e-14)
    unit = np.allclose(np.diag(rho), 1.0, atol=1e-14)
    positive = bool(np.all(rho > 0))
    psd = sym and float(np.linalg.eigvalsh(0.5 * (rho + rho.T)).min()) >= -1e-12
    conds.append(ConditionResult("correlation", sym and unit and positive and psd,
                                 "symmetric PSD, unit diagonal, positive entries"))
    conds.append(ConditionResult("weights", all(w > 0 for w in model.weights), "w_i > 0"))
    conds.append(ConditionResult("spots", all(s > 0 for s in model.spots), "S_i > 0"))
    a1 = all(not isinstance(v, SquareRootProcess) or v.exponential_moment_finite()
             for v in model.vols)
    conds.append(ConditionResult("A1b", a1, "E[exp(int |delta|^2 dt / 2)] finite"))
    jumps = model.jumps
    d = model.dimension
    if any(len(a) != d for a in jumps.atom_sizes):
        conds.append(ConditionResult("A2b", False, "atom dimension mismatch"))
        return conds
    bad_index = [i for i, _ in jumps.marginals if not 0 <= i < d]
    a2 = not bad_index and all(m.finite_activity for _, m in jumps.marginals)
    conds.append(ConditionResult("A2b", a2, "int (1 ^ |y|) nu(dy) finite (finite activity)"))
    a3 = True
    detail = "finite atom list"
    for i, m in jumps.marginals:
        if isinstance(m, Kou) and m.intensity > 0:
            need_up = m.p_up > 0 and m.eta_up <= 2
            need_down = m.p_up < 1 and m.eta_down <= 2
            if need_up or need_down:
                a3 = False
                detail = f"asset {i}: Kou needs eta_up > 2 and eta_down > 2"
        elif not isinstance(m, (Merton, PointMasses)):
            rep = check_integrability(m)
            a3 = a3 and rep.passed
    conds.append(ConditionResult("A3b", a3, detail + "; int_(|y|>1) e^(2|y|) nu(dy)"))
    return conds


def _tail_width(measure: LevyMeasure, horizon: float, level: float, sign: float) -> float:
    """Smallest ``w`` on a geometric search with ``horizon * psi(sign * w) <= level``.

    On the left ``psi(-w)`` is scaled by ``e^w`` so it bounds the jump mass below ``-w``.
    """
    if measure.is_zero():
        return 0.0
    w = 0.25
    while w < 64.0:
        size = float(measure.tail(np.array([sign * w]))[0]) * (math.exp(w) if sign < 0 else 1.0)
        if horizon * size <= level:
            break
        w *= 1.1
    return w


def _second_moment(measure: LevyMeasure) -> float:
    if measure.is_zero() or not measure.finite_activity:
        return 0.0
    y = measure.sample(np.random.default_rng(0), 20000)
    return float(measure.total_intensity) * float(np.mean(y * y))


_CHERNOFF_ORDERS = np.geomspace(1e-2, 200.0, 300)


def _chernoff_width(var: float, measures, growth: float, T: float, level: float, sign: float) -> float:
    """Log-moneyness beyond which the out-of-the-money price per unit strike is below ``level``.

    Uses ``(S - K)^+ <= S^p K^{1-p}`` on the right and ``(K - S)^+ <= K^{1+q} S^{-q}``
    on the left, with the log-moments of the martingale part bounded by a Levy
    exponent of variance ``var`` and the given jump measures.  Per unit strike
    because the validation slopes divide the edge price by ``K h``.
    """
    best = math.inf
    for q in _CHERNOFF_ORDERS:
        p = 1.0 + q if sign > 0 else -q
        expo = 0.5 * p * (p - 1.0) * var
        for m in measures:
            if m.is_zero():
                continue
            expo += m.exp_moment(p) - p * m.mean_exp_minus_one()
        if not math.isfinite(expo):
            continue
        best = min(best, (T * expo + p * growth - math.log(level)) / abs(p))
    return best if math.isfinite(best) else 0.0


def suggest_grid(model, maturities, n_k: int = 400, substeps: int = 100, *, level: float = 1e-12,
                 price_level: float = 1e-11, grading: float = 1.0) -> GridSpec:
    """A log-strike domain wide enough for the zero-value right boundary and
    for the jump tails to be negligible at the boundary offsets.

    ``level`` bounds the tail mass beyond the edges; ``price_level`` bounds the
    out-of-the-money price per unit strike at the edges.
    """
    mats = np.atleast_1d(np.asarray(maturities, dtype=float))
    T = float(mats[-1])
    if isinstance(model, Basket):
        var = max(v.long_run if isinstance(v, SquareRootProcess) else v * v for v in model.vols)
        v0 = max(v.initial if isinstance(v, SquareRootProcess) else v * v for v in model.vols)
        var = max(var, v0)
        measures = [m for _, m in model.jumps.marginals]
        if model.jumps.atom_weights:
            sizes = np.asarray(model.jumps.atom_sizes).ravel()
            weights = np.repeat(model.jumps.atom_weights, model.dimension)
            measures.append(PointMasses(tuple(sizes), tuple(weights)))
    elif isinstance(model, StochVolJump):
        p = model.variance
        var = max(p.initial, p.long_run) + p.vol_of_vol
        measures = [model.jumps]
    elif isinstance(model, TimeChangedLevy):
        c = model.clock
        top = max(c.values) if isinstance(c, PiecewiseConstant) else max(c.initial, c.long_run) + c.vol_of_vol
        var = model.variance * top
        measures = [model.jumps.scaled(top)]
    elif isinstance(model, PureJumpLocalLevy):
        var = 0.0
        measures = [model.base.scaled(model.activity.max())]
    else:
        var = model.local_vol.max() ** 2
        measures = [model.jumps] if isinstance(model, JumpDiffusion) else []
    jump_var = sum(_second_moment(m) for m in measures)
    s = math.sqrt(max((var + jump_var) * T, 1e-4))
    wl = max(_tail_width(m, T, level, -1.0) for m in measures) if measures else 0.0
    wr = max(_tail_width(m, T, level, 1.0) for m in measures) if measures else 0.0
    growth = model.rates.integral(T)
    x0 = math.log(model.spot)
    left = max(1.0, 8.0 * s, wl, _chernoff_width(var, measures, growth, T, price_level, -1.0))
    right = max(6.5 * s, wr, _chernoff_width(var, measures, growth, T, price_level, 1.0))
    return GridSpec(x0 - left, x0 + right, n_k, tuple(mats), substeps, grading)
