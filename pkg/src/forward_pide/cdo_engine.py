"""Expected tranche notionals ``E[(K - L_T)^+]`` for a portfolio loss process.

Three engines share one specification: density evolution of the loss
distribution on a grid, the constant-LGD recursion for ``C_k(T)``, and a
thinning Monte Carlo oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import betainc
from scipy.stats import poisson

from ._validation import as_float_array, check_strictly_increasing
from .mc_oracle import MCConfig, MCResult, _combine_moments, _map_blocks
from .models import PiecewiseConstant
from .pide_engine import StepSizeError


class LossSpecError(ValueError):
    """A loss specification violates its invariants."""


# --------------------------------------------------------------------------- #
# Mark laws. Each gives the law of the loss jump from a state L.
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PointMark:
    """Fixed loss ``size``, truncated at the remaining notional ``1 - L``."""

    size: float
    kind = "point"

    def __post_init__(self):
        if not 0 < self.size <= 1:
            raise LossSpecError("point mark size must lie in (0, 1]")

    def sample(self, rng, L: np.ndarray) -> np.ndarray:
        return np.minimum(self.size, 1.0 - L)

    def to_dict(self):
        return {"kind": self.kind, "size": self.size}


@dataclass(frozen=True)
class UniformMark:
    """Uniform on ``(0, fraction * (1 - L)]``."""

    fraction: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise LossSpecError("mark fraction must lie in (0, 1]; larger marks overshoot the notional")

    def scale(self, L):
        return self.fraction * (1.0 - L)

    def sample(self, rng, L):
        return self.scale(L) * (1.0 - rng.random(L.shape))

    @staticmethod
    def cdf(u):
        return np.clip(u, 0.0, 1.0)

    @staticmethod
    def partial_mean(u):
        u = np.clip(u, 0.0, 1.0)
        return 0.5 * u * u

    def to_dict(self):
        return {"kind": self.kind, "fraction": self.fraction}


@dataclass(frozen=True)
class BetaMark:
    """``fraction * (1 - L) * Beta(a, b)``."""

    a: float
    b: float
    fraction: float = 1.0
    kind = "beta"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise LossSpecError("beta parameters must be positive")
        if not 0 < self.fraction <= 1:
            raise LossSpecError("mark fraction must lie in (0, 1]; larger marks overshoot the notional")

    def scale(self, L):
        return self.fraction * (1.0 - L)

    def sample(self, rng, L):
        return self.scale(L) * rng.beta(self.a, self.b, L.shape)

    def cdf(self, u):
        return betainc(self.a, self.b, np.clip(u, 0.0, 1.0))

    def partial_mean(self, u):
        return self.a / (self.a + self.b) * betainc(self.a + 1.0, self.b, np.clip(u, 0.0, 1.0))

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "fraction": self.fraction}


_MARKS = {"point": PointMark, "uniform": UniformMark, "beta": BetaMark}


def mark_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _MARKS:
        raise LossSpecError(f"unknown mark kind {kind!r}; expected one of {sorted(_MARKS)}")
    try:
        return _MARKS[kind](**data)
    except TypeError as exc:
        raise LossSpecError(f"bad {kind} mark: {exc}") from None


# --------------------------------------------------------------------------- #
# Intensities
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AffineIntensity:
    """``lambda(t, L) = base(t) + slope * L`` (zero once ``L = 1``)."""

    base: PiecewiseConstant
    slope: float = 0.0
    kind = "affine"

    def __post_init__(self):
        if not isinstance(self.base, PiecewiseConstant):
            object.__setattr__(self, "base", PiecewiseConstant.constant(float(self.base)))
        lo = min(self.base.values) + min(self.slope, 0.0)
        if lo < 0:
            raise LossSpecError("intensity base(t) + slope * L must be nonnegative on [0, 1]")

    def __call__(self, t: float, L) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        return np.where(L < 1.0, self.base(t) + self.slope * L, 0.0)

    @property
    def bound(self) -> float:
        return max(self.base.values) + max(self.slope, 0.0)

    @property
    def breakpoints(self) -> tuple:
        return self.base.breakpoints

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "slope": self.slope}


@dataclass(frozen=True)
class CallableIntensity:
    """Arbitrary ``fn(t, L)``; Monte Carlo thinning needs a finite ``bound``."""

    fn: Callable
    bound: float | None = None
    breakpoints: tuple = ()

    def __call__(self, t, L):
        return np.asarray(self.fn(t, np.asarray(L, dtype=float)), dtype=float)


@dataclass(frozen=True)
class ConstantLGD:
    """Each default loses ``delta``; ``rates[i, j]`` is ``a_j`` on interval ``i``.

    Interval ``i`` is ``[breakpoints[i-1], breakpoints[i])``; states ``j`` run over
    ``0 .. n_names - 1`` and ``a_j = 0`` once every name has defaulted.
    """

    delta: float
    rates: np.ndarray
    breakpoints: tuple = ()

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim == 1:
            rates = rates[None, :]
        if rates.ndim != 2 or rates.shape[1] == 0:
            raise LossSpecError("rates must be a nonempty 1-D or 2-D array")
        bps = tuple(float(b) for b in self.breakpoints)
        if rates.shape[0] != len(bps) + 1:
            raise LossSpecError("need one row of rates per time interval (len(breakpoints) + 1)")
        if bps and (bps[0] <= 0 or np.any(np.diff(bps) <= 0)):
            raise LossSpecError("breakpoints must be positive and strictly increasing")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise LossSpecError("default intensities must be finite and nonnegative")
        if not 0 < self.delta <= 1:
            raise LossSpecError("delta must lie in (0, 1]")
        if self.delta * rates.shape[1] > 1 + 1e-12:
            raise LossSpecError(
                f"delta * n_names = {self.delta * rates.shape[1]:.6g} exceeds the notional 1")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def constant(cls, delta: float, n_names: int, rate: float) -> "ConstantLGD":
        return cls(delta, np.full(n_names, float(rate)))

    @classmethod
    def linear_birth(cls, delta: float, n_names: int, slope: float = 1.0, level: float = 1.0):
        """``a_j = level + slope * j``."""
        return cls(delta, level + slope * np.arange(n_names, dtype=float))

    @property
    def n_names(self) -> int:
        return self.rates.shape[1]

    def state_rates(self, t: float) -> np.ndarray:
        """``a_0 .. a_n`` at time ``t`` (the last entry, all names gone, is 0)."""
        i = int(np.searchsorted(self.breakpoints, t, side="right"))
        return np.append(self.rates[i], 0.0)

    @property
    def bound(self) -> float:
        return float(self.rates.max())

    def to_dict(self):
        return {"delta": self.delta, "rates": self.rates.tolist(), "breakpoints": list(self.breakpoints)}


@dataclass(frozen=True)
class PortfolioLossSpec:
    """Either ``intensity`` with ``marks``, or the constant-LGD shortcut ``lgd``."""

    intensity: AffineIntensity | CallableIntensity | None = None
    marks: PointMark | UniformMark | BetaMark | None = None
    lgd: ConstantLGD | None = None

    def __post_init__(self):
        if self.lgd is not None:
            if self.intensity is not None or self.marks is not None:
                raise LossSpecError("give either lgd or intensity + marks, not both")
        elif self.intensity is None or self.marks is None:
            raise LossSpecError("a loss spec needs intensity and marks (or lgd)")

    @classmethod
    def constant_lgd(cls, delta, rates, breakpoints=()):
        return cls(lgd=ConstantLGD(delta, rates, breakpoints))

    @property
    def breakpoints(self) -> tuple:
        return self.lgd.breakpoints if self.lgd is not None else tuple(self.intensity.breakpoints)

    def intensity_at(self, t: float, L) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        if self.lgd is None:
            return self.intensity(t, L)
        j = np.rint(L / self.lgd.delta).astype(int)
        a = self.lgd.state_rates(t)
        return a[np.clip(j, 0, a.size - 1)]

    def sample_marks(self, rng, L):
        if self.lgd is not None:
            return np.full(L.shape, self.lgd.delta)
        return self.marks.sample(rng, L)

    def to_dict(self):
        if self.lgd is not None:
            return {"lgd": self.lgd.to_dict()}
        if isinstance(self.intensity, CallableIntensity):
            raise TypeError("callable intensities are not serializable")
        return {"intensity": self.intensity.to_dict(), "marks": self.marks.to_dict()}


def loss_spec_from_dict(data: dict) -> PortfolioLossSpec:
    extra = set(data) - {"lgd", "intensity", "marks"}
    if extra:
        raise LossSpecError(f"unknown loss-spec keys: {sorted(extra)}")
    if "lgd" in data:
        d = dict(data["lgd"])
        bad = set(d) - {"delta", "rates", "breakpoints", "n_names", "rate"}
        if bad:
            raise LossSpecError(f"unknown lgd keys: {sorted(bad)}")
        if "rates" in d:
            lgd = ConstantLGD(d["delta"], d["rates"], tuple(d.get("breakpoints", ())))
        else:
            lgd = ConstantLGD.constant(d["delta"], int(d["n_names"]), d["rate"])
        return PortfolioLossSpec(lgd=lgd)
    inten = dict(data.get("intensity", {}))
    if inten.pop("kind", "affine") != "affine":
        raise LossSpecError("only affine intensities are serializable")
    bad = set(inten) - {"base", "slope"}
    if bad:
        raise LossSpecError(f"unknown intensity keys: {sorted(bad)}")
    base = inten.get("base", 0.0)
    base = PiecewiseConstant.from_dict(base) if isinstance(base, dict) else PiecewiseConstant.constant(base)
    return PortfolioLossSpec(AffineIntensity(base, float(inten.get("slope", 0.0))),
                             mark_from_dict(data.get("marks", {})))


# --------------------------------------------------------------------------- #
# Surfaces
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class TrancheSurface:
    maturities: np.ndarray
    attachments: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("T,K,C\n")
            for i, T in enumerate(self.maturities):
                for j, K in enumerate(self.attachments):
                    fh.write(f"{T:.17g},{K:.17g},{self.values[i, j]:.17g}\n")

    def to_dict(self):
        return {"maturities": self.maturities.tolist(), "attachments": self.attachments.tolist(),
                "values": self.values.tolist()}


def _check_maturities(maturities) -> np.ndarray:
    T = as_float_array(maturities, "maturities")
    check_strictly_increasing(T, "maturities")
    if T[0] <= 0:
        raise ValueError("maturities must be positive")
    return T


def _check_attachments(attachments) -> np.ndarray:
    K = as_float_array(attachments, "attachments")
    if np.any(K < 0) or np.any(K > 1):
        raise ValueError("attachments must lie in [0, 1]")
    return K


# --------------------------------------------------------------------------- #
# Density evolution
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LossGrid:
    """Uniform loss nodes ``upper * i / n_cells``."""

    n_cells: int
    upper: float = 1.0

    def __post_init__(self):
        if int(self.n_cells) < 1:
            raise ValueError("n_cells must be positive")
        if not 0 < self.upper <= 1:
            raise ValueError("upper must lie in (0, 1]")
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @property
    def nodes(self) -> np.ndarray:
        return self.upper * np.arange(self.n_cells + 1) / self.n_cells

    @property
    def spacing(self) -> float:
        return self.upper / self.n_cells

    @classmethod
    def for_spec(cls, spec: PortfolioLossSpec, n_cells: int = 1000, cells_per_default: int = 1) -> "LossGrid":
        """Constant LGD: spacing ``delta / cells_per_default`` so every loss level is a node."""
        if spec.lgd is None:
            return cls(n_cells)
        n = spec.lgd.n_names
        return cls(n * int(cells_per_default), min(1.0, n * spec.lgd.delta))


def _split_point(size: float, h: float, n: int):
    """Node offsets and weights for a jump ``size`` (mean-preserving)."""
    s = size / h
    j = int(math.floor(s + 1e-9))
    f = s - j
    if f < 1e-9:
        return np.array([j]), np.array([1.0])
    return np.array([j, j + 1]), np.array([1.0 - f, f])


def _split_law(law, scale: float, h: float):
    """Mass of ``scale * X`` split linearly between bracketing nodes."""
    if scale <= 0:
        return np.array([0]), np.array([1.0])
    n_cells = int(math.ceil(scale / h - 1e-9))
    a = h * np.arange(n_cells)
    b = h * np.arange(1, n_cells + 1)
    F = law.cdf(np.append(a, b[-1]) / scale)
    G = scale * law.partial_mean(np.append(a, b[-1]) / scale)
    P = np.diff(F)
    M1 = np.diff(G)
    low = np.maximum((b * P - M1) / h, 0.0)
    up = np.maximum((M1 - a * P) / h, 0.0)
    w = np.zeros(n_cells + 1)
    w[:-1] += low
    w[1:] += up
    w /= w.sum()
    return np.arange(n_cells + 1), w


def jump_kernel(spec: PortfolioLossSpec, grid: LossGrid) -> np.ndarray:
    """Row-stochastic ``Q[i, i']``: probability a loss jump from node ``i`` lands on ``i'``."""
    n = grid.n_cells + 1
    h = grid.spacing
    y = grid.nodes
    Q = np.zeros((n, n))
    for i in range(n):
        if spec.lgd is not None:
            offs, w = _split_point(spec.lgd.delta, h, n)
        elif isinstance(spec.marks, PointMark):
            offs, w = _split_point(min(spec.marks.size, 1.0 - y[i]), h, n)
        else:
            offs, w = _split_law(spec.marks, float(spec.marks.scale(y[i])), h)
        dest = i + offs
        if dest.max() >= n:
            if spec.lgd is None and grid.upper < 1.0 - 1e-12:
                raise LossSpecError("loss grid must cover [0, 1] for general mark laws")
            on_lattice = spec.lgd is None or abs(y[i] / spec.lgd.delta - round(y[i] / spec.lgd.delta)) < 1e-9
            if on_lattice and np.any(w[dest >= n] > 1e-15) and spec.intensity_at(0.0, y[i]).max() > 0:
                raise LossSpecError(f"mark mass escapes the loss grid from L = {y[i]:.6g}")
            keep = dest < n
            dest, w = dest[keep], w[keep] / w[keep].sum()
        Q[i, dest] += w
    return Q


def _time_nodes(maturities, breakpoints, rate_bound, substeps):
    ends = np.unique(np.concatenate(([0.0], maturities,
                                     [b for b in breakpoints if b < maturities[-1]])))
    out = [0.0]
    for a, b in zip(ends[:-1], ends[1:]):
        gap = b - a
        m = substeps if substeps is not None else max(1, int(math.ceil(gap * rate_bound - 1e-12)))
        if gap / m * rate_bound > 1 + 1e-12:
            need = int(math.ceil(gap * rate_bound))
            raise StepSizeError(
                f"step {gap / m:.4g} exceeds 1 / max intensity = {1 / rate_bound:.4g}; "
                f"use at least {need} substeps", need)
        out.extend(a + gap * np.arange(1, m + 1) / m)
        out[-1] = b
    return np.array(out)


def evolve_loss_distribution(spec: PortfolioLossSpec, grid: LossGrid, times, *,
                             substeps: int | None = None, method: str = "uniformized",
                             conservation_tol: float = 1e-12):
    """Loss distributions at ``times`` (rows), starting from ``L = 0``.

    Each step has constant rates.  ``method="euler"`` applies the explicit
    forward step ``p + dt G p``; ``"uniformized"`` sums the Poisson series of
    that same nonnegative step operator, which is the exact exponential.
    Both need ``dt * max(lambda) <= 1``.
    """
    if method not in ("uniformized", "euler"):
        raise ValueError("method must be 'uniformized' or 'euler'")
    times = _check_maturities(times)
    y = grid.nodes
    Q = jump_kernel(spec, grid)
    bound = spec.lgd.bound if spec.lgd is not None else getattr(spec.intensity, "bound", None)
    if bound is None:
        bound = max(float(np.max(spec.intensity_at(t, y))) for t in np.linspace(0, times[-1], 65))
    nodes = _time_nodes(times, spec.breakpoints, max(bound, 1e-300), substeps)
    p = np.zeros(y.size)
    p[0] = 1.0
    out = np.empty((times.size, y.size))
    targets = {float(t): i for i, t in enumerate(times)}
    QT = Q.T.copy()
    for t0, t1 in zip(nodes[:-1], nodes[1:]):
        dt = t1 - t0
        lam = spec.intensity_at(float(t0), y)
        lam_max = float(lam.max())
        if lam_max > 0:
            if dt * lam_max > 1 + 1e-12:
                need = int(math.ceil((nodes[-1]) * lam_max))
                raise StepSizeError(f"dt * max intensity = {dt * lam_max:.4g} > 1", need)
            if method == "euler":
                p = p + dt * (QT @ (lam * p) - lam * p)
            else:
                p = _uniformized_step(p, QT, lam, lam_max, dt)
        mass = p.sum()
        if abs(mass - 1.0) > conservation_tol:
            raise RuntimeError(f"probability conservation violated: total mass {mass!r}")
        idx = targets.get(float(t1))
        if idx is not None:
            out[idx] = p
    return out


def _uniformized_step(p, QT, lam, Lam, dt):
    # P = I + G / Lam is nonnegative; exp(dt G) = sum_n Pois(n; Lam dt) P^n
    mu = Lam * dt
    w = math.exp(-mu)
    term = p.copy()
    acc = w * term
    total, n = w, 0
    while 1.0 - total > 1e-17 and n < 1000:
        n += 1
        w *= mu / n
        term = term + (QT @ (lam * term) - lam * term) / Lam
        acc += w * term
        total += w
    # renormalize the truncated series tail
    return acc / total


def tranche_notionals(distributions: np.ndarray, nodes: np.ndarray, attachments) -> np.ndarray:
    K = np.asarray(attachments, dtype=float)
    return distributions @ np.maximum(K[None, :] - nodes[:, None], 0.0)


def solve_tranche_forward(spec: PortfolioLossSpec, grid: LossGrid | None, maturities, attachments=None,
                          *, substeps: int | None = None, method: str = "uniformized") -> TrancheSurface:
    """Expected tranche notionals by forward evolution of the loss law.

    ``attachments`` defaults to the loss-grid nodes.
    """
    grid = grid if grid is not None else LossGrid.for_spec(spec)
    T = _check_maturities(maturities)
    K = grid.nodes if attachments is None else _check_attachments(attachments)
    dist = evolve_loss_distribution(spec, grid, T, substeps=substeps, method=method)
    return TrancheSurface(T, K, tranche_notionals(dist, grid.nodes, K))


# --------------------------------------------------------------------------- #
# Constant-LGD recursion
# --------------------------------------------------------------------------- #


def cont_savescu_recursion(lgd: ConstantLGD, maturities, *, rtol: float = 1e-10,
                           atol: float = 1e-14) -> TrancheSurface:
    """``C_k(T) = delta E[(k - N_T)^+]`` for ``k = 0 .. n`` by the ODE

    ``dC_k/dT = -sum_{j<k} a_j (C_{j+1} - 2 C_j + C_{j-1})`` with ``C_{-1} = C_0 = 0``.
    """
    if np.any(lgd.rates < 0):
        raise LossSpecError("default intensities must be nonnegative")
    T = _check_maturities(maturities)
    n = lgd.n_names
    k = np.arange(n + 1)
    C = lgd.delta * k.astype(float)

    def rhs_matrix(a):
        # D[j] = C_{j+1} - 2C_j + C_{j-1} for j = 0..n-1; dC_k = -sum_{j<k} a_j D[j]
        D = np.zeros((n, n + 1))
        for j in range(n):
            D[j, j + 1] += 1.0
            D[j, j] -= 2.0
            if j >= 1:
                D[j, j - 1] += 1.0
        S = np.tril(np.ones((n + 1, n)), -1)
        return -(S * a[None, :n]) @ D

    ends = np.unique(np.concatenate(([0.0], T, [b for b in lgd.breakpoints if b < T[-1]])))
    out = np.empty((T.size, n + 1))
    targets = {float(t): i for i, t in enumerate(T)}
    for a0, b0 in zip(ends[:-1], ends[1:]):
        A = rhs_matrix(lgd.state_rates(a0))
        sol = solve_ivp(lambda t, c: A @ c, (a0, b0), C, method="DOP853", rtol=rtol, atol=atol)
        C = sol.y[:, -1]
        idx = targets.get(float(b0))
        if idx is not None:
            out[idx] = C
    return TrancheSurface(T, lgd.delta * k, out)


def poisson_tranche_surface(delta: float, n_names: int, rate: float, maturities) -> TrancheSurface:
    """Closed form for constant rates, ignoring the cap at ``n_names`` defaults."""
    T = _check_maturities(maturities)
    k = np.arange(n_names + 1)
    vals = np.empty((T.size, k.size))
    for i, t in enumerate(T):
        pm = poisson.pmf(np.arange(n_names + 1), rate * t)
        vals[i] = [delta * float(np.sum((kk - np.arange(kk)) * pm[:kk])) for kk in k]
    return TrancheSurface(T, delta * k, vals)


# --------------------------------------------------------------------------- #
# Monte Carlo
# --------------------------------------------------------------------------- #


def _thinning_bound(spec: PortfolioLossSpec) -> float:
    bound = spec.lgd.bound if spec.lgd is not None else getattr(spec.intensity, "bound", None)
    if bound is None or not np.isfinite(bound):
        raise LossSpecError("thinning needs an intensity bounded on [0, 1] x [0, T]; "
                            "give the intensity a finite 'bound'")
    return float(bound)


def simulate_losses(spec: PortfolioLossSpec, maturities, n: int, rng: np.random.Generator) -> np.ndarray:
    """Losses ``L_T`` (rows = maturities) for ``n`` paths by Ogata thinning."""
    T = np.asarray(maturities, dtype=float)
    bound = _thinning_bound(spec)
    out = np.empty((T.size, n))
    L = np.zeros(n)
    if bound == 0:
        out[:] = 0.0
        return out
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    mat_idx = np.zeros(n, dtype=int)
    while alive.any():
        idx = np.flatnonzero(alive)
        t_new = t[idx] + rng.exponential(1.0 / bound, idx.size)
        u = rng.random(idx.size)
        # record every maturity passed before the candidate time
        while True:
            pending = mat_idx[idx] < T.size
            passed = pending & (t_new > T[np.minimum(mat_idx[idx], T.size - 1)])
            if not passed.any():
                break
            sel = idx[passed]
            out[mat_idx[sel], sel] = L[sel]
            mat_idx[sel] += 1
        done = mat_idx[idx] >= T.size
        alive[idx[done]] = False
        live = ~done
        idx, t_new, u = idx[live], t_new[live], u[live]
        if idx.size == 0:
            break
        t[idx] = t_new
        lam = np.empty(idx.size)
        # intensities may be time-dependent: evaluate per distinct time slice
        if spec.lgd is not None:
            j = np.rint(L[idx] / spec.lgd.delta).astype(int)
            for ti in np.unique(np.searchsorted(spec.lgd.breakpoints, t_new, side="right")):
                m = np.searchsorted(spec.lgd.breakpoints, t_new, side="right") == ti
                a = np.append(spec.lgd.rates[ti], 0.0)
                lam[m] = a[np.clip(j[m], 0, a.size - 1)]
        else:
            bps = np.asarray(spec.breakpoints, dtype=float)
            seg = np.searchsorted(bps, t_new, side="right")
            for s in np.unique(seg):
                m = seg == s
                lam[m] = spec.intensity(float(t_new[m][0]), L[idx[m]])
        accept = u * bound < lam
        if np.any(lam > bound * (1 + 1e-12)):
            raise LossSpecError("intensity exceeded its declared bound during thinning")
        acc = idx[accept]
        if acc.size:
            L[acc] = np.minimum(L[acc] + spec.sample_marks(rng, L[acc]), 1.0)
    return out


def mc_tranche(spec: PortfolioLossSpec, maturities, attachments, mc: MCConfig,
               threads: int | None = None) -> MCResult:
    """MC estimates of ``E[(K - L_T)^+]`` with the block-seeding contract of the oracle."""
    if mc.antithetic:
        raise ValueError("antithetic sampling does not apply to point-process simulation")
    T = _check_maturities(maturities)
    K = _check_attachments(attachments)
    _thinning_bound(spec)

    def run(block):
        b, n = block
        LT = simulate_losses(spec, T, n, mc.rng(b))
        pay = np.maximum(K[None, :, None] - LT[:, None, :], 0.0)
        shift = pay[..., 0].copy()
        dev = pay - shift[..., None]
        return n, shift, dev.sum(axis=-1), (dev * dev).sum(axis=-1)

    return _combine_moments(_map_blocks(run, mc.blocks(), threads), T, K)
