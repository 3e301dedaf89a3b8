"""Jump compensators and their exponential double tails.

The exponential double tail of a measure ``m`` is

    psi(z) = int_{-inf}^z (e^z - e^u) m(du)    for z < 0
    psi(z) = int_z^{inf}  (e^u - e^z) m(du)    for z > 0

and ``psi(0)`` is taken as the right limit ``psi(0+)``.  Both one-sided limits
at zero are exposed because the forward solver weights them separately.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import erfcx, ndtr

from ._validation import as_float_array, check_strictly_increasing


class DivergenceError(ValueError):
    """An integral required by the tail definition is infinite."""

    def __init__(self, condition: str, detail: str):
        self.condition = condition
        super().__init__(f"integrability condition violated ({condition}): {detail}")


# --------------------------------------------------------------------------- #
# Measures
# --------------------------------------------------------------------------- #


class LevyMeasure:
    """Base class for the supported jump compensators (log-return jump sizes)."""

    kind: str = ""

    def tail(self, z) -> np.ndarray:
        raise NotImplementedError

    def left_limit_at_zero(self) -> float:
        raise NotImplementedError

    @property
    def total_intensity(self) -> float:
        raise NotImplementedError

    @property
    def finite_activity(self) -> bool:
        return math.isfinite(self.total_intensity)

    def mean_exp_minus_one(self) -> float:
        """``int (e^y - 1) m(dy)``."""
        raise NotImplementedError

    def truncated_mean(self) -> float:
        """``int_{|y|<=1} y m(dy)``."""
        raise NotImplementedError

    def exp_moment(self, p: float) -> float:
        """``int (e^{p y} - 1) m(dy)``; ``inf`` where it diverges."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` jump sizes from the normalized law ``m / m(R)``."""
        raise NotImplementedError

    def scaled(self, factor: float) -> "LevyMeasure":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def is_zero(self) -> bool:
        return self.total_intensity == 0.0


@dataclass(frozen=True)
class PointMasses(LevyMeasure):
    """Finite list of atoms ``sum_i weights[i] * delta_{sizes[i]}``."""

    sizes: tuple = ()
    weights: tuple = ()
    kind = "point_masses"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.sizes) != len(self.weights):
            raise ValueError("sizes and weights must have the same length")
        if any(not math.isfinite(s) for s in self.sizes):
            raise ValueError("jump sizes must be finite")
        if any(w < 0 or not math.isfinite(w) for w in self.weights):
            raise ValueError("atom weights must be finite and nonnegative")

    @property
    def _arrays(self):
        return np.asarray(self.sizes, dtype=float), np.asarray(self.weights, dtype=float)

    def tail(self, z):
        z = np.asarray(z, dtype=float)
        y, w = self._arrays
        if y.size == 0:
            return np.zeros_like(z)
        return _atom_tail(y, w, z)

    def left_limit_at_zero(self) -> float:
        y, w = self._arrays
        neg = y < 0
        return float(np.sum(w[neg] * (1.0 - np.exp(y[neg]))))

    @property
    def total_intensity(self) -> float:
        return float(sum(self.weights))

    def mean_exp_minus_one(self) -> float:
        y, w = self._arrays
        return float(np.sum(w * np.expm1(y)))

    def exp_moment(self, p):
        y, w = self._arrays
        return float(np.sum(w * np.expm1(p * y)))

    def truncated_mean(self) -> float:
        y, w = self._arrays
        inside = np.abs(y) <= 1.0
        return float(np.sum(w[inside] * y[inside]))

    def sample(self, rng, n):
        y, w = self._arrays
        if n == 0:
            return np.empty(0)
        if w.sum() == 0:
            raise ValueError("cannot sample from the zero measure")
        idx = rng.choice(y.size, size=n, p=w / w.sum())
        return y[idx]

    def scaled(self, factor):
        return PointMasses(self.sizes, tuple(factor * w for w in self.weights))

    def to_dict(self):
        return {"kind": self.kind, "sizes": list(self.sizes), "weights": list(self.weights)}


def _atom_tail(y: np.ndarray, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized tail of an atom list; O((n + m) log n) via sorted cumulative sums."""
    order = np.argsort(y)
    y = y[order]
    w = w[order]
    ey = np.exp(y)
    cw = np.concatenate(([0.0], np.cumsum(w)))
    cwe = np.concatenate(([0.0], np.cumsum(w * ey)))
    zf = z.ravel()
    out = np.empty_like(zf)
    pos = zf >= 0
    # z >= 0: atoms strictly above z
    idx = np.searchsorted(y, zf[pos], side="right")
    out[pos] = (cwe[-1] - cwe[idx]) - np.exp(zf[pos]) * (cw[-1] - cw[idx])
    # z < 0: atoms strictly below z
    idx = np.searchsorted(y, zf[~pos], side="left")
    out[~pos] = np.exp(zf[~pos]) * cw[idx] - cwe[idx]
    return np.maximum(out, 0.0).reshape(z.shape)


@dataclass(frozen=True)
class Kou(LevyMeasure):
    """Double-exponential jumps: ``intensity`` with up-probability ``p_up``."""

    intensity: float
    p_up: float
    eta_up: float
    eta_down: float
    kind = "kou"

    def __post_init__(self):
        for name in ("intensity", "p_up", "eta_up", "eta_down"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.intensity >= 0:
            raise ValueError("Kou intensity must be nonnegative")
        if not 0.0 <= self.p_up <= 1.0:
            raise ValueError("Kou p_up must lie in [0, 1]")
        if not (self.eta_up > 0 and self.eta_down > 0):
            raise ValueError("Kou eta_up and eta_down must be positive")

    def density(self, u):
        u = np.asarray(u, dtype=float)
        lam, p, e1, e2 = self.intensity, self.p_up, self.eta_up, self.eta_down
        return np.where(
            u > 0,
            lam * p * e1 * np.exp(-e1 * np.abs(u)),
            lam * (1 - p) * e2 * np.exp(-e2 * np.abs(u)),
        )

    def _require_right_branch(self):
        if self.intensity * self.p_up > 0 and self.eta_up <= 1.0:
            raise DivergenceError(
                "exp_tail",
                f"int_(y>0) e^y m(dy) diverges for Kou with eta_up={self.eta_up} <= 1",
            )

    def tail(self, z):
        z = np.asarray(z, dtype=float)
        lam, p, e1, e2 = self.intensity, self.p_up, self.eta_up, self.eta_down
        if lam == 0:
            return np.zeros_like(z)
        right = np.zeros_like(z)
        if p > 0 and np.any(z >= 0):
            self._require_right_branch()
            right = lam * p * np.exp((1 - e1) * np.maximum(z, 0.0)) / (e1 - 1)
        left = lam * (1 - p) * np.exp((1 + e2) * np.minimum(z, 0.0)) / (1 + e2)
        return np.where(z >= 0, right, left)

    def left_limit_at_zero(self):
        return self.intensity * (1 - self.p_up) / (1 + self.eta_down)

    @property
    def total_intensity(self):
        return self.intensity

    def mean_exp_minus_one(self):
        lam, p, e1, e2 = self.intensity, self.p_up, self.eta_up, self.eta_down
        if lam == 0:
            return 0.0
        self._require_right_branch()
        up = p * e1 / (e1 - 1) if p > 0 else 0.0
        return lam * (up + (1 - p) * e2 / (e2 + 1) - 1)

    def exp_moment(self, q):
        lam, p, e1, e2 = self.intensity, self.p_up, self.eta_up, self.eta_down
        if lam == 0:
            return 0.0
        if (p > 0 and q >= e1) or (p < 1 and q <= -e2):
            return math.inf
        up = p * e1 / (e1 - q) if p > 0 else 0.0
        down = (1 - p) * e2 / (e2 + q) if p < 1 else 0.0
        return lam * (up + down - 1)

    def truncated_mean(self):
        lam, p, e1, e2 = self.intensity, self.p_up, self.eta_up, self.eta_down
        # int_0^1 y eta e^{-eta y} dy = 1/eta - e^{-eta}(1 + 1/eta)
        up = 1 / e1 - math.exp(-e1) * (1 + 1 / e1)
        down = 1 / e2 - math.exp(-e2) * (1 + 1 / e2)
        return lam * (p * up - (1 - p) * down)

    def sample(self, rng, n):
        up = rng.random(n) < self.p_up
        e = rng.standard_exponential(n)
        return np.where(up, e / self.eta_up, -e / self.eta_down)

    def scaled(self, factor):
        return Kou(factor * self.intensity, self.p_up, self.eta_up, self.eta_down)

    def to_dict(self):
        return {
            "kind": self.kind,
            "intensity": self.intensity,
            "p_up": self.p_up,
            "eta_up": self.eta_up,
            "eta_down": self.eta_down,
        }


@dataclass(frozen=True)
class Merton(LevyMeasure):
    """Gaussian jump sizes with mean ``mean`` and standard deviation ``std``."""

    intensity: float
    mean: float
    std: float
    kind = "merton"

    def __post_init__(self):
        for name in ("intensity", "mean", "std"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.intensity >= 0:
            raise ValueError("Merton intensity must be nonnegative")
        if not self.std > 0:
            raise ValueError("Merton std must be positive")

    def density(self, u):
        u = np.asarray(u, dtype=float)
        x = (u - self.mean) / self.std
        return self.intensity * np.exp(-0.5 * x * x) / (self.std * math.sqrt(2 * math.pi))

    def _branches(self, z):
        lam, mu, s = self.intensity, self.mean, self.std
        growth = math.exp(mu + 0.5 * s * s)
        r2 = math.sqrt(2.0)
        # int e^u N(u; mu, s^2) du over a half line yields a shifted normal cdf
        d = (mu - z) / s
        a = (z - mu) / s
        with np.errstate(over="ignore", invalid="ignore"):
            right = lam * (growth * ndtr(d + s) - np.exp(z) * ndtr(d))
            left = lam * (np.exp(z) * ndtr(a) - growth * ndtr(a - s))
            # in the far tails both cdf terms share the factor e^{z - x^2/2}; erfcx keeps
            # the difference accurate where the direct form cancels
            g = 0.5 * lam * np.exp(z)
            right_t = g * np.exp(-0.5 * d * d) * (erfcx(-(d + s) / r2) - erfcx(-d / r2))
            left_t = g * np.exp(-0.5 * a * a) * (erfcx(-a / r2) - erfcx(-(a - s) / r2))
        right = np.where(d < 0, right_t, right)
        left = np.where(a < 0, left_t, left)
        return right, left

    def tail(self, z):
        z = np.asarray(z, dtype=float)
        right, left = self._branches(z)
        return np.maximum(np.where(z >= 0, right, left), 0.0)

    def left_limit_at_zero(self):
        return float(max(self._branches(np.float64(0.0))[1], 0.0))

    @property
    def total_intensity(self):
        return self.intensity

    def mean_exp_minus_one(self):
        return self.intensity * math.expm1(self.mean + 0.5 * self.std**2)

    def exp_moment(self, p):
        try:
            return self.intensity * math.expm1(p * self.mean + 0.5 * (p * self.std) ** 2)
        except OverflowError:
            return math.inf

    def truncated_mean(self):
        mu, s = self.mean, self.std
        a, b = (-1 - mu) / s, (1 - mu) / s
        phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        # E[Y 1{|Y|<=1}] for Y ~ N(mu, s^2)
        return self.intensity * (mu * (ndtr(b) - ndtr(a)) + s * (phi(a) - phi(b)))

    def sample(self, rng, n):
        return self.mean + self.std * rng.standard_normal(n)

    def scaled(self, factor):
        return Merton(factor * self.intensity, self.mean, self.std)

    def to_dict(self):
        return {"kind": self.kind, "intensity": self.intensity, "mean": self.mean, "std": self.std}


@dataclass(frozen=True, eq=False)
class Tabulated(LevyMeasure):
    """Piecewise-linear density on ``grid``; zero outside the grid."""

    grid: np.ndarray
    density_values: np.ndarray
    kind = "tabulated"

    def __post_init__(self):
        g = as_float_array(self.grid, "grid")
        f = as_float_array(self.density_values, "density_values")
        if g.size < 2 or g.size != f.size:
            raise ValueError("tabulated grid and density must have equal length >= 2")
        check_strictly_increasing(g, "tabulated grid")
        if np.any(f < 0):
            raise ValueError("tabulated density must be nonnegative")
        g.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density_values", f)
        # per-cell exact integrals of f and e^u f
        du = np.diff(g)
        slope = np.diff(f) / du
        object.__setattr__(self, "_slope", slope)
        object.__setattr__(self, "_cell_mass", 0.5 * du * (f[:-1] + f[1:]))
        object.__setattr__(
            self,
            "_cell_exp",
            np.exp(g[1:]) * (f[1:] - slope) - np.exp(g[:-1]) * (f[:-1] - slope),
        )

    def __eq__(self, other):
        return (
            isinstance(other, Tabulated)
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.density_values, other.density_values)
        )

    __hash__ = None

    def density(self, u):
        return np.interp(u, self.grid, self.density_values, left=0.0, right=0.0)

    def _partial(self, a, b, c):
        """Exact integrals of f and e^u f over [a, b] inside cell ``c``."""
        g, f, s = self.grid, self.density_values, self._slope[c]
        fa = f[c] + s * (a - g[c])
        fb = f[c] + s * (b - g[c])
        mass = 0.5 * (b - a) * (fa + fb)
        expo = np.exp(b) * (fb - s) - np.exp(a) * (fa - s)
        return mass, expo

    def _upper_integrals(self, z):
        """(int_z^inf f, int_z^inf e^u f) restricted to the grid, vectorized."""
        g = self.grid
        suffix_mass = np.concatenate((np.cumsum(self._cell_mass[::-1])[::-1], [0.0]))
        suffix_exp = np.concatenate((np.cumsum(self._cell_exp[::-1])[::-1], [0.0]))
        zc = np.clip(z, g[0], g[-1])
        c = np.clip(np.searchsorted(g, zc, side="right") - 1, 0, g.size - 2)
        pm, pe = self._partial(zc, g[c + 1], c)
        return pm + suffix_mass[c + 1], pe + suffix_exp[c + 1]

    def _lower_integrals(self, z):
        g = self.grid
        prefix_mass = np.concatenate(([0.0], np.cumsum(self._cell_mass)))
        prefix_exp = np.concatenate(([0.0], np.cumsum(self._cell_exp)))
        zc = np.clip(z, g[0], g[-1])
        c = np.clip(np.searchsorted(g, zc, side="right") - 1, 0, g.size - 2)
        pm, pe = self._partial(g[c], zc, c)
        return pm + prefix_mass[c], pe + prefix_exp[c]

    def tail(self, z):
        z = np.asarray(z, dtype=float)
        um, ue = self._upper_integrals(z)
        lm, le = self._lower_integrals(z)
        right = ue - np.exp(z) * um
        left = np.exp(z) * lm - le
        return np.maximum(np.where(z >= 0, right, left), 0.0)

    def left_limit_at_zero(self):
        lm, le = self._lower_integrals(np.array(0.0))
        return float(max(lm - le, 0.0))

    @property
    def total_intensity(self):
        return float(self._cell_mass.sum())

    def mean_exp_minus_one(self):
        return float(self._cell_exp.sum() - self._cell_mass.sum())

    def exp_moment(self, p):
        # 8-point Gauss-Legendre per cell; the density is linear there
        x, w = np.polynomial.legendre.leggauss(8)
        g = self.grid
        half = 0.5 * np.diff(g)[:, None]
        u = half * x + 0.5 * (g[1:] + g[:-1])[:, None]
        with np.errstate(over="ignore"):
            val = float(np.sum(half * w * np.expm1(p * u) * self.density(u)))
        return val if math.isfinite(val) else math.inf

    def truncated_mean(self):
        return adaptive_simpson_cells(lambda u: u * self.density(u), self.grid, -1.0, 1.0, 1e-12)

    def sample(self, rng, n):
        mass = self._cell_mass
        if mass.sum() == 0:
            raise ValueError("cannot sample from the zero measure")
        c = rng.choice(mass.size, size=n, p=mass / mass.sum())
        g, f, s = self.grid, self.density_values, self._slope
        target = rng.random(n) * mass[c]
        # solve f_c x + s x^2 / 2 = target for x in [0, du]
        fc, sc = f[c], s[c]
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(fc * fc + 2 * sc * target, 0.0))
            x = np.where(np.abs(sc) > 1e-300, 2 * target / (fc + disc), target / fc)
        x = np.nan_to_num(x, nan=0.0)
        return g[c] + np.clip(x, 0.0, g[c + 1] - g[c])

    def scaled(self, factor):
        return Tabulated(self.grid.copy(), factor * self.density_values)

    def to_dict(self):
        return {
            "kind": self.kind,
            "grid": self.grid.tolist(),
            "density": self.density_values.tolist(),
        }


ZERO_MEASURE = PointMasses()


def measure_from_dict(data: dict) -> LevyMeasure:
    data = dict(data)
    kind = data.pop("kind", None)
    builders: dict[str, Callable[..., LevyMeasure]] = {
        "point_masses": lambda sizes=(), weights=(): PointMasses(tuple(sizes), tuple(weights)),
        "kou": Kou,
        "merton": Merton,
        "tabulated": lambda grid, density: Tabulated(np.asarray(grid), np.asarray(density)),
        "zero": lambda: PointMasses(),
    }
    if kind not in builders:
        raise ValueError(f"unknown measure kind {kind!r}; expected one of {sorted(builders)}")
    try:
        return builders[kind](**data)
    except TypeError as exc:
        raise ValueError(f"bad fields for measure kind {kind!r}: {exc}") from None


# --------------------------------------------------------------------------- #
# Tails and tables
# --------------------------------------------------------------------------- #


def exp_double_tail(measure: LevyMeasure, z):
    """Exponential double tail ``psi(z)``; ``psi(0)`` is the right limit.

    Returns a float for scalar ``z`` and an array otherwise.
    """
    zarr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(zarr)):
        raise ValueError("z must be finite")
    out = measure.tail(zarr)
    return float(out) if np.ndim(z) == 0 else out


@dataclass(frozen=True, eq=False)
class ExpDoubleTailTable:
    """Tabulated tail on a z-grid; linear between nodes, zero outside.

    ``left_limit`` is ``psi(0-)``; the node at ``z = 0`` (if any) holds ``psi(0+)``.
    """

    z: np.ndarray
    values: np.ndarray
    left_limit: float = 0.0
    _neg: tuple = field(init=False, repr=False)

    def __post_init__(self):
        z = as_float_array(self.z, "z")
        v = as_float_array(self.values, "values")
        if z.size != v.size or z.size < 2:
            raise ValueError("table z and values must have equal length >= 2")
        check_strictly_increasing(z, "table z-grid")
        if np.any(v < 0) or self.left_limit < 0:
            raise ValueError("tail table values must be nonnegative")
        z.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "left_limit", float(self.left_limit))
        neg = z < 0
        zn, vn = z[neg], v[neg]
        if z[-1] >= 0 and np.any(z == 0.0):
            zn = np.append(zn, 0.0)
            vn = np.append(vn, self.left_limit)
        object.__setattr__(self, "_neg", (zn, vn))

    def __eq__(self, other):
        return (
            isinstance(other, ExpDoubleTailTable)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.values, other.values)
            and self.left_limit == other.left_limit
        )

    __hash__ = None

    @property
    def right_limit(self) -> float:
        return float(np.interp(0.0, self.z, self.values, left=0.0, right=0.0))

    def __call__(self, zq):
        zq = np.asarray(zq, dtype=float)
        out = np.interp(zq, self.z, self.values, left=0.0, right=0.0)
        zn, vn = self._neg
        if zn.size >= 2:
            neg = zq < 0
            out = np.where(neg, np.interp(zq, zn, vn, left=0.0, right=0.0), out)
        return out

    def scaled(self, factor: float) -> "ExpDoubleTailTable":
        return ExpDoubleTailTable(self.z.copy(), factor * self.values, factor * self.left_limit)

    def to_dict(self) -> dict:
        return {"z": self.z.tolist(), "values": self.values.tolist(), "left_limit": self.left_limit}

    @classmethod
    def from_dict(cls, data: dict) -> "ExpDoubleTailTable":
        return cls(np.asarray(data["z"]), np.asarray(data["values"]), float(data["left_limit"]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("z,psi\n")
            for zi, vi in zip(self.z, self.values):
                fh.write(f"{zi:.17g},{vi:.17g}\n")


def build_tail_table(measure: LevyMeasure, z_grid) -> ExpDoubleTailTable:
    """Tabulate ``exp_double_tail`` on a grid.

    ``z_grid`` is either an explicit increasing array or ``(z_min, z_max, n)``.
    """
    if isinstance(z_grid, tuple) and len(z_grid) == 3:
        z_min, z_max, n = z_grid
        z = np.linspace(float(z_min), float(z_max), int(n))
    else:
        z = as_float_array(z_grid, "z_grid")
    if not (z[0] < 0 < z[-1]):
        raise ValueError("tail grid must span both signs of z")
    return ExpDoubleTailTable(z, measure.tail(z), measure.left_limit_at_zero())


# --------------------------------------------------------------------------- #
# Quadrature and the payoff identity
# --------------------------------------------------------------------------- #


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float,
                     max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature with absolute tolerance ``tol``."""
    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    return _simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_step(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15 * tol:
        return left + right + delta / 15.0
    return (_simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


def adaptive_simpson_cells(f, nodes: np.ndarray, a: float, b: float, tol: float,
                           extra_breaks: Sequence[float] = ()) -> float:
    """Adaptive Simpson over ``[a, b]`` split at ``nodes`` and ``extra_breaks``."""
    pts = np.concatenate(([a, b], nodes[(nodes > a) & (nodes < b)],
                          [x for x in extra_breaks if a < x < b]))
    pts = np.unique(pts)
    width = b - a
    if width <= 0:
        return 0.0
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += adaptive_simpson(f, float(lo), float(hi), tol * (hi - lo) / width)
    return total


def lemma1_integrand(y: float, K: float, z):
    """Payoff combination ``(ye^z-K)^+ - e^z (y-K)^+ - K (e^z-1) 1{y>K}``.

    Evaluated in the equivalent form ``(K - ye^z)^+`` for ``y > K`` and
    ``(ye^z - K)^+`` otherwise, which avoids cancellation between the terms.
    """
    yez = y * np.exp(z)
    if y > K:
        return np.maximum(K - yez, 0.0)
    return np.maximum(yez - K, 0.0)


def lemma1_integrand_raw(y: float, K: float, z):
    """The combination term by term (for checking the rearranged form)."""
    ez = np.exp(z)
    ind = 1.0 if y > K else 0.0
    return np.maximum(y * ez - K, 0.0) - ez * max(y - K, 0.0) - K * (ez - 1.0) * ind


def lemma1_payoff_integral(measure: LevyMeasure, y: float, K: float) -> float:
    """Integrate the payoff combination of ``lemma1_integrand`` against ``measure``.

    Independent of the tail formulas: atoms are summed, parametric densities are
    integrated with QUADPACK, tabulated densities with adaptive Simpson.  The
    result should equal ``y * exp_double_tail(measure, log(K / y))``.
    """
    if not (y > 0 and K > 0):
        raise ValueError("y and K must be positive")
    kink = math.log(K / y)
    if isinstance(measure, PointMasses):
        sizes, weights = measure._arrays
        if sizes.size == 0:
            return 0.0
        terms = weights * lemma1_integrand(y, K, sizes)
        return math.fsum(terms.tolist())
    if isinstance(measure, Kou):
        if measure.intensity == 0:
            return 0.0
        measure._require_right_branch()
        return _quad_real_line(_guarded(measure, y, K), [0.0, kink])
    if isinstance(measure, Merton):
        if measure.intensity == 0:
            return 0.0
        return _quad_real_line(_guarded(measure, y, K), [measure.mean, kink])
    if isinstance(measure, Tabulated):
        g = measure.grid
        f = lambda u: float(lemma1_integrand(y, K, u) * measure.density(u))
        return adaptive_simpson_cells(f, g, float(g[0]), float(g[-1]), 1e-9 * max(y, K) / 100,
                                      extra_breaks=[kink])
    raise TypeError(f"unsupported measure type {type(measure).__name__}")


def _guarded(measure, y, K):
    def f(u):
        dens = float(measure.density(u))
        # density underflow beats any exponential growth of the payoff
        return 0.0 if dens == 0.0 else float(lemma1_integrand(y, K, u)) * dens
    return f


def _quad_real_line(f, breaks) -> float:
    pts = sorted(set(breaks))
    pieces = [(-np.inf, pts[0])] + list(zip(pts[:-1], pts[1:])) + [(pts[-1], np.inf)]
    total = []
    for lo, hi in pieces:
        if lo == hi:
            continue
        with warnings.catch_warnings():
            # the requested tolerance sits at the rounding floor for tiny integrals
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=2e-14, limit=400)
        total.append(val)
    return math.fsum(total)


# --------------------------------------------------------------------------- #
# Integrability
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class DiagnosticReport:
    """Pass/fail per named condition; failures are data, not exceptions."""

    conditions: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failures(self) -> list:
        return [c for c in self.conditions if not c.passed]

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        return "\n".join(
            f"{c.name}: {'pass' if c.passed else 'FAIL'} ({c.detail})" for c in self.conditions
        )


IntegrabilityReport = DiagnosticReport


def check_integrability(measure: LevyMeasure) -> DiagnosticReport:
    """Check the exponential-moment conditions the forward equation needs.

    * ``exp_tail``: ``int_{y>1} e^y m(dy) < inf`` (tail is finite),
    * ``H``: ``int (e^y - 1)^2 m(dy) < inf``,
    * ``H'2``: ``int_{y>1} e^{2y} m(dy) < inf``.
    """
    h_name = "int (e^y-1)^2 m(dy)"
    h2_name = "int_(y>1) e^(2y) m(dy)"
    if isinstance(measure, Kou):
        e1 = measure.eta_up
        active = measure.intensity * measure.p_up > 0
        ok1 = (not active) or e1 > 1
        ok2 = (not active) or e1 > 2
        if ok2:
            lam, p, e2 = measure.intensity, measure.p_up, measure.eta_down
            up = p * (e1 / (e1 - 2) - 2 * e1 / (e1 - 1) + 1) if active else 0.0
            down = (1 - p) * (e2 / (e2 + 2) - 2 * e2 / (e2 + 1) + 1)
            hval = f"{h_name} = {lam * (up + down):.6g}"
        else:
            hval = f"{h_name} diverges: requires eta_up > 2, got {e1}"
        return IntegrabilityReport((
            ConditionResult("exp_tail", ok1, "requires eta_up > 1" if not ok1 else "finite"),
            ConditionResult("H", ok2, hval),
            ConditionResult("H'2", ok2, f"{h2_name} finite iff eta_up > 2 (eta_up={e1})"),
        ))
    if isinstance(measure, Merton):
        lam, mu, s = measure.intensity, measure.mean, measure.std
        hv = lam * (math.exp(2 * mu + 2 * s * s) - 2 * math.exp(mu + 0.5 * s * s) + 1)
        return IntegrabilityReport((
            ConditionResult("exp_tail", True, "Gaussian tails"),
            ConditionResult("H", True, f"{h_name} = {hv:.6g}"),
            ConditionResult("H'2", True, "Gaussian tails"),
        ))
    if isinstance(measure, PointMasses):
        y, w = measure._arrays
        hv = float(np.sum(w * np.expm1(y) ** 2))
        return IntegrabilityReport((
            ConditionResult("exp_tail", True, "finite atom list"),
            ConditionResult("H", True, f"{h_name} = {hv:.6g}"),
            ConditionResult("H'2", True, "finite atom list"),
        ))
    if isinstance(measure, Tabulated):
        g = measure.grid
        hv = adaptive_simpson_cells(lambda u: math.expm1(u) ** 2 * float(measure.density(u)),
                                    g, float(g[0]), float(g[-1]), 1e-9)
        h2 = 0.0
        if g[-1] > 1:
            h2 = adaptive_simpson_cells(lambda u: math.exp(2 * u) * float(measure.density(u)),
                                        g, max(1.0, float(g[0])), float(g[-1]), 1e-9)
        ok = math.isfinite(hv) and math.isfinite(h2)
        return IntegrabilityReport((
            ConditionResult("exp_tail", ok, "compact tabulated support"),
            ConditionResult("H", ok, f"{h_name} = {hv:.6g} over grid support"),
            ConditionResult("H'2", ok, f"{h2_name} = {h2:.6g} over grid support"),
        ))
    raise TypeError(f"unsupported measure type {type(measure).__name__}")
