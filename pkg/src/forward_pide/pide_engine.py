"""Forward PIDE solver for call surfaces in log-strike coordinates.

With ``k = ln K`` and ``c(T, k) = C(T, e^k)`` the forward equation reads

    c_T = a (c_kk - c_k) - r c_k + J[c],   a = sigma(T, k)^2 / 2,
    J[c](k) = int chi_{T,v}(k - v) (c_vv - c_v)(v) dv,

where ``(c_vv - c_v) dv = K dC_K`` is the strike density measure weighted by
the strike.  Diffusion and drift are implicit (Crank-Nicolson with
implicit-Euler startup); the nonlocal term is explicit with a second-order
predictor-corrector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from ._validation import as_float_array
from .grid import GridSpec, time_steps
from .levy_tails import DiagnosticReport, ExpDoubleTailTable
from .models import (
    EffectiveCoefficients,
    RateCurve,
    StateFreeTail,
    TailSlice,
    effective_coefficients,
    validate_model,
)


class StepSizeError(ValueError):
    """The explicit jump term is unstable for the requested time step."""

    def __init__(self, message: str, suggested_substeps: int):
        super().__init__(message)
        self.suggested_substeps = int(suggested_substeps)


class SolverDivergenceError(RuntimeError):
    """The solution became non-finite."""


class ModelValidationError(ValueError):
    def __init__(self, report: DiagnosticReport):
        names = ", ".join(c.name for c in report.failures())
        super().__init__(f"model fails assumption(s): {names}\n{report.to_text()}")
        self.report = report


# --------------------------------------------------------------------------- #
# Surfaces
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class CallSurface:
    """Call prices ``values[i, j] = C(maturities[i], exp(k[j]))``."""

    spot: float
    rates: RateCurve
    maturities: np.ndarray
    k: np.ndarray
    values: np.ndarray
    _splines: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        mats = as_float_array(self.maturities, "maturities")
        k = as_float_array(self.k, "k")
        vals = as_float_array(self.values, "values", ndim=2)
        if vals.shape != (mats.size, k.size):
            raise ValueError("values must have shape (len(maturities), len(k))")
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "spot", float(self.spot))

    @property
    def strikes(self) -> np.ndarray:
        return np.exp(self.k)

    def discount(self, T: float) -> float:
        return self.rates.discount(T)

    def _row_spline(self, i: int) -> CubicSpline:
        if i not in self._splines:
            self._splines[i] = CubicSpline(self.k, self.values[i])
        return self._splines[i]

    def price(self, T: float, K) -> np.ndarray:
        """Cubic spline in log-strike on the maturity rows, linear in ``T`` between rows."""
        K = np.asarray(K, dtype=float)
        kq = np.log(K)
        if np.any(kq < self.k[0]) or np.any(kq > self.k[-1]):
            raise ValueError("strike outside the surface grid")
        mats = self.maturities
        if T < mats[0] - 1e-12 or T > mats[-1] + 1e-12:
            raise ValueError(f"maturity {T} outside [{mats[0]}, {mats[-1]}]")
        i = int(np.argmin(np.abs(mats - T)))
        if abs(mats[i] - T) <= 1e-12:
            return self._row_spline(i)(kq)
        hi = int(np.searchsorted(mats, T))
        lo = hi - 1
        w = (T - mats[lo]) / (mats[hi] - mats[lo])
        return (1 - w) * self._row_spline(lo)(kq) + w * self._row_spline(hi)(kq)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            write_surface_csv(fh, self.maturities, self.strikes, self.values)

    def to_dict(self) -> dict:
        return {
            "spot": self.spot,
            "rates": self.rates.to_dict(),
            "maturities": self.maturities.tolist(),
            "k": self.k.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CallSurface":
        return cls(float(data["spot"]), RateCurve.from_dict(data["rates"]),
                   np.asarray(data["maturities"]), np.asarray(data["k"]),
                   np.asarray(data["values"]))


def write_surface_csv(fh, maturities, strikes, values, header: str = "T,K,C") -> None:
    fh.write(header + "\n")
    for T, row in zip(maturities, values):
        for K, c in zip(strikes, row):
            fh.write(f"{T:.17g},{K:.17g},{c:.17g}\n")


# --------------------------------------------------------------------------- #
# Jump operator
# --------------------------------------------------------------------------- #


def strike_stencil(h: float, stencil: str = "price") -> tuple[float, float, float]:
    """Weights ``(lower, centre, upper)`` mapping ``c`` to the node masses of
    ``(c_vv - c_v) dv``.

    ``price`` is the exact strike-space second divided difference times the
    strike; ``log`` is the central difference of the log-strike form.
    """
    if stencil == "price":
        up = 1.0 / math.expm1(h)
        lo = -1.0 / math.expm1(-h)
    elif stencil == "log":
        up = 1.0 / h - 0.5
        lo = 1.0 / h + 0.5
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    return lo, -(lo + up), up


def node_masses(u: np.ndarray, h: float, stencil: str = "price") -> np.ndarray:
    """Masses at interior nodes 1..N-2 (length N-2)."""
    lo, mid, up = strike_stencil(h, stencil)
    return lo * u[:-2] + mid * u[1:-1] + up * u[2:]


def offset_weights(table: ExpDoubleTailTable, h: float, n: int, zero_offset: str = "split") -> np.ndarray:
    """Tail sampled at offsets ``d h``, ``d = -(n-1)..(n-1)``.

    ``zero_offset='split'`` uses the cell average of the two one-sided limits
    (each side weighted by its share of the strike mass), which keeps the
    quadrature second order when the tail jumps at zero; ``'right'`` uses the
    right limit.
    """
    d = h * np.arange(-(n - 1), n)
    g = np.asarray(table(d), dtype=float)
    if zero_offset == "split":
        theta = 1.0 / (1.0 + math.exp(h))
        g[n - 1] = theta * table.right_limit + (1.0 - theta) * table.left_limit
    elif zero_offset == "upwind":
        g[n - 1] = max(table.right_limit, table.left_limit)
    elif zero_offset != "right":
        raise ValueError("zero_offset must be 'split', 'upwind' or 'right'")
    return g


class _Convolver:
    """FFT linear convolution of node masses against a fixed weight vector."""

    def __init__(self, g: np.ndarray, n: int):
        self.n = n
        self.size = next_fast_len(len(g) + n - 2, real=True)
        self.g_hat = rfft(g, self.size)

    def __call__(self, a: np.ndarray) -> np.ndarray:
        full = irfft(rfft(a, self.size) * self.g_hat, self.size)
        n = self.n
        out = np.zeros(n)
        out[1:-1] = full[n - 1: 2 * n - 3]
        return out


def _direct_state_free(a: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    idx = np.arange(1, n - 1)
    # J_i = sum_j a_j g[(i - j) + n - 1], j over interior nodes
    for jj, aj in enumerate(a):
        j = jj + 1
        if aj != 0.0:
            out[1:-1] += aj * g[idx - j + n - 1]
    return out


def state_dependent_matrix(slice_: TailSlice, k: np.ndarray, zero_offset: str = "split") -> np.ndarray:
    """Dense weights ``W[i, j] = scale(k_j) * chi(k_i - k_j)`` over interior nodes."""
    n = k.size
    h = (k[-1] - k[0]) / (n - 1)
    bins = slice_.bin_of(k[1:-1])
    rows = np.arange(1, n - 1)[:, None]
    cols = np.arange(1, n - 1)[None, :]
    offs = rows - cols + n - 1
    W = np.zeros((n - 2, n - 2))
    for tid, table in enumerate(slice_.tables):
        g = offset_weights(table, h, n, zero_offset)
        for b in np.unique(bins[slice_.table_ids[bins] == tid]):
            mask = bins == b
            W[:, mask] = slice_.scales[b] * g[offs[:, mask]]
    return W


def apply_jump_operator(values, tail, k=None, *, h=None, method: str = "auto",
                        stencil: str = "price", zero_offset: str = "right") -> np.ndarray:
    """Evaluate the nonlocal term on one slice.

    ``tail`` is an :class:`ExpDoubleTailTable` (state free) or a
    :class:`TailSlice` (state dependent); ``None`` gives zero.  ``method`` is
    ``fft`` or ``direct`` for state-free tails; state-dependent tails always
    use the direct double sum.  Boundary entries of the result are zero.
    """
    u = as_float_array(values, "slice")
    n = u.size
    if k is not None:
        k = as_float_array(k, "k")
        if k.size != n:
            raise ValueError(f"slice has {n} nodes but k-grid has {k.size}")
        h = (k[-1] - k[0]) / (n - 1)
    if h is None:
        raise ValueError("give either the k-grid or the spacing h")
    if n < 3:
        raise ValueError("need at least 3 nodes")
    if tail is None:
        return np.zeros(n)
    a = node_masses(u, h, stencil)
    if isinstance(tail, TailSlice):
        if k is None:
            raise ValueError("state-dependent tails need the k-grid")
        out = np.zeros(n)
        out[1:-1] = state_dependent_matrix(tail, k, zero_offset) @ a
        return out
    g = offset_weights(tail, h, n, zero_offset)
    if method in ("auto", "fft"):
        return _Convolver(g, n)(a)
    if method == "direct":
        return _direct_state_free(a, g, n)
    raise ValueError(f"unknown method {method!r}")


def _stencil_matrix(n: int, h: float, stencil: str) -> np.ndarray:
    lo, mid, up = strike_stencil(h, stencil)
    D = np.zeros((n - 2, n))
    r = np.arange(n - 2)
    D[r, r] = lo
    D[r, r + 1] = mid
    D[r, r + 2] = up
    return D


def jump_operator_norm(g_or_W, n: int, h: float, stencil: str = "price") -> float:
    """Max-row-sum norm of ``u -> J[u]``."""
    lo, mid, up = strike_stencil(h, stencil)
    if g_or_W.ndim == 1:
        # Toeplitz upper bound: sum_d |(g * stencil)_d|
        comb = np.convolve(g_or_W, [up, mid, lo])
        return float(np.abs(comb).sum())
    return float(np.abs(g_or_W @ _stencil_matrix(n, h, stencil)).sum(axis=1).max())


# --------------------------------------------------------------------------- #
# Solver
# --------------------------------------------------------------------------- #


def _step_rate(rates: RateCurve, t: float, dt: float, implicit_euler: bool) -> float:
    """Rate for one step chosen so the discounted intrinsic ``S - K D(T)`` is
    advanced exactly by the time-stepping rule (differs from the average
    rate by O(dt^2) for Crank-Nicolson)."""
    R = rates.integral_between(t, t + dt)
    if implicit_euler:
        return math.expm1(R) / dt
    return 2.0 * math.tanh(0.5 * R) / dt


def _fitted_rows(sigma: np.ndarray, r: float, K: np.ndarray):
    """Tridiagonal weights of ``sigma^2 K^2 C_KK / 2 - r K C_K`` at interior nodes.

    Written on slopes so linear functions of ``K`` (the intrinsic value) are
    reproduced exactly.  The diffusion is exponentially fitted, which keeps
    the matrix monotone and degrades to upwinding when ``sigma = 0``.
    """
    dm = K[1:-1] - K[:-2]
    dp = K[2:] - K[1:-1]
    tot = dm + dp
    w_m, w_p = dp / tot, dm / tot
    drift = r * K[1:-1]
    diff = sigma**2 * K[1:-1] ** 2 / tot
    # diffusion that exactly balances the downwind drift weight
    balance = drift * w_p
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(diff > 0, balance / np.where(diff > 0, diff, 1.0), np.inf)
        ratio = np.where(pe > 30, pe, pe / np.tanh(pe))
        fitted = np.where(pe == np.inf, balance, np.where(pe < 1e-8, diff, diff * ratio))
    fitted = np.maximum(fitted, balance)
    lo = fitted / dm + drift * w_m / dm
    up = fitted / dp - drift * w_p / dp
    return lo, -(lo + up), up


# cell Peclet number above which the compact rows are not used
_COMPACT_MAX_PECLET = 0.5


def _compact_rows(sigma: np.ndarray, r: float, h: float):
    """Fourth-order compact rows ``M c_T = L c`` of ``a (c_kk - c_k) - r c_k``.

    Coefficients are frozen per node.  The drift weight is adjusted at
    O(h^4) so that ``e^k`` (hence the discounted intrinsic) is reproduced
    exactly.  Returns ``(mask, M, L)`` where ``mask`` marks nodes where the
    compact form is valid.
    """
    a = 0.5 * sigma**2
    b = a + r
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(a > 0, b * h / (2 * np.where(a > 0, a, 1.0)), np.inf)
        mask = pe <= _COMPACT_MAX_PECLET
        a_s = np.where(mask, a, 1.0)
        A = a_s + h * h * b * b / (12 * a_s)
        m_lo = 1.0 / 12 + b * h / (24 * a_s)
        m_up = 1.0 / 12 - b * h / (24 * a_s)
    m_di = np.full_like(A, 10.0 / 12)
    e2 = 4 * math.sinh(0.5 * h) ** 2 / h**2
    e1 = math.sinh(h) / h
    me = m_lo * math.exp(-h) + m_di + m_up * math.exp(h)
    B = (A * e2 + r * me) / e1
    lo = A / h**2 + B / (2 * h)
    up = A / h**2 - B / (2 * h)
    return mask, (m_lo, m_di, m_up), (lo, -2 * A / h**2, up)


def _spatial_rows(sigma: np.ndarray, r: float, K: np.ndarray, h: float, scheme: str):
    """Mass and stiffness tridiagonals ``(M, L)`` for interior nodes."""
    lo, di, up = _fitted_rows(sigma, r, K)
    one = np.ones_like(lo)
    M = (0 * one, one, 0 * one)
    L = (lo, di, up)
    if scheme == "fitted":
        return M, L, np.zeros(lo.size, dtype=bool)
    mask, Mc, Lc = _compact_rows(sigma, r, h)
    M = tuple(np.where(mask, c, f) for c, f in zip(Mc, M))
    L = tuple(np.where(mask, c, f) for c, f in zip(Lc, L))
    return M, L, mask


def _m4(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    inner = 1 - 2.5 * x**2 + 1.5 * x**3
    outer = 0.5 * (2 - x) ** 2 * (1 - x)
    return np.where(x <= 1, inner, np.where(x <= 2, outer, 0.0))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def smoothed_payoff(spot: float, k: np.ndarray, h: float) -> np.ndarray:
    """Payoff projected with the fourth-order interpolating kernel near the kink.

    Identical to ``(spot - K)^+`` more than two cells away from ``ln spot``.
    The integrand is smooth between the kernel knots and the kink, so each
    piece is integrated by Gauss-Legendre.
    """
    u = np.maximum(spot - np.exp(k), 0.0)
    k0 = math.log(spot)
    for i in np.flatnonzero(np.abs(k - k0) < 2 * h):
        kink = (k0 - k[i]) / h
        cuts = sorted({-2.0, -1.0, 0.0, 1.0, 2.0, min(max(kink, -2.0), 2.0)})
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi <= lo:
                continue
            x = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
            f = _m4(x) * np.maximum(spot - np.exp(k[i] + x * h), 0.0)
            total += 0.5 * (hi - lo) * float(np.dot(_GL_WEIGHTS, f))
        u[i] = total
    return u


def _zero_offset_gap(item, k: np.ndarray, h: float):
    """Per interior node: the upwind-minus-split diagonal weight and the size of
    the jump of the tail at zero (a drift, in log-strike per unit time)."""
    theta = 1.0 / (1.0 + math.exp(h))

    def one(table):
        hi, lo = table.right_limit, table.left_limit
        return max(hi, lo) - (theta * hi + (1.0 - theta) * lo), abs(hi - lo)

    if isinstance(item, ExpDoubleTailTable):
        gap, drift = one(item)
        return np.full(k.size - 2, gap), np.full(k.size - 2, drift)
    bins = item.bin_of(k[1:-1])
    per_table = np.array([one(t) for t in item.tables])
    scale = item.scales[bins]
    ids = item.table_ids[bins]
    return scale * per_table[ids, 0], scale * per_table[ids, 1]


class _JumpTerm:
    """Explicit jump term.  ``zero_offset='auto'`` upwinds the zero-offset weight
    on rows where the jump drift dominates the diffusion (cell Peclet above the
    compact-row limit); elsewhere the second-order split value is kept."""

    def __init__(self, coeffs: EffectiveCoefficients, h: float, method: str, stencil: str,
                 zero_offset: str):
        if zero_offset not in ("auto", "split", "upwind", "right"):
            raise ValueError("zero_offset must be 'auto', 'split', 'upwind' or 'right'")
        self.coeffs = coeffs
        self.k = coeffs.k
        self.n = coeffs.k.size
        self.h = h
        self.method = method
        self.stencil = stencil
        self.auto = zero_offset == "auto"
        self.zero_offset = "split" if self.auto else zero_offset
        self._ops: dict[int, tuple] = {}
        self._by_id: dict[int, tuple] = {}
        self._corr: dict[int, np.ndarray] = {}

    def operator(self, row: int):
        """``(apply, norm)`` for coefficient row ``row``; ``None`` if no jumps."""
        tail = self.coeffs.jump_tail
        if tail is None:
            return None
        if row in self._ops:
            return self._ops[row]
        item = tail.tables[row] if isinstance(tail, StateFreeTail) else tail.slices[row]
        key = id(item)
        if key not in self._by_id:
            n, h = self.n, self.h
            # the norm bounds the upwinded operator as well
            bound = "upwind" if self.auto else self.zero_offset
            if isinstance(item, ExpDoubleTailTable):
                g = offset_weights(item, h, n, self.zero_offset)
                norm = jump_operator_norm(offset_weights(item, h, n, bound), n, h, self.stencil)
                if self.method == "direct":
                    def apply(a, g=g):
                        return _direct_state_free(a, g, n)
                else:
                    apply = _Convolver(g, n)
            else:
                W = state_dependent_matrix(item, self.k, self.zero_offset)
                norm = jump_operator_norm(state_dependent_matrix(item, self.k, bound), n, h, self.stencil)

                def apply(a, W=W):
                    out = np.zeros(n)
                    out[1:-1] = W @ a
                    return out
            self._by_id[key] = (apply, norm)
        self._ops[row] = self._by_id[key]
        return self._ops[row]

    def correction(self, row: int) -> np.ndarray | None:
        if not self.auto or self.operator(row) is None:
            return None
        if row not in self._corr:
            tail = self.coeffs.jump_tail
            item = tail.tables[row] if isinstance(tail, StateFreeTail) else tail.slices[row]
            gap, drift = _zero_offset_gap(item, self.k, self.h)
            var = self.coeffs.local_vol[row, 1:-1] ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                pe = np.where(var > 0, drift * self.h / np.where(var > 0, var, 1.0), np.inf)
            upwind = (pe > _COMPACT_MAX_PECLET) & (drift > 0)
            self._corr[row] = np.where(upwind, gap, 0.0) if np.any(upwind) else None
        return self._corr[row]

    def __call__(self, row: int, u: np.ndarray) -> np.ndarray:
        return self.apply_masses(row, node_masses(u, self.h, self.stencil))

    def apply_masses(self, row: int, a: np.ndarray) -> np.ndarray:
        op = self.operator(row)
        if op is None:
            return np.zeros(self.n)
        out = op[0](a)
        corr = self.correction(row)
        if corr is not None:
            out[1:-1] += corr * a
        return out


def _check_coefficients(coeffs: EffectiveCoefficients, grid: GridSpec) -> None:
    if coeffs.k.size != grid.n_k or not np.allclose(coeffs.k, grid.k, rtol=0, atol=1e-12):
        raise ValueError("coefficient k-grid does not match the solver grid")


def solve_forward(coeffs: EffectiveCoefficients, spot: float, grid: GridSpec, *,
                  method: str = "auto", stencil: str = "price", zero_offset: str = "auto",
                  rannacher_steps: int = 2, scheme: str = "auto") -> CallSurface:
    """March the forward equation from ``C(0, K) = (spot - K)^+`` through ``grid.maturities``.

    ``scheme='auto'`` uses fourth-order compact rows wherever the cell
    Peclet number is small (with a smoothed payoff when they cover the kink)
    and exponentially fitted rows elsewhere; ``'fitted'`` forces the latter.
    Raises :class:`StepSizeError` when ``dt * |J| > 1`` for some step.
    """
    if scheme not in ("auto", "fitted"):
        raise ValueError("scheme must be 'auto' or 'fitted'")
    spot = float(spot)
    if not spot > 0:
        raise ValueError("spot must be positive")
    grid.check_spot(spot)
    _check_coefficients(coeffs, grid)
    k, h, n = grid.k, grid.h, grid.n_k
    K = np.exp(k)
    rates = coeffs.rates
    jump = _JumpTerm(coeffs, h, method, stencil, zero_offset)
    steps = time_steps(grid, rannacher_steps)

    # stability of the explicit jump term
    worst, worst_dt = 0.0, 0.0
    for st in steps:
        op = jump.operator(coeffs.row(st.start))
        if op is not None and st.dt * op[1] > worst:
            worst, worst_dt = st.dt * op[1], st.dt
    if worst > 1.0:
        factor = worst / worst_dt * max(np.diff((0.0,) + grid.maturities))
        raise StepSizeError(
            f"explicit jump term unstable: dt * |J| = {worst:.3g} > 1; "
            f"increase substeps per maturity interval to at least {math.ceil(factor)}",
            math.ceil(factor))

    payoff = np.maximum(spot - K, 0.0)
    out = np.empty((len(grid.maturities), n))
    for i, T in enumerate(grid.maturities):
        if T == 0.0:
            out[i] = payoff
    u = payoff
    if steps and scheme == "auto":
        first = steps[0]
        _, _, mask = _spatial_rows(coeffs.local_vol[coeffs.row(0.0), 1:-1],
                                   _step_rate(rates, 0.0, first.dt, first.implicit_euler), K, h, scheme)
        near = np.abs(k[1:-1] - math.log(spot)) < 3 * h
        if np.all(mask[near]):
            u = smoothed_payoff(spot, k, h)
    # columns: the call, and the put side C - (spot - K D(t)).  The rows advance
    # the discounted intrinsic exactly and the jump term annihilates it, so each
    # column is exact in exact arithmetic; reading the put column below spot keeps
    # the rounding of deep in-the-money values from accumulating.
    U = np.column_stack((u, u - (spot - K)))
    put_side = K < spot
    for st in steps:
        row = coeffs.row(st.start)
        dt = st.dt
        r = _step_rate(rates, st.start, dt, st.implicit_euler)
        (m_lo, m_di, m_up), (lo, di, up), _ = _spatial_rows(
            coeffs.local_vol[row, 1:-1], r, K, h, scheme)
        t_new = st.start + dt
        d_new = rates.discount(t_new)
        edges = np.array([[spot - K[0] * d_new, 0.0], [0.0, K[-1] * d_new - spot]])
        theta = 1.0 if st.implicit_euler else 0.5

        c_lo, c_di, c_up = m_lo - theta * dt * lo, m_di - theta * dt * di, m_up - theta * dt * up
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = c_up[:-1]
        ab[1, :] = c_di
        ab[2, :-1] = c_lo[1:]
        e = 1.0 - theta
        base = (((m_lo + e * dt * lo)[:, None] * U[:-2] + (m_di + e * dt * di)[:, None] * U[1:-1]
                 + (m_up + e * dt * up)[:, None] * U[2:]))
        base[0] -= c_lo[0] * edges[0]
        base[-1] -= c_up[-1] * edges[1]

        def mass(v):
            return m_lo * v[:-2] + m_di * v[1:-1] + m_up * v[2:]

        def jump_term(V):
            a = np.where(put_side[1:-1], node_masses(V[:, 1], h, stencil), node_masses(V[:, 0], h, stencil))
            return mass(jump.apply_masses(row, a))[:, None]

        J0 = jump_term(U)
        if st.implicit_euler:
            inner = solve_banded((1, 1), ab, base + dt * J0)
        else:
            pred = solve_banded((1, 1), ab, base + dt * J0)
            U_star = np.vstack((edges[0], pred, edges[1]))
            inner = solve_banded((1, 1), ab, base + 0.5 * dt * (J0 + jump_term(U_star)))
        U = np.vstack((edges[0], inner, edges[1]))
        if not np.all(np.isfinite(U)):
            raise SolverDivergenceError(f"non-finite values at T = {t_new:.6g}")
        if st.maturity_index >= 0:
            c = U[:, 0].copy()
            c[put_side] = (spot - K[put_side] * d_new) + U[put_side, 1]
            c[0], c[-1] = edges[0, 0], 0.0
            out[st.maturity_index] = c
    return CallSurface(spot, rates, np.asarray(grid.maturities), k, out)


def price_surface(model, grid: GridSpec, **kwargs) -> CallSurface:
    """Validate ``model``, build its coefficients and solve."""
    report = validate_model(model)
    if not report.passed:
        raise ModelValidationError(report)
    return solve_forward(effective_coefficients(model, grid), model.spot, grid, **kwargs)


# --------------------------------------------------------------------------- #
# Surface diagnostics
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ValidationCategory:
    name: str
    passed: bool
    worst: float
    location: tuple | None
    nodes: tuple = ()

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        loc = "" if self.location is None else f" at (T_index={self.location[0]}, k_index={self.location[1]})"
        return f"{self.name}: {status} worst_violation={self.worst:.3e}{loc}"


@dataclass(frozen=True)
class ValidationReport:
    categories: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.categories)

    def __getitem__(self, name: str) -> ValidationCategory:
        for c in self.categories:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        return "\n".join(c.line() for c in self.categories) + "\n"


def _category(name: str, violation: np.ndarray, tol: float, offset: int = 0) -> ValidationCategory:
    """``violation`` > 0 where the constraint is broken; column index shifted by ``offset``."""
    if violation.size == 0:
        return ValidationCategory(name, True, 0.0, None)
    flat = int(np.argmax(violation))
    i, j = np.unravel_index(flat, violation.shape)
    worst = float(max(violation[i, j], 0.0))
    bad = np.argwhere(violation > tol)
    nodes = tuple((int(a), int(b) + offset) for a, b in bad[:50])
    return ValidationCategory(name, worst <= tol, worst, (int(i), int(j) + offset) if worst > 0 else None, nodes)


_ROUNDING_ULPS = 16


def validate_surface(surface: CallSurface, tol: float = 1e-9, martingale_tol: float = 1e-12) -> ValidationReport:
    """No-arbitrage checks; each category reports its worst violation.

    Slope and convexity violations are measured after removing a rounding
    allowance of a few ulps of the spot per difference quotient, which only
    matters at strikes far below the spot.
    """
    C = surface.values
    K = surface.strikes
    S = surface.spot
    D = np.array([surface.discount(T) for T in surface.maturities])[:, None]
    dK = np.diff(K)
    slope = np.diff(C, axis=1) / dK
    convex = np.diff(slope, axis=1)
    intrinsic = np.maximum(S - K[None, :] * D, 0.0)
    # difference quotients of values near S carry ~ulp(S)/dK of rounding at tiny strikes
    ulp = _ROUNDING_ULPS * np.finfo(float).eps * max(S, float(np.max(np.abs(C))))
    slope_slack = 2 * ulp / dK
    convex_slack = slope_slack[:-1] + slope_slack[1:]
    cats = [
        _category("monotonicity", np.maximum(slope, -D - slope) - slope_slack, tol),
        _category("convexity", -convex - convex_slack, tol, offset=1),
        _category("upper_bound", C - S, tol),
        _category("lower_bound", intrinsic - C, tol),
        _category("martingale", np.abs(C[:, :1] + K[0] * D - S) / S, martingale_tol),
    ]
    return ValidationReport(tuple(cats))


# --------------------------------------------------------------------------- #
# Local volatility round trip
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DupireExtraction:
    maturities: np.ndarray
    k: np.ndarray
    sigma: np.ndarray
    flagged: np.ndarray

    @property
    def strikes(self) -> np.ndarray:
        return np.exp(self.k)


def dupire_roundtrip_extract(surface: CallSurface, curvature_floor: float = 1e-8) -> DupireExtraction:
    """Local volatility from a call surface by central differences.

    ``sigma^2 = 2 (C_T + r K C_K) / (K^2 C_KK)`` with three-point
    differences in ``K`` (exact on linear pieces of the surface).  Nodes with
    ``K^2 C_KK <= curvature_floor * spot`` (no strike density) are flagged
    and left as NaN.  Values are returned on interior maturities and strikes.
    """
    T = surface.maturities
    if T.size < 3:
        raise ValueError("need at least three maturities")
    k = surface.k
    K = surface.strikes
    C = surface.values
    cT = (C[2:, 1:-1] - C[:-2, 1:-1]) / (T[2:] - T[:-2])[:, None]
    mid = C[1:-1]
    dl, du = K[1:-1] - K[:-2], K[2:] - K[1:-1]
    sl = (mid[:, 1:-1] - mid[:, :-2]) / dl
    su = (mid[:, 2:] - mid[:, 1:-1]) / du
    cK = (du * sl + dl * su) / (dl + du)
    cKK = 2 * (su - sl) / (dl + du)
    r = np.array([surface.rates(t) for t in T[1:-1]])[:, None]
    Km = K[1:-1]
    dens = Km**2 * cKK
    flagged = dens <= curvature_floor * surface.spot
    with np.errstate(divide="ignore", invalid="ignore"):
        var = 2 * (cT + r * Km * cK) / dens
    sigma = np.where(flagged | (var < 0), np.nan, np.sqrt(np.abs(var)))
    return DupireExtraction(T[1:-1], k[1:-1], sigma, flagged)
