"""Monte Carlo pricing and Markovian projection for the model zoo.

Paths are simulated in fixed-size blocks.  Block ``b`` of stream ``s`` draws from
``SeedSequence(master_seed, spawn_key=(s, b))`` so every path's random stream
depends only on the seed and its index, never on the number of threads.
Block results are combined in block order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .levy_tails import ExpDoubleTailTable, LevyMeasure, _atom_tail
from .models import (
    Basket,
    EffectiveCoefficients,
    JumpDiffusion,
    LocalVol,
    PiecewiseConstant,
    PureJumpLocalLevy,
    SquareRootProcess,
    StateDependentTail,
    StateFreeTail,
    StochVolJump,
    TailSlice,
    TimeChangedLevy,
    offset_tail_table,
)


class UnsupportedModelError(ValueError):
    """The oracle cannot simulate this model (for example infinite activity)."""


class ProjectionError(ValueError):
    """Too few populated bins to estimate conditional expectations."""


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 100_000
    n_steps: int = 100
    master_seed: int = 0
    antithetic: bool = False
    block_size: int = 8192

    def __post_init__(self):
        for name in ("n_paths", "n_steps", "master_seed", "block_size"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "antithetic", bool(self.antithetic))
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        if self.n_steps < 50:
            raise ValueError("n_steps (per year) must be at least 50")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError("block_size must be an even integer >= 2")

    def blocks(self) -> list[tuple[int, int]]:
        """``(block_index, n_paths_in_block)``; antithetic blocks hold pairs."""
        full, rest = divmod(self.n_paths, self.block_size)
        out = [(b, self.block_size) for b in range(full)]
        if rest:
            out.append((full, rest + (rest % 2 if self.antithetic else 0)))
        return out

    def rng(self, block: int, stream: int = 0) -> np.random.Generator:
        """Stream 0 prices, stream 1 projects; the two never share draws."""
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(self.master_seed, spawn_key=(stream, block))))

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "master_seed": self.master_seed,
            "antithetic": self.antithetic,
            "block_size": self.block_size,
        }


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_effective: int


@dataclass(frozen=True, eq=False)
class MCResult:
    """Estimates on a maturity x strike grid."""

    maturities: np.ndarray
    strikes: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    n_effective: int

    def __getitem__(self, idx) -> MCEstimate:
        i, j = idx
        return MCEstimate(float(self.mean[i, j]), float(self.std_error[i, j]), self.n_effective)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("T,K,mean,stderr\n")
            for i, T in enumerate(self.maturities):
                for j, K in enumerate(self.strikes):
                    fh.write(f"{T:.17g},{K:.17g},{self.mean[i, j]:.17g},{self.std_error[i, j]:.17g}\n")


def simulation_times(end_times, n_steps: int) -> np.ndarray:
    """Time grid containing 0 and every ``end_times`` entry, with steps <= 1/n_steps."""
    ends = np.unique(np.concatenate(([0.0], np.asarray(end_times, dtype=float))))
    pieces = [np.array([0.0])]
    for a, b in zip(ends[:-1], ends[1:]):
        m = max(1, int(math.ceil((b - a) * n_steps - 1e-9)))
        seg = a + (b - a) * np.arange(1, m + 1) / m
        seg[-1] = b
        pieces.append(seg)
    return np.concatenate(pieces)


# --------------------------------------------------------------------------- #
# Path simulators
# --------------------------------------------------------------------------- #


class _Draws:
    """Random inputs; antithetic mode negates normals across path halves."""

    def __init__(self, rng: np.random.Generator, n: int, antithetic: bool):
        self.rng = rng
        self.n = n
        self.antithetic = antithetic

    def normal(self, *shape) -> np.ndarray:
        if not self.antithetic:
            return self.rng.standard_normal((self.n,) + shape)
        half = self.rng.standard_normal((self.n // 2,) + shape)
        return np.concatenate((half, -half))

    def compound(self, measure: LevyMeasure, lam_dt) -> np.ndarray:
        """Sum of jump sizes over one step with Poisson(lam_dt) jumps per path."""
        counts = self.rng.poisson(lam_dt, self.n) if np.ndim(lam_dt) == 0 else self.rng.poisson(lam_dt)
        total = int(counts.sum())
        if total == 0:
            return np.zeros(self.n)
        marks = measure.sample(self.rng, total)
        owner = np.repeat(np.arange(self.n), counts)
        return np.bincount(owner, weights=marks, minlength=self.n)


def _require_finite(measure: LevyMeasure, what: str = "jump measure") -> None:
    if not measure.finite_activity:
        raise UnsupportedModelError(f"{what} has infinite activity; the Monte Carlo oracle "
                                    "supports finite-activity jumps only")


def _cir_step(v, kappa, theta, xi, dt, z):
    vp = np.maximum(v, 0.0)
    return v + kappa * (theta - vp) * dt + xi * np.sqrt(vp * dt) * z


class _Sim:
    """Base: ``x`` is the log of the traded underlying."""

    def observe(self) -> dict:
        return {"x": self.x}


class _LocalJumpSim(_Sim):
    def __init__(self, model, n):
        self.m = model
        self.x = np.full(n, math.log(model.spot))
        self.jumps = model.jumps if isinstance(model, JumpDiffusion) else None
        if self.jumps is not None:
            _require_finite(self.jumps)
            self.lam = self.jumps.total_intensity
            self.comp = self.jumps.mean_exp_minus_one()
        surf = model.local_vol
        self.const_vol = surf.constant

    def step(self, t, dt, R, d: _Draws):
        sig = self.const_vol if self.const_vol is not None else self.m.local_vol(t, self.x)
        x = self.x + R - 0.5 * sig**2 * dt + sig * math.sqrt(dt) * d.normal()
        if self.jumps is not None and self.lam > 0:
            x = x - self.comp * dt + d.compound(self.jumps, self.lam * dt)
        self.x = x


class _PureJumpSim(_Sim):
    def __init__(self, model: PureJumpLocalLevy, n):
        _require_finite(model.base, "base measure")
        self.m = model
        self.x = np.full(n, math.log(model.spot))
        self.lam = model.base.total_intensity
        self.comp = model.base.mean_exp_minus_one()

    def activity(self, t):
        return self.m.activity(t, self.x)

    def step(self, t, dt, R, d):
        alpha = self.activity(t)
        self.x = self.x + R - alpha * self.comp * dt
        if self.lam > 0:
            self.x = self.x + d.compound(self.m.base, alpha * self.lam * dt)

    def observe(self):
        return {"x": self.x}


class _TimeChangedSim(_Sim):
    def __init__(self, model: TimeChangedLevy, n):
        _require_finite(model.jumps)
        self.m = model
        self.x = np.full(n, math.log(model.spot))
        self.clock = model.clock
        self.lam = model.jumps.total_intensity
        self.mu = model.drift - model.jumps.truncated_mean()
        self.sig = math.sqrt(model.variance)
        if isinstance(self.clock, SquareRootProcess):
            self.theta = np.full(n, self.clock.initial)

    def _activity_increment(self, t, dt, d):
        c = self.clock
        if isinstance(c, PiecewiseConstant):
            return np.full(self.x.size, c.integral_between(t, t + dt)), None
        if c.deterministic:
            decay = math.exp(-c.kappa * dt)
            frac = (1 - decay) / c.kappa if c.kappa > 0 else dt
            tau = c.long_run * dt + (self.theta - c.long_run) * frac
            self.theta = c.long_run + (self.theta - c.long_run) * decay
            return tau, None
        z_asset, z_perp = d.normal(), d.normal()
        th = np.maximum(self.theta, 0.0)
        zc = c.correlation * z_asset + math.sqrt(1 - c.correlation**2) * z_perp
        self.theta = _cir_step(self.theta, c.kappa, c.long_run, c.vol_of_vol, dt, zc)
        return th * dt, z_asset

    def step(self, t, dt, R, d):
        tau, z = self._activity_increment(t, dt, d)
        if z is None:
            z = d.normal()
        x = self.x + R + self.mu * tau + self.sig * np.sqrt(tau) * z
        if self.lam > 0:
            x = x + d.compound(self.m.jumps, self.lam * tau)
        self.x = x

    def observe(self):
        c = self.clock
        if isinstance(c, PiecewiseConstant):
            return {"x": self.x}
        theta = np.maximum(self.theta, 0.0)
        return {"x": self.x, "var": theta * self.m.variance, "scale": theta}


class _StochVolSim(_Sim):
    def __init__(self, model: StochVolJump, n):
        _require_finite(model.jumps)
        self.m = model
        self.x = np.full(n, math.log(model.spot))
        self.v = np.full(n, model.variance.initial)
        self.lam = model.jumps.total_intensity
        self.comp = model.jumps.mean_exp_minus_one()

    def step(self, t, dt, R, d):
        p = self.m.variance
        z, zp = d.normal(), d.normal()
        vp = np.maximum(self.v, 0.0)
        x = self.x + R - 0.5 * vp * dt + np.sqrt(vp * dt) * z
        if self.lam > 0:
            x = x - self.comp * dt + d.compound(self.m.jumps, self.lam * dt)
        zc = p.correlation * z + math.sqrt(1 - p.correlation**2) * zp
        self.v = _cir_step(self.v, p.kappa, p.long_run, p.vol_of_vol, dt, zc)
        self.x = x

    def observe(self):
        return {"x": self.x, "var": np.maximum(self.v, 0.0)}


def _matrix_sqrt(rho: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(rho)
        return V * np.sqrt(np.maximum(w, 0.0))


class _BasketSim(_Sim):
    def __init__(self, model: Basket, n):
        self.m = model
        d = model.dimension
        self.X = np.tile(np.log(np.asarray(model.spots)), (n, 1))
        self.w = np.asarray(model.weights)
        self.rho = np.asarray(model.correlation)
        self.A = _matrix_sqrt(self.rho)
        self.sr = [v if isinstance(v, SquareRootProcess) else None for v in model.vols]
        self.var = np.tile([v.initial if isinstance(v, SquareRootProcess) else v * v
                            for v in model.vols], (n, 1)).astype(float)
        j = model.jumps
        self.atom_y = np.asarray(j.atom_sizes, dtype=float).reshape(-1, d)
        self.atom_w = np.asarray(j.atom_weights, dtype=float)
        for _, m in j.marginals:
            _require_finite(m, "basket marginal measure")
        comp = self.atom_w @ np.expm1(self.atom_y) if self.atom_w.size else np.zeros(d)
        comp = np.array(comp, dtype=float)
        for i, m in j.marginals:
            comp[i] += m.mean_exp_minus_one()
        self.comp = comp

    def step(self, t, dt, R, draws):
        n, d = self.X.shape
        z = draws.normal(d) @ self.A.T
        vp = np.maximum(self.var, 0.0)
        self.X = self.X + R - (0.5 * vp + self.comp) * dt + np.sqrt(vp * dt) * z
        if any(s is not None for s in self.sr):
            zp = draws.normal(d)
            for i, p in enumerate(self.sr):
                if p is None:
                    continue
                zc = p.correlation * z[:, i] + math.sqrt(1 - p.correlation**2) * zp[:, i]
                self.var[:, i] = _cir_step(self.var[:, i], p.kappa, p.long_run, p.vol_of_vol, dt, zc)
        for a in range(self.atom_w.size):
            counts = draws.rng.poisson(self.atom_w[a] * dt, n)
            if counts.any():
                self.X = self.X + counts[:, None] * self.atom_y[a][None, :]
        for i, m in self.m.jumps.marginals:
            if m.total_intensity > 0:
                self.X[:, i] += draws.compound(m, m.total_intensity * dt)

    def index(self) -> np.ndarray:
        return np.exp(self.X) @ self.w

    @property
    def x(self):
        return np.log(self.index())

    def observe(self):
        S = np.exp(self.X)
        I = S @ self.w
        delta = np.sqrt(np.maximum(self.var, 0.0))
        a = self.w * delta * S
        q = np.einsum("ni,ij,nj->n", a, self.rho, a) / I**2
        return {"x": np.log(I), "var": q, "S": S, "I": I}

    def index_jumps(self, S, I, rng) -> list[tuple[np.ndarray, float]]:
        """Index log-jumps per path, one entry per atom and one sampled mark per marginal."""
        out = []
        for a in range(self.atom_w.size):
            u = np.log((S * np.exp(self.atom_y[a])) @ self.w / I)
            out.append((u, self.atom_w[a]))
        for i, m in self.m.jumps.marginals:
            lam = m.total_intensity
            if lam > 0:
                y = m.sample(rng, S.shape[0])
                u = np.log1p(self.w[i] * S[:, i] * np.expm1(y) / I)
                out.append((u, lam))
        return out


def _make_sim(model, n: int) -> _Sim:
    if isinstance(model, (LocalVol, JumpDiffusion)):
        return _LocalJumpSim(model, n)
    if isinstance(model, PureJumpLocalLevy):
        return _PureJumpSim(model, n)
    if isinstance(model, TimeChangedLevy):
        return _TimeChangedSim(model, n)
    if isinstance(model, StochVolJump):
        return _StochVolSim(model, n)
    if isinstance(model, Basket):
        return _BasketSim(model, n)
    raise UnsupportedModelError(f"unsupported model type {type(model).__name__}")


def _run_paths(model, mc: MCConfig, block: int, n: int, times: np.ndarray, observe_at: np.ndarray,
               callback, stream: int = 0):
    """Simulate one block; ``callback(obs_index, sim, rng)`` at each observation time."""
    rng = mc.rng(block, stream)
    draws = _Draws(rng, n, mc.antithetic)
    sim = _make_sim(model, n)
    targets = {float(t): i for i, t in enumerate(observe_at)}
    rates = model.rates
    if 0.0 in targets:
        callback(targets[0.0], sim, rng)
    for t0, t1 in zip(times[:-1], times[1:]):
        sim.step(float(t0), float(t1 - t0), rates.integral_between(t0, t1), draws)
        idx = targets.get(float(t1))
        if idx is not None:
            callback(idx, sim, rng)


def _map_blocks(fn, blocks, threads: int | None):
    if threads is None or threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


# --------------------------------------------------------------------------- #
# Pricing
# --------------------------------------------------------------------------- #


def _check_model(model) -> None:
    spots = model.spots if isinstance(model, Basket) else (model.spot,)
    if any(not s > 0 for s in spots):
        raise ValueError("spot must be positive")


def price_calls_mc(model, maturities, strikes, mc: MCConfig, threads: int | None = None) -> MCResult:
    """Discounted call prices ``e^{-int r} E[(S_T - K)^+]`` (index ``I_T`` for baskets).

    A strike of 0 gives the discounted forward, which is the martingale check.
    """
    _check_model(model)
    mats = np.atleast_1d(np.asarray(maturities, dtype=float))
    Ks = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(mats <= 0) or np.any(np.diff(mats) <= 0):
        raise ValueError("maturities must be positive and strictly increasing")
    if np.any(Ks < 0):
        raise ValueError("strikes must be nonnegative")
    times = simulation_times(mats, mc.n_steps)
    disc = np.array([model.rates.discount(T) for T in mats])

    def run(block):
        b, n = block
        ST = np.empty((mats.size, n))

        def record(i, sim, rng):
            ST[i] = np.exp(sim.x)

        _run_paths(model, mc, b, n, times, mats, record)
        pay = disc[:, None, None] * np.maximum(ST[:, None, :] - Ks[None, :, None], 0.0)
        if mc.antithetic:
            h = n // 2
            pay = 0.5 * (pay[..., :h] + pay[..., h:])
        shift = pay[..., 0].copy()
        dev = pay - shift[..., None]
        return pay.shape[-1], shift, dev.sum(axis=-1), (dev * dev).sum(axis=-1)

    parts = _map_blocks(run, mc.blocks(), threads)
    return _combine_moments(parts, mats, Ks)


def _combine_moments(parts, mats, Ks) -> MCResult:
    counts = np.array([p[0] for p in parts], dtype=float)
    N = int(counts.sum())
    means = np.stack([p[1] + p[2] / p[0] for p in parts])
    m2 = np.stack([np.maximum(p[3] - p[2] ** 2 / p[0], 0.0) for p in parts])
    mean = np.empty(means.shape[1:])
    se = np.empty(means.shape[1:])
    for idx in np.ndindex(*mean.shape):
        col = means[(slice(None),) + idx]
        base = col[0]
        diffs = col - base
        mu = base + math.fsum(counts * diffs) / N
        spread = math.fsum(counts * (col - mu) ** 2) if np.any(diffs != 0) else 0.0
        total = math.fsum(m2[(slice(None),) + idx]) + spread
        mean[idx] = mu
        se[idx] = math.sqrt(total / (N - 1) / N) if N > 1 else 0.0
    return MCResult(mats, Ks, mean, se, N)


def martingale_check(model, maturities, mc: MCConfig, threads: int | None = None) -> MCResult:
    """MC estimate of ``e^{-int r} E[S_T]`` (should equal the spot)."""
    return price_calls_mc(model, maturities, [0.0], mc, threads)


# --------------------------------------------------------------------------- #
# Markovian projection
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class BinnedRegression:
    """Conditional means of path quantities given the binned log state."""

    time: float
    edges: np.ndarray
    centers: np.ndarray
    counts: np.ndarray
    means: dict
    std_errors: dict

    def interpolate(self, name: str, x) -> np.ndarray:
        return np.interp(x, self.centers, self.means[name])


def projection_times(grid: GridSpec, step: float = 0.05) -> np.ndarray:
    """Coefficient row times: multiples of ``step`` plus the maturities, below the last maturity."""
    T = grid.maturities[-1]
    n = int(math.floor(T / step + 1e-9))
    base = step * np.arange(n + 1)
    t = np.unique(np.concatenate((base, np.asarray(grid.maturities))))
    return t[t < T - 1e-12]


_PROJECTION_STREAM = 1


def _pilot_edges(x: np.ndarray, n_bins: int) -> np.ndarray:
    return np.quantile(x, np.arange(1, n_bins) / n_bins)


def _merge_bins(counts: np.ndarray, min_count: int) -> list[list[int]]:
    groups = [[i] for i in range(counts.size)]
    c = [float(v) for v in counts]
    while len(groups) > 1 and min(c) < min_count:
        i = int(np.argmin(c))
        if i == 0:
            j = 1
        elif i == len(c) - 1:
            j = i - 1
        else:
            j = i - 1 if c[i - 1] <= c[i + 1] else i + 1
        lo, hi = min(i, j), max(i, j)
        groups[lo] = groups[lo] + groups[hi]
        c[lo] += c[hi]
        del groups[hi], c[hi]
    return groups


def _project(model, grid: GridSpec, mc: MCConfig, n_bins: int, min_count: int,
             step: float, threads: int | None, with_tails: bool):
    rows = projection_times(grid, step)
    ends = np.append(rows[1:], grid.maturities[-1])
    obs = 0.5 * (rows + ends)
    times = simulation_times(obs, mc.n_steps)
    offsets = grid.offsets()
    blocks = mc.blocks()

    # pilot bin edges from the first block
    pilot = np.empty((obs.size, blocks[0][1]))

    def rec_pilot(i, sim, rng):
        pilot[i] = sim.observe()["x"]

    _run_paths(model, mc, blocks[0][0], blocks[0][1], times, obs, rec_pilot, _PROJECTION_STREAM)
    edges = [_pilot_edges(p, n_bins) for p in pilot]

    def run(block):
        b, n = block
        acc = []

        def record(i, sim, rng):
            o = sim.observe()
            x = o["x"]
            bins = np.searchsorted(edges[i], x, side="right")
            cnt = np.bincount(bins, minlength=n_bins).astype(float)
            entry = {"count": cnt, "x": np.bincount(bins, x, n_bins)}
            for key in ("var", "scale"):
                if key in o:
                    entry[key] = np.bincount(bins, o[key], n_bins)
                    entry[key + "2"] = np.bincount(bins, o[key] ** 2, n_bins)
            if with_tails:
                jumps = sim.index_jumps(o["S"], o["I"], rng)
                tails = np.zeros((n_bins, offsets.size))
                left = np.zeros(n_bins)
                for bb in range(n_bins):
                    sel = bins == bb
                    if not sel.any() or not jumps:
                        continue
                    u = np.concatenate([j[0][sel] for j in jumps])
                    w = np.concatenate([np.full(int(sel.sum()), j[1]) for j in jumps])
                    tails[bb] = _atom_tail(u, w, offsets)
                    neg = u < 0
                    left[bb] = float(np.sum(w[neg] * -np.expm1(u[neg])))
                entry["tail"] = tails
                entry["left"] = left
            acc.append(entry)

        _run_paths(model, mc, b, n, times, obs, record, _PROJECTION_STREAM)
        return acc

    parts = _map_blocks(run, blocks, threads)
    regs, tails_out = [], []
    for i, t in enumerate(obs):
        tot = {key: np.sum([p[i][key] for p in parts], axis=0) for key in parts[0][i]}
        groups = _merge_bins(tot["count"], min_count)
        if len(groups) < 3:
            raise ProjectionError(
                f"only {len(groups)} bins with >= {min_count} paths at t = {t:.4g}; "
                "increase n_paths or lower min_count")
        merged = {key: np.array([tot[key][g].sum(axis=0) for g in groups]) for key in tot}
        cnt = merged["count"]
        means, ses = {}, {}
        for key in ("var", "scale"):
            if key in merged:
                mu = merged[key] / cnt
                var = np.maximum(merged[key + "2"] / cnt - mu**2, 0.0)
                means[key] = mu
                ses[key] = np.sqrt(var / np.maximum(cnt - 1, 1))
        bin_edges = np.array([edges[i][g[-1]] for g in groups[:-1]])
        regs.append(BinnedRegression(float(t), bin_edges, merged["x"] / cnt, cnt.astype(int), means, ses))
        if with_tails:
            tables = tuple(
                ExpDoubleTailTable(offsets, np.maximum(merged["tail"][b] / cnt[b], 0.0),
                                   max(merged["left"][b] / cnt[b], 0.0))
                for b in range(len(groups)))
            tails_out.append(TailSlice(bin_edges, np.ones(len(groups)), np.arange(len(groups)), tables))
    return rows, regs, tails_out


def project_effective_coefficients(model, grid: GridSpec, mc: MCConfig, *, n_bins: int = 20,
                                   min_count: int = 200, step: float = 0.05,
                                   threads: int | None = None, return_regressions: bool = False):
    """Markovian projection for stochastic volatility or a stochastic activity clock.

    Coefficient row ``t_i`` holds conditional means estimated at the midpoint
    of ``[t_i, t_{i+1})``, binned by ``ln S`` with equal-count bins.
    """
    if isinstance(model, StochVolJump):
        tail_kind = "free"
    elif isinstance(model, TimeChangedLevy) and isinstance(model.clock, SquareRootProcess):
        tail_kind = "scaled"
    else:
        raise ValueError("projection applies to StochVolJump or TimeChangedLevy with a square-root clock")
    grid.check_spot(model.spot)
    rows, regs, _ = _project(model, grid, mc, n_bins, min_count, step, threads, False)
    k = grid.k
    vol = np.vstack([np.sqrt(np.maximum(r.interpolate("var", k), 0.0)) for r in regs])
    jumps = model.jumps
    tail = None
    if not jumps.is_zero():
        table = offset_tail_table(jumps, grid)
        if tail_kind == "free":
            # jumps independent of the state: conditional multiplier is 1
            tail = StateFreeTail((table,) * rows.size)
        else:
            edges = 0.5 * (k[1:] + k[:-1])
            ids = np.zeros(k.size, dtype=int)
            tail = StateDependentTail(tuple(
                TailSlice(edges, np.maximum(r.interpolate("scale", k), 0.0), ids, (table,)) for r in regs))
    coeffs = EffectiveCoefficients(model.rates, k, rows, vol, tail)
    return (coeffs, regs) if return_regressions else coeffs


def project_index(model: Basket, grid: GridSpec, mc: MCConfig, *, n_bins: int = 20,
                  min_count: int = 200, step: float = 0.05, threads: int | None = None,
                  return_regressions: bool = False):
    """Effective one-dimensional coefficients for the basket index ``I = sum w_i S_i``."""
    if not isinstance(model, Basket):
        raise TypeError("project_index needs a Basket model")
    grid.check_spot(model.spot)
    rows, regs, slices = _project(model, grid, mc, n_bins, min_count, step, threads, True)
    k = grid.k
    vol = np.vstack([np.sqrt(np.maximum(r.interpolate("var", k), 0.0)) for r in regs])
    has_jumps = bool(len(model.jumps.atom_weights)) or bool(model.jumps.marginals)
    tail = StateDependentTail(tuple(slices)) if has_jumps else None
    coeffs = EffectiveCoefficients(model.rates, k, rows, vol, tail)
    return (coeffs, regs) if return_regressions else coeffs
