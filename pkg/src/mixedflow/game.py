"""Two-class bargaining-game benchmark built on IDM equilibrium speed-density curves.

Densities are veh/km per lane, speeds m/s. Class 1 is HV, class 2 is AV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import IdmParams, ScenarioConfig

_BISECT_ITERS = 56  # 30 m/s / 2**56 < 1e-15


class DomainError(ValueError):
    pass


class NoEquilibriumError(ValueError):
    pass


class RegimeError(ValueError):
    pass


class UnidentifiableError(ValueError):
    pass


@dataclass(frozen=True)
class ClassNominal:
    """Equilibrium IDM relation of one class driving among its own kind."""

    cls: int
    u_max: float
    h: float
    s0: float = 1.0
    length: float = 5.0
    delta: float = 4.0

    @property
    def jam_density(self) -> float:
        return 1000.0 / (self.s0 + self.length)

    def density(self, u):
        """u_i^{-1}: density [veh/km] at which the equilibrium speed is ``u``."""
        u = np.asarray(u, dtype=float)
        x = u / self.u_max
        xd = np.square(np.square(x)) if self.delta == 4.0 else x ** self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = (self.s0 + u * self.h) / np.sqrt(1.0 - xd)
            rho = 1000.0 / (gap + self.length)
        return np.where(u >= self.u_max, 0.0, rho)

    def speed(self, rho):
        """u_i: equilibrium speed at density ``rho``.

        Solves (s0 + u h)^2 - g^2 (1 - (u/u_max)^delta) = 0 for the bumper gap
        g; the left side is convex and increasing on [0, u_max], so Newton
        from u_max descends monotonically onto the root.
        """
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0) or np.any(rho > self.jam_density * (1 + 1e-12)):
            raise DomainError(f"density outside [0, {self.jam_density:.4f}] veh/km")
        free = rho <= 0
        with np.errstate(divide="ignore"):
            g = np.where(free, np.inf, 1000.0 / np.where(free, 1.0, rho) - self.length)
        g = np.where(free, 1.0, np.maximum(g, self.s0))
        g2 = g * g
        u = np.full(rho.shape, self.u_max)
        d, h, s0 = self.delta, self.h, self.s0
        for _ in range(100):
            x = u / self.u_max
            f = (s0 + u * h) ** 2 - g2 * (1.0 - x ** d)
            fp = 2.0 * h * (s0 + u * h) + g2 * d * x ** (d - 1) / self.u_max
            step = f / fp
            u = np.maximum(u - step, 0.0)
            if np.all(np.abs(step) <= 1e-13 * self.u_max):
                break
        u = np.where(free, self.u_max, u)
        return np.where(rho >= self.jam_density, 0.0, u)


def nominals_from_config(cfg: ScenarioConfig) -> tuple[ClassNominal, ClassNominal]:
    """HV follows HV at h_HH, AV follows AV at h_AA; u_max is the class mean."""
    p: IdmParams = cfg.idm
    hv = ClassNominal(1, float(np.mean(cfg.hv_speed_range)), p.h_star(1, 1), p.s0, cfg.vehicle_length, p.delta)
    av = ClassNominal(2, float(np.mean(cfg.av_speed_range)), p.h_star(2, 2), p.s0, cfg.vehicle_length, p.delta)
    return hv, av


def idm_equilibrium_speed(rho: float, nominal: ClassNominal) -> float:
    if rho > nominal.jam_density:
        raise DomainError(f"density {rho} beyond jam density {nominal.jam_density:.4f}")
    return float(nominal.speed(rho))


@dataclass(frozen=True)
class ScalingParams:
    a: tuple = (1.0, 1.0)
    b: tuple = (0.8, 1.0)

    def __post_init__(self):
        if min(self.a + self.b) <= 0:
            raise ValueError("scaling parameters must be positive")


class Regime(str, Enum):
    ONE_PIPE = "OnePipe"
    TWO_PIPE = "TwoPipe"


@dataclass
class EquilibriumSolution:
    rho1: float
    rho2: float
    regime: Regime
    u_star: float
    p1_star: float
    p2_star: float
    surplus: float
    lam: float | None
    p1: float | None
    p2: float | None
    u1: float
    u2: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["regime"] = self.regime.value
        return d


# --- 1-pipe -------------------------------------------------------------------

def _one_pipe_residual(u, rho1, rho2, nominals, scalings):
    hv, av = nominals
    tot = rho1 + rho2
    A = rho1 / scalings.a[0] + rho2 / scalings.a[1]
    B = rho1 / scalings.b[0] + rho2 / scalings.b[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(rho1 > 0, rho1 / hv.density(u) * A, 0.0)
        t2 = np.where(rho2 > 0, rho2 / av.density(u) * B, 0.0)
        return (t1 + t2) / tot - 1.0


def one_pipe_speeds(rho1, rho2, nominals, scalings=ScalingParams()):
    """Vectorised u*; NaN where the bracket holds no sign change.

    Returns (u_star, residual_lo, residual_hi).
    """
    rho1, rho2 = np.broadcast_arrays(np.asarray(rho1, float), np.asarray(rho2, float))
    hv, av = nominals
    if np.any(rho1 < 0) or np.any(rho2 < 0) or np.any(rho1 + rho2 <= 0):
        raise DomainError("densities must be non-negative and not both zero")
    top = np.minimum(np.where(rho1 > 0, hv.u_max, np.inf), np.where(rho2 > 0, av.u_max, np.inf))
    lo = np.full(rho1.shape, 1e-6)
    hi = top - 1e-6
    f_lo = _one_pipe_residual(lo, rho1, rho2, nominals, scalings)
    f_hi = _one_pipe_residual(hi, rho1, rho2, nominals, scalings)
    ok = (f_lo < 0) & (f_hi > 0)
    flo, fhi = f_lo.copy(), f_hi.copy()
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        f = _one_pipe_residual(mid, rho1, rho2, nominals, scalings)
        # the residual increases with u; any violation means the model is misconfigured
        if np.any(ok & ((f < flo - 1e-12) | (f > fhi + 1e-12))):
            raise NoEquilibriumError("1-pipe residual is not monotone on the bracket")
        neg = f < 0
        lo, flo = np.where(neg, mid, lo), np.where(neg, f, flo)
        hi, fhi = np.where(neg, hi, mid), np.where(neg, fhi, f)
    u = np.where(ok, 0.5 * (lo + hi), np.nan)
    return u, f_lo, f_hi


def solve_one_pipe(rho1: float, rho2: float, nominals, scalings=ScalingParams()) -> float:
    u, f_lo, f_hi = one_pipe_speeds(rho1, rho2, nominals, scalings)
    if not np.isfinite(u):
        raise NoEquilibriumError(
            f"no 1-pipe equilibrium at ({rho1}, {rho2}): residual {float(f_lo):.4g} / {float(f_hi):.4g} "
            "at bracket ends")
    res = _one_pipe_residual(u, rho1, rho2, nominals, scalings)
    if abs(float(res)) >= 1e-8:
        raise NoEquilibriumError(f"bisection stalled with residual {float(res):.3g}")
    return float(u)


def min_road_shares(rho1, rho2, u_star, nominals):
    hv, av = nominals
    rho1, rho2, u_star = (np.asarray(x, float) for x in (rho1, rho2, u_star))
    for rho, nom in ((rho1, hv), (rho2, av)):
        if np.any((rho > 0) & (u_star >= nom.u_max)):
            raise DomainError(f"u* = {u_star} reaches class {nom.cls} free-flow speed {nom.u_max}")
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = np.where(rho1 > 0, rho1 / hv.density(u_star), 0.0)
        p2 = np.where(rho2 > 0, rho2 / av.density(u_star), 0.0)
    if p1.ndim == 0:
        return float(p1), float(p2)
    return p1, p2


# --- 2-pipe -------------------------------------------------------------------

def allocate_two_pipe(p1_star: float, p2_star: float, lam: float) -> tuple[float, float]:
    """Split the surplus s = 1 - p1* - p2*: HV gets lam * s, AV the rest."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    s = 1.0 - p1_star - p2_star
    if s < 0:
        raise RegimeError(f"negative surplus {s:.4g}: the 1-pipe regime applies")
    p1 = p1_star + lam * s
    return p1, 1.0 - p1


def two_pipe_speeds(rho1, rho2, p1, p2, nominals):
    hv, av = nominals
    out = []
    for rho, p, nom in ((rho1, p1, hv), (rho2, p2, av)):
        rho, p = np.broadcast_arrays(np.asarray(rho, float), np.asarray(p, float))
        if np.any((rho > 0) & (p <= 0)):
            raise ValueError("road share must be positive for a present class")
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(rho > 0, rho / np.where(p > 0, p, 1.0), 0.0)
        if np.any(inner > nom.jam_density * (1 + 1e-12)):
            raise DomainError(f"class {nom.cls}: density in its road share exceeds jam density")
        out.append(nom.speed(np.minimum(inner, nom.jam_density)))
    u1, u2 = out
    if u1.ndim == 0:
        return float(u1), float(u2)
    return u1, u2


def payoff(rho1, rho2, p1, p2, nominals, scalings=ScalingParams()):
    """Class payoffs (speeds): u* in the 1-pipe regime, u_i(rho_i / p_i) otherwise."""
    u_star = solve_one_pipe(rho1, rho2, nominals, scalings)
    p1s, p2s = min_road_shares(rho1, rho2, u_star, nominals)
    if p1s + p2s > 1.0:
        return u_star, u_star
    return two_pipe_speeds(rho1, rho2, p1, p2, nominals)


def solve_equilibrium(rho1: float, rho2: float, lam: float, nominals,
                      scalings=ScalingParams()) -> EquilibriumSolution:
    u_star = solve_one_pipe(rho1, rho2, nominals, scalings)
    p1s, p2s = min_road_shares(rho1, rho2, u_star, nominals)
    s = 1.0 - p1s - p2s
    if s < 0:
        return EquilibriumSolution(rho1, rho2, Regime.ONE_PIPE, u_star, p1s, p2s, s, None, None, None,
                                   u_star, u_star)
    p1, p2 = allocate_two_pipe(p1s, p2s, lam)
    u1, u2 = two_pipe_speeds(rho1, rho2, p1, p2, nominals)
    return EquilibriumSolution(rho1, rho2, Regime.TWO_PIPE, u_star, p1s, p2s, s, lam, p1, p2, u1, u2)


# --- model grids ---------------------------------------------------------------

@dataclass
class CellModel:
    """Lambda-independent pieces of the model on a set of density cells."""

    rho1: np.ndarray
    rho2: np.ndarray
    u_star: np.ndarray
    p1_star: np.ndarray
    p2_star: np.ndarray
    feasible: np.ndarray

    @property
    def surplus(self) -> np.ndarray:
        return 1.0 - self.p1_star - self.p2_star

    @property
    def two_pipe(self) -> np.ndarray:
        return self.feasible & (self.surplus >= 0)


def cell_model(rho1, rho2, nominals, scalings=ScalingParams()) -> CellModel:
    rho1 = np.asarray(rho1, float)
    rho2 = np.asarray(rho2, float)
    u, _, _ = one_pipe_speeds(rho1, rho2, nominals, scalings)
    feasible = np.isfinite(u)
    us = np.where(feasible, u, 0.5)
    p1, p2 = min_road_shares(rho1, rho2, np.minimum(us, _top(rho1, rho2, nominals) - 1e-9), nominals)
    return CellModel(rho1, rho2, u, np.asarray(p1), np.asarray(p2), feasible)


def _top(rho1, rho2, nominals):
    hv, av = nominals
    return np.minimum(np.where(rho1 > 0, hv.u_max, np.inf), np.where(rho2 > 0, av.u_max, np.inf))


def predict_speeds(cells: CellModel, lam, nominals):
    """Model class speeds for every cell (rows) and every lambda (columns)."""
    lam = np.atleast_1d(np.asarray(lam, float))
    s = np.clip(cells.surplus, 0.0, None)[:, None]
    p1 = cells.p1_star[:, None] + lam[None, :] * s
    p2 = cells.p2_star[:, None] + (1.0 - lam[None, :]) * s
    r1 = np.broadcast_to(cells.rho1[:, None], p1.shape)
    r2 = np.broadcast_to(cells.rho2[:, None], p2.shape)
    u1, u2 = two_pipe_speeds(r1, r2, np.where(p1 > 0, p1, 1.0), np.where(p2 > 0, p2, 1.0), nominals)
    one = ~cells.two_pipe[:, None]
    ustar = np.broadcast_to(cells.u_star[:, None], p1.shape)
    return np.where(one, ustar, u1), np.where(one, ustar, u2)


@dataclass
class SpeedGrid:
    """Observed mean class speeds on integer density cells (NaN = missing)."""

    rho1: np.ndarray
    rho2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    count: np.ndarray
    weights: tuple = (0.5, 0.5)
    rho_max: tuple = field(default=(math.inf, math.inf))

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("class weights must sum to 1")


def mean_speed_grid(rho1, rho2, u1, u2, weights=(0.5, 0.5), rho_max=(math.inf, math.inf)) -> SpeedGrid:
    """Average class speeds per density pair; densities rounded half-up to integers.

    Cells where a class speed is undefined (NaN) for every sample keep NaN.
    Zero-density bins are dropped.
    """
    r1 = np.floor(np.asarray(rho1, float) + 0.5).astype(int)
    r2 = np.floor(np.asarray(rho2, float) + 0.5).astype(int)
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    keep = (r1 >= 1) & (r2 >= 1) & (r1 <= rho_max[0]) & (r2 <= rho_max[1])
    cells: dict[tuple[int, int], list] = {}
    for a, b, x, y in zip(r1[keep], r2[keep], u1[keep], u2[keep]):
        cells.setdefault((int(a), int(b)), []).append((x, y))
    keys = sorted(cells)
    m1, m2, cnt = [], [], []
    for key in keys:
        vals = np.array(cells[key])
        m1.append(np.nanmean(vals[:, 0]) if np.isfinite(vals[:, 0]).any() else np.nan)
        m2.append(np.nanmean(vals[:, 1]) if np.isfinite(vals[:, 1]).any() else np.nan)
        cnt.append(len(vals))
    ks = np.array(keys, dtype=float).reshape(-1, 2)
    return SpeedGrid(ks[:, 0], ks[:, 1], np.array(m1), np.array(m2), np.array(cnt), tuple(weights), rho_max)


@dataclass
class LambdaEstimate:
    lam: float
    loss: float
    mae1: float
    mae2: float
    mae: float
    n_cells: int
    curve: np.ndarray  # rows of (lambda, loss)


def lambda_loss(grid: SpeedGrid, cells: CellModel, lam, nominals) -> np.ndarray:
    u1_hat, u2_hat = predict_speeds(cells, lam, nominals)
    w1, w2 = grid.weights
    err = w1 * np.abs(grid.u1[:, None] - u1_hat) + w2 * np.abs(grid.u2[:, None] - u2_hat)
    return np.sum(err ** 2, axis=0)


def estimate_lambda(grid: SpeedGrid, nominals, scalings=ScalingParams(), curve_step: float = 0.01) -> LambdaEstimate:
    """Surplus split factor minimising the squared weighted speed error.

    Coarse scan, golden-section search on the best bracket, then a 1e-4
    scan around the optimum.
    """
    observed = np.isfinite(grid.u1) & np.isfinite(grid.u2)
    if not observed.any():
        raise UnidentifiableError("speed grid holds no complete cells")
    cm = cell_model(grid.rho1[observed], grid.rho2[observed], nominals, scalings)
    use = cm.feasible
    sub = SpeedGrid(grid.rho1[observed][use], grid.rho2[observed][use], grid.u1[observed][use],
                    grid.u2[observed][use], grid.count[observed][use], grid.weights)
    cells = CellModel(cm.rho1[use], cm.rho2[use], cm.u_star[use], cm.p1_star[use], cm.p2_star[use],
                      cm.feasible[use])
    if not np.any(cells.two_pipe & (cells.surplus > 1e-12)):
        raise UnidentifiableError("no cell with positive surplus: lambda does not affect predictions")

    def loss(lam):
        return lambda_loss(sub, cells, lam, nominals)

    grid_l = np.linspace(0.0, 1.0, int(round(1.0 / curve_step)) + 1)
    coarse = loss(grid_l)
    k = int(np.argmin(coarse))
    a, b = grid_l[max(k - 1, 0)], grid_l[min(k + 1, len(grid_l) - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = loss(c)[0], loss(d)[0]
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = loss(c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = loss(d)[0]
    centre = 0.5 * (a + b)
    fine = np.clip(np.round(np.arange(centre - 0.005, centre + 0.005 + 1e-12, 1e-4), 4), 0.0, 1.0)
    fine = np.unique(fine)
    fl = loss(fine)
    j = int(np.argmin(fl))
    lam = float(fine[j])
    u1_hat, u2_hat = predict_speeds(cells, lam, nominals)
    mae1 = float(np.mean(np.abs(sub.u1 - u1_hat[:, 0])))
    mae2 = float(np.mean(np.abs(sub.u2 - u2_hat[:, 0])))
    w1, w2 = grid.weights
    return LambdaEstimate(lam, float(fl[j]), mae1, mae2, w1 * mae1 + w2 * mae2, int(len(sub.rho1)),
                          np.column_stack([grid_l, coarse]))


def synthetic_grid(lam: float, rho_max: int, nominals, scalings=ScalingParams(), noise: float = 0.0,
                   rng: np.random.Generator | None = None, weights=(0.5, 0.5)) -> SpeedGrid:
    """Model-generated speed grid on cells 1..rho_max for both classes."""
    r1, r2 = np.meshgrid(np.arange(1, rho_max + 1), np.arange(1, rho_max + 1), indexing="ij")
    cm = cell_model(r1.ravel(), r2.ravel(), nominals, scalings)
    keep = cm.feasible
    cells = CellModel(cm.rho1[keep], cm.rho2[keep], cm.u_star[keep], cm.p1_star[keep], cm.p2_star[keep],
                      cm.feasible[keep])
    u1, u2 = predict_speeds(cells, lam, nominals)
    u1, u2 = u1[:, 0], u2[:, 0]
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        u1 = u1 + rng.normal(0.0, noise, u1.shape)
        u2 = u2 + rng.normal(0.0, noise, u2.shape)
    return SpeedGrid(cells.rho1, cells.rho2, u1, u2, np.ones(len(u1), int), tuple(weights))
