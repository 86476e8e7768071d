"""Exact study of the two-environment quadratic-feature adversary game.

Predictions of the two-unit quadratic-kernel convolution family are degree-2
polynomials in three variables, so every expected squared loss over the
uniform unit ball has a closed form in the polynomial coefficients (moment
table: E[x_i^2] = 1/5, E[x_i^4] = 3/35, E[x_i^2 x_j^2] = 1/35, odd moments
vanish). All reported losses use that exact form; Monte Carlo over the ball
exists only as a cross-checking oracle.

The game: the learner commits a first-environment prompt v1, the adversary
then picks the second objective (x1^2 or x3^2), and the learner retrains the
shared kernel w plus a second prompt v2 to minimize the worse of the two
losses. Per committed v1 we search that inner minimum with a multi-start
subgradient descent over (w, v2), then polish candidates with an exact inner
prompt solve plus a crease-aware Newton step so stationarity can be certified
to tight tolerance. A numerical search cannot prove the impossibility result;
the output is "no counterexample found", plus exact checks of the
coefficient-deviation argument on every low-loss point visited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

MONOMIALS = ("1", "x1", "x2", "x3", "x1^2", "x2^2", "x3^2", "x1*x2", "x1*x3", "x2*x3")

# Moment values for the uniform unit ball in R^3.
_M2 = 1.0 / 5.0    # E[x_i^2]
_M4 = 3.0 / 35.0   # E[x_i^4]
_M22 = 1.0 / 35.0  # E[x_i^2 x_j^2], i != j

BRANCH_X1 = "x1^2"
BRANCH_X3 = "x3^2"


@dataclass(frozen=True)
class QuadPoly3:
    """Quadratic polynomial in three variables, 10 monomial coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (10,):
            raise ValueError(f"need 10 coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls) -> "QuadPoly3":
        return cls(np.zeros(10))

    @classmethod
    def monomial(cls, name: str, coeff: float = 1.0) -> "QuadPoly3":
        c = np.zeros(10)
        c[MONOMIALS.index(name)] = coeff
        return cls(c)

    def __add__(self, other: "QuadPoly3") -> "QuadPoly3":
        return QuadPoly3(self.coeffs + other.coeffs)

    def __sub__(self, other: "QuadPoly3") -> "QuadPoly3":
        return QuadPoly3(self.coeffs - other.coeffs)

    def scale(self, a: float) -> "QuadPoly3":
        return QuadPoly3(a * self.coeffs)

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x1, x2, x3 = pts[:, 0], pts[:, 1], pts[:, 2]
        c = self.coeffs
        return (
            c[0]
            + c[1] * x1
            + c[2] * x2
            + c[3] * x3
            + c[4] * x1 * x1
            + c[5] * x2 * x2
            + c[6] * x3 * x3
            + c[7] * x1 * x2
            + c[8] * x1 * x3
            + c[9] * x2 * x3
        )


TARGET_X1SQ = QuadPoly3.monomial("x1^2")
TARGET_X2SQ = QuadPoly3.monomial("x2^2")
TARGET_X3SQ = QuadPoly3.monomial("x3^2")

_BRANCH_TARGETS = {BRANCH_X1: TARGET_X1SQ, BRANCH_X3: TARGET_X3SQ}


@dataclass(frozen=True)
class CnnParams:
    """Shared convolution kernel w in R^2 and a linear prompt v in R^2."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if w.shape != (2,) or v.shape != (2,):
            raise ValueError("w and v must be 2-vectors")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)


def predict_poly(p: CnnParams) -> QuadPoly3:
    """Expand v1*(w1 x1 + w2 x2)^2 + v2*(w1 x2 + w2 x3)^2 into monomials."""
    w1, w2 = p.w
    v1, v2 = p.v
    c = np.zeros(10)
    c[4] = v1 * w1 * w1
    c[5] = v1 * w2 * w2 + v2 * w1 * w1
    c[6] = v2 * w2 * w2
    c[7] = 2.0 * v1 * w1 * w2
    c[9] = 2.0 * v2 * w1 * w2
    return QuadPoly3(c)


def expected_sq_loss(p: QuadPoly3, target: QuadPoly3) -> float:
    """Exact E[(p - target)^2] under the uniform distribution on the unit ball."""
    q = p.coeffs - target.coeffs
    sq = q[4] + q[5] + q[6]
    val = (
        q[0] * q[0]
        + 2.0 * _M2 * q[0] * sq
        + _M2 * (q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        + _M4 * (q[4] * q[4] + q[5] * q[5] + q[6] * q[6])
        + 2.0 * _M22 * (q[4] * q[5] + q[4] * q[6] + q[5] * q[6])
        + _M22 * (q[7] * q[7] + q[8] * q[8] + q[9] * q[9])
    )
    return max(0.0, float(val))


def coefficient_deviation_check(p1: QuadPoly3, p2: QuadPoly3) -> float:
    """Largest absolute per-monomial coefficient difference."""
    return float(np.max(np.abs(p1.coeffs - p2.coeffs)))


def sample_unit_ball(n: int, rng: np.random.Generator, chunk: int = 4_000_000) -> np.ndarray:
    """n points uniform on the unit ball in R^3 by rejection from the cube."""
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = min(chunk, 2 * (n - filled) + 1024)
        cand = rng.uniform(-1.0, 1.0, size=(m, 3))
        keep = cand[np.einsum("ij,ij->i", cand, cand) <= 1.0]
        take = min(len(keep), n - filled)
        pts[filled : filled + take] = keep[:take]
        filled += take
    return pts


def monte_carlo_sq_loss(
    p: QuadPoly3, target: QuadPoly3, n: int, rng: np.random.Generator, chunk: int = 2_000_000
) -> tuple[float, float]:
    """Monte Carlo estimate of E[(p - target)^2] with its standard error."""
    total = 0.0
    total_sq = 0.0
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        pts = sample_unit_ball(m, rng)
        diff = p.evaluate(pts) - target.evaluate(pts)
        g = diff * diff
        total += float(g.sum())
        total_sq += float((g * g).sum())
        remaining -= m
    mean = total / n
    var = max(0.0, (total_sq - n * mean * mean) / (n - 1))
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# Batched search machinery.
#
# Deviations from a square-monomial target have only five live coefficients,
# ordered (A, B, C, P, Q) = (x1^2, x2^2, x3^2, x1*x2, x2*x3). The moment form
# on that block is  (3(A^2+B^2+C^2) + 2(AB+AC+BC) + P^2 + Q^2) / 35.
# ---------------------------------------------------------------------------

_TAU = {BRANCH_X1: 0, BRANCH_X3: 2}
_TAU_X2 = 1


def _m_vec(w1, w2, u1, u2, tau):
    A = u1 * w1 * w1 - (tau == 0)
    B = u1 * w2 * w2 + u2 * w1 * w1 - (tau == 1)
    C = u2 * w2 * w2 - (tau == 2)
    P = 2.0 * u1 * w1 * w2
    Q = 2.0 * u2 * w1 * w2
    return A, B, C, P, Q


def _form(m):
    A, B, C, P, Q = m
    return (3.0 * (A * A + B * B + C * C) + 2.0 * (A * B + A * C + B * C) + P * P + Q * Q) / 35.0


def _max_abs_dev(m):
    A, B, C, P, Q = m
    out = np.abs(A)
    for t in (B, C, P, Q):
        out = np.maximum(out, np.abs(t))
    return out


def _Mm(m):
    A, B, C, P, Q = m
    s = A + B + C
    return ((2 * A + s) / 35.0, (2 * B + s) / 35.0, (2 * C + s) / 35.0, P / 35.0, Q / 35.0)


def _mdot(a, b):
    # a^T M b for 5-tuples in (A, B, C, P, Q) order.
    sa = a[0] + a[1] + a[2]
    sb = b[0] + b[1] + b[2]
    return (
        2.0 * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) + sa * sb + a[3] * b[3] + a[4] * b[4]
    ) / 35.0


def _grad_w(m, w1, w2, u1, u2):
    MA, MB, MC, MP, MQ = _Mm(m)
    g1 = 2.0 * (MA * 2 * u1 * w1 + MB * 2 * u2 * w1 + MP * 2 * u1 * w2 + MQ * 2 * u2 * w2)
    g2 = 2.0 * (MB * 2 * u1 * w2 + MC * 2 * u2 * w2 + MP * 2 * u1 * w1 + MQ * 2 * u2 * w1)
    return g1, g2


def _grad_u(m, w1, w2):
    MA, MB, MC, MP, MQ = _Mm(m)
    gu1 = 2.0 * (MA * w1 * w1 + MB * w2 * w2 + MP * 2 * w1 * w2)
    gu2 = 2.0 * (MB * w1 * w1 + MC * w2 * w2 + MQ * 2 * w1 * w2)
    return gu1, gu2


def _solve_v2(w1, w2, tau2):
    """Exact minimizer of the second loss over the prompt, given the kernel.

    The loss is a convex quadratic in (u1, u2); near-singular systems (kernel
    close to zero) fall back to u = 0.
    """
    w1sq, w2sq = w1 * w1, w2 * w2
    rho = w1sq + w2sq
    k11 = 3.0 * rho * rho / 35.0
    k12 = (w1sq * w1sq + w2sq * w2sq + 4.0 * w1sq * w2sq) / 35.0
    r_a1 = np.where(tau2 == 0, (3.0 * w1sq + w2sq) / 35.0, (w1sq + w2sq) / 35.0)
    r_a2 = np.where(tau2 == 0, (w1sq + w2sq) / 35.0, (3.0 * w2sq + w1sq) / 35.0)
    det = k11 * k11 - k12 * k12
    good = det > 1e-28
    safe = np.where(good, det, 1.0)
    u1 = np.where(good, (k11 * r_a1 - k12 * r_a2) / safe, 0.0)
    u2 = np.where(good, (k11 * r_a2 - k12 * r_a1) / safe, 0.0)
    return u1, u2


def _hess_w(m, w1, w2, u1, u2):
    """2x2 Hessian of the loss in the kernel variables (prompt held fixed)."""
    MA, MB, MC, MP, MQ = _Mm(m)
    dw1 = (2 * u1 * w1, 2 * u2 * w1, np.zeros_like(w1), 2 * u1 * w2, 2 * u2 * w2)
    dw2 = (np.zeros_like(w1), 2 * u1 * w2, 2 * u2 * w2, 2 * u1 * w1, 2 * u2 * w1)
    h11 = 2.0 * (_mdot(dw1, dw1) + MA * 2 * u1 + MB * 2 * u2)
    h22 = 2.0 * (_mdot(dw2, dw2) + MB * 2 * u1 + MC * 2 * u2)
    h12 = 2.0 * (_mdot(dw1, dw2) + MP * 2 * u1 + MQ * 2 * u2)
    return h11, h12, h22


def _hess_envelope(m, w1, w2, u1, u2):
    """Hessian in w of min_u L2 (Schur complement of the prompt block)."""
    MA, MB, MC, MP, MQ = _Mm(m)
    z = np.zeros_like(w1)
    dw1 = (2 * u1 * w1, 2 * u2 * w1, z, 2 * u1 * w2, 2 * u2 * w2)
    dw2 = (z, 2 * u1 * w2, 2 * u2 * w2, 2 * u1 * w1, 2 * u2 * w1)
    du1 = (w1 * w1, w2 * w2, z, 2 * w1 * w2, z)
    du2 = (z, w1 * w1, w2 * w2, z, 2 * w1 * w2)
    hww11, hww12, hww22 = _hess_w(m, w1, w2, u1, u2)
    hw1u1 = 2.0 * (_mdot(dw1, du1) + MA * 2 * w1 + MP * 2 * w2)
    hw1u2 = 2.0 * (_mdot(dw1, du2) + MB * 2 * w1 + MQ * 2 * w2)
    hw2u1 = 2.0 * (_mdot(dw2, du1) + MB * 2 * w2 + MP * 2 * w1)
    hw2u2 = 2.0 * (_mdot(dw2, du2) + MC * 2 * w2 + MQ * 2 * w1)
    huu11 = 2.0 * _mdot(du1, du1)
    huu12 = 2.0 * _mdot(du1, du2)
    huu22 = 2.0 * _mdot(du2, du2)
    det = huu11 * huu22 - huu12 * huu12
    good = det > 1e-28
    safe = np.where(good, det, 1.0)
    # H_wu Huu^-1 H_uw, guarded against a degenerate prompt block.
    i11 = np.where(good, huu22 / safe, 0.0)
    i12 = np.where(good, -huu12 / safe, 0.0)
    i22 = np.where(good, huu11 / safe, 0.0)
    s11 = hw1u1 * (i11 * hw1u1 + i12 * hw1u2) + hw1u2 * (i12 * hw1u1 + i22 * hw1u2)
    s12 = hw1u1 * (i11 * hw2u1 + i12 * hw2u2) + hw1u2 * (i12 * hw2u1 + i22 * hw2u2)
    s22 = hw2u1 * (i11 * hw2u1 + i12 * hw2u2) + hw2u2 * (i12 * hw2u1 + i22 * hw2u2)
    return hww11 - s11, hww12 - s12, hww22 - s22


def _newton_2x2(h11, h12, h22, g1, g2, floor=1e-9):
    tr = h11 + h22
    diff = h11 - h22
    lam_min = 0.5 * (tr - np.sqrt(diff * diff + 4.0 * h12 * h12))
    bump = np.maximum(0.0, floor - lam_min)
    a = h11 + bump
    d = h22 + bump
    det = a * d - h12 * h12
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    return -(d * g1 - h12 * g2) / det, -(a * g2 - h12 * g1) / det


@dataclass(frozen=True)
class GameConfig:
    """Search configuration for the commit-then-adversary game."""

    v1_range: float = 3.0
    v1_resolution: float = 0.05
    n_starts: int = 64
    gd_iters: int = 200
    refine_iters: int = 60
    seed: int = 0
    chunk_size: int = 256

    def __post_init__(self):
        if self.v1_resolution <= 0:
            raise ValueError("v1_resolution must be positive")
        if self.v1_range <= 0:
            raise ValueError("v1_range must be positive")
        if self.n_starts < 1 or self.gd_iters < 1 or self.refine_iters < 1:
            raise ValueError("n_starts, gd_iters, refine_iters must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")


@dataclass
class GameReport:
    """Outcome for one committed v1: the adversary's branch and the best
    response found. Losses are recomputed from (w, v1, v2) through the public
    polynomial path, never copied out of the search arrays."""

    v1: tuple[float, float]
    branch: str
    best_found: dict
    branch_values: dict
    search_stats: dict

    def to_dict(self) -> dict:
        return {
            "v1": [float(self.v1[0]), float(self.v1[1])],
            "branch": self.branch,
            "best_found": self.best_found,
            "branch_values": self.branch_values,
            "search_stats": self.search_stats,
        }


def v1_grid(config: GameConfig) -> np.ndarray:
    """Committed-prompt grid, always containing the two exact witnesses."""
    n = int(math.floor(config.v1_range / config.v1_resolution + 1e-9))
    axis = np.array([i * config.v1_resolution for i in range(-n, n + 1)])
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    for witness in ((1.0, 0.0), (0.0, 1.0)):
        d = np.abs(pts - np.asarray(witness)).max(axis=1)
        if not np.any(d < 1e-12):
            pts = np.vstack([pts, witness])
    return pts


_STRUCTURED_STARTS = np.array(
    [
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0, 0.0],
    ]
)


class _LemmaMonitor:
    """Checks the coefficient-deviation bound on every low-loss point seen."""

    def __init__(self, bar: float):
        self.bar = bar
        self.checked = 0
        self.max_dev = 0.0
        self.violations = 0

    def update(self, loss, m):
        low = loss <= self.bar
        n_low = int(np.count_nonzero(low))
        if n_low == 0:
            return
        self.checked += n_low
        devs = _max_abs_dev(m)[low]
        self.max_dev = max(self.max_dev, float(devs.max()))
        self.violations += int(np.count_nonzero(devs > 0.25))


def _losses(w1, w2, a, b, c, e, tau2):
    m1 = _m_vec(w1, w2, a, b, _TAU_X2)
    m2 = _m_vec(w1, w2, c, e, tau2)
    return _form(m1), _form(m2), m1, m2


def _search_chunk(a, b, tau2, config, rng, monitor):
    """Best response per row-group for one chunk of committed prompts.

    ``a``, ``b``, ``tau2`` have one entry per (grid point, branch) pair; each
    pair gets ``n_starts`` candidate descents run side by side.
    """
    n_pairs = a.size
    s = config.n_starts
    A = np.repeat(a, s)
    B = np.repeat(b, s)
    TAU = np.repeat(tau2, s)
    rows = n_pairs * s

    theta = rng.uniform(-2.0, 2.0, size=(rows, 4))
    n_structured = min(s, len(_STRUCTURED_STARTS))
    for j in range(n_structured):
        theta[j::s] = _STRUCTURED_STARTS[j]
    w1, w2, c, e = (theta[:, i].copy() for i in range(4))

    step = np.full(rows, 0.05)
    L1, L2, m1, m2 = _losses(w1, w2, A, B, c, e, TAU)
    F = np.maximum(L1, L2)
    monitor.update(L1, m1)
    monitor.update(L2, m2)
    evals = rows

    for _ in range(config.gd_iters):
        g1w1, g1w2 = _grad_w(m1, w1, w2, A, B)
        g2w1, g2w2 = _grad_w(m2, w1, w2, c, e)
        g2c, g2ce = _grad_u(m2, w1, w2)
        act1 = L1 >= L2
        gw1 = np.where(act1, g1w1, g2w1)
        gw2 = np.where(act1, g1w2, g2w2)
        gc = np.where(act1, 0.0, g2c)
        ge = np.where(act1, 0.0, g2ce)
        tw1 = np.clip(w1 - step * gw1, -8.0, 8.0)
        tw2 = np.clip(w2 - step * gw2, -8.0, 8.0)
        tc = np.clip(c - step * gc, -8.0, 8.0)
        te = np.clip(e - step * ge, -8.0, 8.0)
        tL1, tL2, tm1, tm2 = _losses(tw1, tw2, A, B, tc, te, TAU)
        tF = np.maximum(tL1, tL2)
        monitor.update(tL1, tm1)
        monitor.update(tL2, tm2)
        evals += rows
        better = tF <= F
        w1 = np.where(better, tw1, w1)
        w2 = np.where(better, tw2, w2)
        c = np.where(better, tc, c)
        e = np.where(better, te, e)
        F = np.where(better, tF, F)
        step = np.where(better, step * 1.1, step * 0.5)
        L1 = np.where(better, tL1, L1)
        L2 = np.where(better, tL2, L2)
        m1 = _m_vec(w1, w2, A, B, _TAU_X2)
        m2 = _m_vec(w1, w2, c, e, TAU)

    w1, w2, gmn, F, L1, L2, c, e, refine_used = _refine_chunk(
        w1, w2, A, B, TAU, config, monitor
    )

    # Reduce to the best start per (grid point, branch).
    F_mat = F.reshape(n_pairs, s)
    best = np.argmin(F_mat, axis=1)
    take = best + np.arange(n_pairs) * s
    return {
        "w1": w1[take],
        "w2": w2[take],
        "c": c[take],
        "e": e[take],
        "F": F[take],
        "L1": L1[take],
        "L2": L2[take],
        "gmn": gmn[take],
        "evals": evals,
        "refine_iters": refine_used,
    }


def _stationarity(w1, w2, A, B, TAU):
    """Exact prompt solve plus the minimax stationarity measure at (w1, w2).

    ``gmn`` is the norm of the minimum-norm vector in the convex hull of the
    two branch gradients when the losses are balanced, else the active
    branch's gradient. The prompt block of the full gradient is exactly zero
    after the inner solve, so this is the full 4-variable stationarity.
    """
    c, e = _solve_v2(w1, w2, TAU)
    L1, G, m1, m2 = _losses(w1, w2, A, B, c, e, TAU)
    F = np.maximum(L1, G)
    g1w1, g1w2 = _grad_w(m1, w1, w2, A, B)
    gGw1, gGw2 = _grad_w(m2, w1, w2, c, e)
    d1 = g1w1 - gGw1
    d2 = g1w2 - gGw2
    denom = d1 * d1 + d2 * d2
    lam = np.where(denom > 0, -(gGw1 * d1 + gGw2 * d2) / np.where(denom > 0, denom, 1.0), 0.5)
    lam = np.clip(lam, 0.0, 1.0)
    crease = np.abs(L1 - G) <= 1e-3 * np.maximum(F, 1e-12)
    gmn1 = np.where(crease, lam * g1w1 + (1 - lam) * gGw1, np.where(L1 > G, g1w1, gGw1))
    gmn2 = np.where(crease, lam * g1w2 + (1 - lam) * gGw2, np.where(L1 > G, g1w2, gGw2))
    gmn = np.hypot(gmn1, gmn2)
    return {
        "c": c,
        "e": e,
        "L1": L1,
        "G": G,
        "F": F,
        "m1": m1,
        "m2": m2,
        "g1": (g1w1, g1w2),
        "gG": (gGw1, gGw2),
        "d": (d1, d2),
        "lam": lam,
        "gmn": gmn,
        "gmn_vec": (gmn1, gmn2),
    }


def _kkt_step(st, h1, hg, grad_tol):
    """Newton step on the balanced system (both losses equal, combined
    gradient zero); rows with a singular system get a small subgradient step."""
    g1w1, g1w2 = st["g1"]
    gGw1, gGw2 = st["gG"]
    d1, d2 = st["d"]
    lam = np.clip(st["lam"], 1e-3, 1.0 - 1e-3)
    n = lam.size
    sys = np.zeros((n, 3, 3))
    sys[:, 0, 0] = lam * h1[0] + (1 - lam) * hg[0] + 1e-12
    sys[:, 0, 1] = lam * h1[1] + (1 - lam) * hg[1]
    sys[:, 1, 0] = sys[:, 0, 1]
    sys[:, 1, 1] = lam * h1[2] + (1 - lam) * hg[2] + 1e-12
    sys[:, 0, 2] = d1
    sys[:, 1, 2] = d2
    sys[:, 2, 0] = d1
    sys[:, 2, 1] = d2
    rhs = np.stack(
        [
            -(lam * g1w1 + (1 - lam) * gGw1),
            -(lam * g1w2 + (1 - lam) * gGw2),
            -(st["L1"] - st["G"]),
        ],
        axis=1,
    )
    dw1 = -0.1 * st["gmn_vec"][0]
    dw2 = -0.1 * st["gmn_vec"][1]
    dets = np.linalg.det(sys)
    solvable = np.abs(dets) > 1e-30
    if np.any(solvable):
        sol = np.linalg.solve(sys[solvable], rhs[solvable][..., None])[..., 0]
        dw1[solvable] = sol[:, 0]
        dw2[solvable] = sol[:, 1]
    return dw1, dw2


def _cap_step(dw1, dw2, cap=1.0):
    norm = np.hypot(dw1, dw2)
    scale = np.where(norm > cap, cap / np.maximum(norm, 1e-300), 1.0)
    return dw1 * scale, dw2 * scale


def _refine_chunk(w1, w2, A, B, TAU, config, monitor, grad_tol=1e-9):
    """Polish every candidate: exact prompt solve + crease-aware Newton in w.

    Each iteration proposes several steps (balanced-system Newton, active
    -branch Newton at a few scales, a predicted branch-crossing step, and a
    small subgradient step) and keeps whichever achieves the lowest max-loss;
    rows never move to a worse point. Minimax optima usually sit where the
    two branch losses cross, which is why the pure active-branch step alone
    would stall: its target lies beyond the crossing.
    """
    used = 0
    live = np.arange(w1.size)
    w1 = w1.copy()
    w2 = w2.copy()
    for it in range(config.refine_iters):
        used = it + 1
        u1, u2 = w1[live], w2[live]
        a_l, b_l, tau_l = A[live], B[live], TAU[live]
        st = _stationarity(u1, u2, a_l, b_l, tau_l)
        monitor.update(st["L1"], st["m1"])
        monitor.update(st["G"], st["m2"])
        F = st["F"]
        gmn = st["gmn"]
        active = gmn > grad_tol
        if not bool(np.any(active)):
            break
        # Compress to the rows still being polished.
        live = live[active]
        for key in ("L1", "G", "F", "c", "e", "lam", "gmn"):
            st[key] = st[key][active]
        st["m1"] = tuple(t[active] for t in st["m1"])
        st["m2"] = tuple(t[active] for t in st["m2"])
        for key in ("g1", "gG", "d", "gmn_vec"):
            st[key] = tuple(t[active] for t in st[key])
        u1, u2, a_l, b_l, tau_l = u1[active], u2[active], a_l[active], b_l[active], tau_l[active]
        F = st["F"]
        gmn = st["gmn"]
        n_live = live.size

        h1 = _hess_w(st["m1"], u1, u2, a_l, b_l)
        hg = _hess_envelope(st["m2"], u1, u2, st["c"], st["e"])
        n1w1, n1w2 = _newton_2x2(*h1, *st["g1"])
        ngw1, ngw2 = _newton_2x2(*hg, *st["gG"])
        act1 = st["L1"] > st["G"]
        sw1 = np.where(act1, n1w1, ngw1)
        sw2 = np.where(act1, n1w2, ngw2)
        sw1, sw2 = _cap_step(sw1, sw2)

        kk1, kk2 = _kkt_step(st, h1, hg, grad_tol)
        kk1, kk2 = _cap_step(kk1, kk2)

        # Linear estimate of where the two branch losses cross along the
        # active-branch descent direction.
        ga = (np.where(act1, st["g1"][0], st["gG"][0]), np.where(act1, st["g1"][1], st["gG"][1]))
        gb = (np.where(act1, st["gG"][0], st["g1"][0]), np.where(act1, st["gG"][1], st["g1"][1]))
        slope_a = ga[0] * sw1 + ga[1] * sw2
        slope_b = gb[0] * sw1 + gb[1] * sw2
        gap = np.abs(st["L1"] - st["G"])
        denom = slope_b - slope_a
        s_cross = np.where(np.abs(denom) > 1e-300, gap / np.abs(np.where(denom == 0, 1.0, denom)), 1.0)
        s_cross = np.clip(s_cross, 0.0, 1.0)

        g_scale = 0.05 / (1.0 + gmn)
        candidates = (
            (kk1, kk2),
            (0.5 * kk1, 0.5 * kk2),
            (sw1, sw2),
            (0.5 * sw1, 0.5 * sw2),
            (0.25 * sw1, 0.25 * sw2),
            (s_cross * sw1, s_cross * sw2),
            (-g_scale * st["gmn_vec"][0], -g_scale * st["gmn_vec"][1]),
        )
        n_cand = len(candidates)
        t1 = np.concatenate([u1 + c1 for c1, _ in candidates])
        t2 = np.concatenate([u2 + c2 for _, c2 in candidates])
        tau_rep = np.tile(tau_l, n_cand)
        a_rep = np.tile(a_l, n_cand)
        b_rep = np.tile(b_l, n_cand)
        tc, te = _solve_v2(t1, t2, tau_rep)
        tL1, tG, tm1, tm2 = _losses(t1, t2, a_rep, b_rep, tc, te, tau_rep)
        monitor.update(tL1, tm1)
        monitor.update(tG, tm2)
        tF = np.maximum(tL1, tG).reshape(n_cand, n_live)
        pick = np.argmin(tF, axis=0)
        bestF = tF[pick, np.arange(n_live)]
        improve = bestF <= F + 1e-13 * (F + 1e-15)
        flat = pick * n_live + np.arange(n_live)
        new_u1 = np.where(improve, t1[flat], u1)
        new_u2 = np.where(improve, t2[flat], u2)
        # Close to stationarity the max-loss differences fall below float
        # resolution, so rank-by-loss cannot discriminate; trust the local
        # Newton step there instead, as long as it shrinks the residual.
        near = np.nonzero(gmn < 1e-2)[0]
        if near.size:
            crease = np.abs(st["L1"] - st["G"]) <= 1e-3 * np.maximum(F, 1e-12)
            nw1 = u1[near] + np.where(crease[near], kk1[near], sw1[near])
            nw2 = u2[near] + np.where(crease[near], kk2[near], sw2[near])
            probe = _stationarity(nw1, nw2, a_l[near], b_l[near], tau_l[near])
            shrink = probe["gmn"] < gmn[near]
            new_u1[near[shrink]] = nw1[shrink]
            new_u2[near[shrink]] = nw2[shrink]
        w1[live] = new_u1
        w2[live] = new_u2

    st = _stationarity(w1, w2, A, B, TAU)
    return w1, w2, st["gmn"], st["F"], st["L1"], st["G"], st["c"], st["e"], used


def adversary_game(config: GameConfig, epsilon_bar: float = 1e-3) -> list[GameReport]:
    """Play the commit-then-adversary game over the whole committed-prompt grid.

    For each committed v1, both second-environment objectives are searched;
    the adversary's branch is the one whose best learner response is worst.
    Reported losses are recomputed exactly from the winning parameters.
    """
    grid = v1_grid(config)
    rng = np.random.default_rng(config.seed)
    monitor = _LemmaMonitor(epsilon_bar)
    reports: list[GameReport] = []
    branch_names = (BRANCH_X1, BRANCH_X3)
    taus = np.array([_TAU[name] for name in branch_names])

    for lo in range(0, len(grid), config.chunk_size):
        pts = grid[lo : lo + config.chunk_size]
        n_pts = len(pts)
        a = np.repeat(pts[:, 0], 2)
        b = np.repeat(pts[:, 1], 2)
        tau2 = np.tile(taus, n_pts)
        res = _search_chunk(a, b, tau2, config, rng, monitor)
        for j, (va, vb) in enumerate(pts):
            vals = {}
            cand = {}
            for bi, name in enumerate(branch_names):
                row = 2 * j + bi
                params = CnnParams(
                    w=np.array([res["w1"][row], res["w2"][row]]),
                    v=np.array([va, vb]),
                )
                v2 = np.array([res["c"][row], res["e"][row]])
                loss1 = expected_sq_loss(predict_poly(params), TARGET_X2SQ)
                loss2 = expected_sq_loss(
                    predict_poly(CnnParams(w=params.w, v=v2)), _BRANCH_TARGETS[name]
                )
                vals[name] = max(loss1, loss2)
                cand[name] = {
                    "w": [float(params.w[0]), float(params.w[1])],
                    "v2": [float(v2[0]), float(v2[1])],
                    "loss1": loss1,
                    "loss2": loss2,
                    "max_loss": max(loss1, loss2),
                    "min_subgradient_norm": float(res["gmn"][row]),
                }
            pick = max(branch_names, key=lambda nm: vals[nm])
            reports.append(
                GameReport(
                    v1=(float(va), float(vb)),
                    branch=pick,
                    best_found=cand[pick],
                    branch_values={nm: float(vals[nm]) for nm in branch_names},
                    search_stats={
                        "evaluations": int(res["evals"] // n_pts),
                        "refine_iterations": int(res["refine_iters"]),
                        "low_loss_points_checked": monitor.checked,
                        "low_loss_max_coeff_deviation": monitor.max_dev,
                        "low_loss_coeff_violations": monitor.violations,
                    },
                )
            )
    return reports


def witness_losses() -> dict:
    """Exact losses of the two realizable parameter settings, no search."""
    w_a = CnnParams(w=np.array([0.0, 1.0]), v=np.array([1.0, 0.0]))
    w_a2 = CnnParams(w=np.array([0.0, 1.0]), v=np.array([0.0, 1.0]))
    w_b = CnnParams(w=np.array([1.0, 0.0]), v=np.array([0.0, 1.0]))
    w_b2 = CnnParams(w=np.array([1.0, 0.0]), v=np.array([1.0, 0.0]))
    return {
        "x3^2-branch": {
            "loss1": expected_sq_loss(predict_poly(w_a), TARGET_X2SQ),
            "loss2": expected_sq_loss(predict_poly(w_a2), TARGET_X3SQ),
        },
        "x1^2-branch": {
            "loss1": expected_sq_loss(predict_poly(w_b), TARGET_X2SQ),
            "loss2": expected_sq_loss(predict_poly(w_b2), TARGET_X1SQ),
        },
    }


def game_summary(reports: list[GameReport], epsilon_bar: float = 1e-3) -> dict:
    """Aggregate verdict: worst adversary value over the grid plus witnesses."""
    values = [r.branch_values[r.branch] for r in reports]
    idx = int(np.argmin(values))
    witnesses = witness_losses()
    witnesses_exact = all(
        v == 0.0 for pair in witnesses.values() for v in pair.values()
    )
    return {
        "n_grid_points": len(reports),
        "min_adversary_value": float(values[idx]),
        "argmin_v1": [float(reports[idx].v1[0]), float(reports[idx].v1[1])],
        "epsilon_bar": epsilon_bar,
        "all_above_bar": bool(min(values) > epsilon_bar),
        "witness_losses": witnesses,
        "witnesses_exact_zero": witnesses_exact,
    }


def save_game_reports(path, reports: list[GameReport], config: GameConfig, epsilon_bar: float = 1e-3) -> dict:
    summary = game_summary(reports, epsilon_bar)
    doc = {
        "config": {
            "v1_range": config.v1_range,
            "v1_resolution": config.v1_resolution,
            "n_starts": config.n_starts,
            "gd_iters": config.gd_iters,
            "refine_iters": config.refine_iters,
            "seed": config.seed,
        },
        "summary": summary,
        "reports": [r.to_dict() for r in reports],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return doc
