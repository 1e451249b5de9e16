"""Model data: control sets, growth scaffolding, coefficient evaluators.

Conventions for evaluators (all vectorized over the first axis):
    A(x, t, curve) -> (N, d, d)       diffusion matrix, symmetric PSD
    b(x, t, curve) -> (N, d)          drift
    Q(x, t, curve) -> (N, d, du)      control-to-drift map
    f(u, x, t, curve) -> (N,)         running cost, u is (du,) or (N, du)
    g(x, curve) -> (N,)               terminal cost
with x an (N, d) array of positions, t a scalar time and curve the frozen
population curve (None allowed when nothing depends on it).

The growth scaffolding bundles a coercive weight V, a strictly smaller
weight W, a superlinear convex cost profile h with its numerically
computed conjugate, and the documented constants of the growth and
regularity bounds.  The envelope rate is M = 5*C_L and the control budget
level is gamma = exp(-C_L*T)/4, computed exactly from C_L and the horizon.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, linprog, minimize_scalar

from .errors import BoundTooSmallError, NumericalError, ValidationError

PSD_TOL = -1e-12


# ---------------------------------------------------------------------------
# convex duality utilities


def legendre(h, p, v_max, xatol=1e-12):
    """Numerical convex conjugate sup_{0 <= v <= v_max} (p*v - h(v)).

    Raises BoundTooSmallError when the maximizer lands on the right edge of
    the search window, which for superlinear h means v_max was too small.
    Accepts a scalar or an array of slopes p.
    """
    scalar = np.isscalar(p) or np.asarray(p).ndim == 0
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.empty(p_arr.shape)
    edge = v_max - max(1e-6 * v_max, 50 * xatol)
    for idx, pv in np.ndenumerate(p_arr):
        res = minimize_scalar(
            lambda v: -(pv * v - float(h(v))),
            bounds=(0.0, v_max),
            method="bounded",
            options={"xatol": xatol},
        )
        if res.x >= edge:
            raise BoundTooSmallError(
                "conjugate maximizer %.6g hit the search bound %.6g at slope %.6g; "
                "enlarge v_max" % (res.x, v_max, pv)
            )
        out[idx] = max(-res.fun, 0.0)
    return float(out[0]) if scalar else out


def conjugate_fn(h, v0=1.0):
    """Conjugate of h as a callable, growing its search window as needed."""

    def h_star(p):
        v_max = v0
        for _ in range(60):
            try:
                return legendre(h, p, v_max)
            except BoundTooSmallError:
                v_max *= 2.0
        raise BoundTooSmallError("conjugate search window exhausted at %.3g" % v_max)

    return h_star


def h_inverse(h, y, hi0=1.0):
    """Inverse of the increasing cost profile h on [0, inf), |h(x)-y| <= 1e-10."""
    y = float(y)
    if y < 0:
        raise ValidationError("cannot invert the cost profile at a negative level")
    if y == 0.0:
        return 0.0
    hi = hi0
    for _ in range(200):
        if float(h(hi)) >= y:
            break
        hi *= 2.0
    else:
        raise BoundTooSmallError("no bracket found for h^{-1}(%.3g)" % y)
    root = brentq(lambda v: float(h(v)) - y, 0.0, hi, xtol=1e-14, rtol=8.9e-16)
    if abs(float(h(root)) - y) > 1e-10 * (1.0 + abs(y)):
        raise NumericalError("h inverse residual %.3e too large" % (float(h(root)) - y))
    return float(root)


def beta_vw(v_values, w_values, R):
    """sup of (1/R) * <W, eta> over probability vectors eta with <V, eta> <= R.

    Solved as a two-constraint LP over grid weights; the optimum always has
    support on at most two nodes.
    """
    v_values = np.asarray(v_values, dtype=float)
    w_values = np.asarray(w_values, dtype=float)
    if v_values.min() > R:
        raise ValidationError(
            "no probability on the grid satisfies <V, eta> <= %.3g (min V = %.3g)"
            % (R, v_values.min())
        )
    res = linprog(
        -w_values,
        A_ub=v_values[None, :],
        b_ub=[R],
        A_eq=np.ones((1, len(v_values))),
        b_eq=[1.0],
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise NumericalError("moment-ratio LP failed: %s" % res.message)
    return float(max(-res.fun, 0.0) / R)


def envelope_rate(c_l):
    """Growth rate of the V-moment envelope R*exp(M*t)."""
    return 5.0 * c_l


def budget_level(c_l, horizon):
    """Control-budget level gamma = exp(-C_L*T)/4."""
    return 0.25 * np.exp(-c_l * horizon)


def sym_sqrt(mats):
    """Symmetric PSD square root of a stack of matrices, clipping tiny negatives."""
    mats = np.asarray(mats, dtype=float)
    vals, vecs = np.linalg.eigh(mats)
    if vals.min() < PSD_TOL:
        raise ValidationError("matrix not PSD: eigenvalue %.3e" % vals.min())
    root = np.sqrt(np.clip(vals, 0.0, None))
    return np.einsum("nij,nj,nkj->nik", vecs, root, vecs)


# ---------------------------------------------------------------------------
# control sets


@dataclass(frozen=True)
class ControlSet:
    """Finite grid of admissible controls inside a convex hull (box or ball)."""

    points: np.ndarray  # (m, du)
    kind: str  # "box" or "ball"
    lo: np.ndarray = None  # box bounds, (du,)
    hi: np.ndarray = None
    radius: float = 0.0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if self.kind not in ("box", "ball"):
            raise ValidationError("control hull must be 'box' or 'ball'")
        if self.kind == "box":
            lo = np.asarray(self.lo, dtype=float).ravel()
            hi = np.asarray(self.hi, dtype=float).ravel()
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
            if np.any(lo > hi):
                raise ValidationError("box bounds reversed")
        elif self.radius <= 0:
            raise ValidationError("ball hull needs a positive radius")
        bad = ~self.contains(self.points)
        if np.any(bad):
            raise ValidationError("control grid point outside its own hull")

    @property
    def m(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def contains(self, u, tol=1e-9):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind == "box":
            return np.all((u >= self.lo - tol) & (u <= self.hi + tol), axis=1)
        return np.linalg.norm(u, axis=1) <= self.radius + tol

    def clip(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind == "box":
            return np.clip(u, self.lo, self.hi)
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        scale = np.where(norms > self.radius, self.radius / np.maximum(norms, 1e-300), 1.0)
        return u * scale

    @staticmethod
    def box(lo, hi, counts):
        """Uniform control grid on a box; counts = points per control axis."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        counts = np.broadcast_to(np.atleast_1d(counts), lo.shape)
        axes = [np.linspace(l, h, int(c)) for l, h, c in zip(lo, hi, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        return ControlSet(points=pts, kind="box", lo=lo, hi=hi)

    @staticmethod
    def ball(radius, counts, dim=1):
        """Control grid: box lattice intersected with the centered ball."""
        axes = [np.linspace(-radius, radius, int(counts))] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        pts = pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]
        return ControlSet(points=pts, kind="ball", radius=float(radius))


# ---------------------------------------------------------------------------
# growth scaffolding


@dataclass
class LyapunovData:
    """Coercive weight pair (V, W), cost profile h, and documented constants."""

    V: Callable
    gradV: Callable
    hessV: Callable
    W: Callable
    h: Callable
    C_L: float
    C_g: float
    C_h: float
    C_f: float
    C1: float
    C2: float
    Theta: Callable = None  # (x, t) -> (N,), spatial-variation envelope of Q
    h_conj: Callable = None

    def __post_init__(self):
        if self.C_h <= 1.0:
            raise ValidationError("upper cost-comparison constant must exceed 1")
        for name in ("C_L", "C_g", "C_f"):
            if getattr(self, name) < 0:
                raise ValidationError("%s must be nonnegative" % name)
        if self.h_conj is None:
            self.h_conj = conjugate_fn(self.h)
        if self.Theta is None:
            self.Theta = lambda x, t: np.zeros(np.atleast_2d(x).shape[0])

    @property
    def M(self):
        return envelope_rate(self.C_L)

    def gamma(self, horizon):
        return float(budget_level(self.C_L, horizon))

    def validate_profile(self, v_probe=None):
        """Sampled sanity checks: h(0)=0, h increasing and midpoint-convex."""
        if abs(float(self.h(0.0))) > 1e-12:
            raise ValidationError("cost profile must vanish at zero")
        v = np.linspace(0.0, 10.0, 41) if v_probe is None else np.asarray(v_probe)
        hv = np.array([float(self.h(x)) for x in v])
        if np.any(np.diff(hv) < -1e-12):
            raise ValidationError("cost profile must be nondecreasing")
        mid = np.array([float(self.h(0.5 * (v[i] + v[i + 2]))) for i in range(len(v) - 2)])
        if np.any(mid > 0.5 * (hv[:-2] + hv[2:]) + 1e-10):
            raise ValidationError("cost profile failed midpoint convexity")

    def validate_weights(self, grid):
        nodes = grid.nodes
        v_vals = np.asarray(self.V(nodes), dtype=float)
        w_vals = np.asarray(self.W(nodes), dtype=float)
        if v_vals.min() <= 0:
            raise ValidationError("V must be strictly positive")
        if w_vals.min() < 0:
            raise ValidationError("W must be nonnegative")
        if np.any(w_vals > v_vals + 1e-12):
            raise ValidationError("W must not exceed V on the grid")


# ---------------------------------------------------------------------------
# coefficient bundle


@dataclass
class CoefficientSet:
    dim: int
    A: Callable
    b: Callable
    Q: Callable
    f: Callable
    g: Callable
    controls: ControlSet
    default_control: np.ndarray
    lyapunov: LyapunovData
    dependence: str = "none"  # none | marginal | curve
    label: str = ""
    time_constant: bool = True  # coefficients have no explicit time dependence

    def __post_init__(self):
        self.default_control = np.atleast_1d(np.asarray(self.default_control, dtype=float))
        if self.dependence not in ("none", "marginal", "curve"):
            raise ValidationError("dependence must be none, marginal, or curve")
        if not self.controls.contains(self.default_control[None, :])[0]:
            raise ValidationError("default control lies outside the control hull")

    @property
    def control_dim(self):
        return self.controls.dim

    def drift_velocity(self, x, t, curve, u):
        """b + Q u at positions x; u is a single control or one per position."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        bv = np.asarray(self.b(x, t, curve), dtype=float)
        qv = np.asarray(self.Q(x, t, curve), dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return bv + qv @ u
        return bv + np.einsum("nij,nj->ni", qv, u)

    def check_psd(self, grid, times, curve=None):
        """Verify A is symmetric PSD (eigenvalues >= -1e-12) on grid x times."""
        nodes = grid.nodes
        for t in np.atleast_1d(times):
            mats = np.asarray(self.A(nodes, float(t), curve), dtype=float)
            sym_err = np.max(np.abs(mats - np.swapaxes(mats, 1, 2)))
            if sym_err > 1e-10:
                raise ValidationError("diffusion matrix asymmetric by %.3e" % sym_err)
            vals = np.linalg.eigvalsh(mats)
            if vals.min() < PSD_TOL:
                k = int(np.argmin(vals.min(axis=1)))
                raise ValidationError(
                    "diffusion matrix not PSD at node %d, t=%.4g (eigenvalue %.3e)"
                    % (k, t, vals.min())
                )
