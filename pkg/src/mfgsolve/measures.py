"""Probability curves on the grid, mollification, and conditional families.

A measure curve stores one probability vector per time node (cell-mass
convention: weights sum to one, density = weight / dx^d).  The smoothing
operation follows the space-time recipe

    mu_t^eps(y) = eps*phi(y)
                  + ((1-eps)/eps) * int_t^{t+eps} sum_z w_eps(y-z) mu_s(z) ds

with phi a standard Gaussian profile on the grid and w_eps a compactly
supported polynomial bump of width eps, column-normalized so each source
cell spreads exactly its own mass.  A control payload u(z, s) is averaged
with the matching weights and divided by the smoothed mass, which keeps
sup |u_eps| <= sup |u| and transports every convex-inequality budget.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .grids import StateGrid, TimeGrid
from .tables import read_csv, write_csv

MASS_TOL = 1e-9
NEG_TOL = -1e-12


class MeasureCurve:
    """Time-indexed family of probability vectors on a state grid."""

    def __init__(self, grid: StateGrid, tgrid: TimeGrid, weights, mass_tol=MASS_TOL):
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (tgrid.steps + 1, grid.n_nodes):
            raise ValidationError(
                "curve weights must have shape (K+1, n_nodes) = %r, got %r"
                % ((tgrid.steps + 1, grid.n_nodes), weights.shape)
            )
        if weights.min(initial=0.0) < NEG_TOL:
            k, i = np.unravel_index(np.argmin(weights), weights.shape)
            raise ValidationError(
                "negative weight %.3e at time node %d, cell %d" % (weights[k, i], k, i)
            )
        masses = weights.sum(axis=1)
        worst = np.argmax(np.abs(masses - 1.0))
        if abs(masses[worst] - 1.0) > mass_tol:
            raise ValidationError(
                "slice %d has mass %.12f (tolerance %.1e)" % (worst, masses[worst], mass_tol)
            )
        self.grid = grid
        self.tgrid = tgrid
        self.weights = weights

    def slice(self, k):
        return self.weights[k]

    def moment(self, values):
        """<values, mu_t> for every time node; values = array on nodes or callable."""
        vals = values(self.grid.nodes) if callable(values) else np.asarray(values, dtype=float)
        return self.weights @ vals

    def mix(self, other, lam):
        """Convex combination (1-lam)*self + lam*other on shared grids."""
        self.grid.require_same(other.grid, "mixed curve")
        self.tgrid.require_same(other.tgrid, "mixed curve")
        return MeasureCurve(
            self.grid, self.tgrid, (1.0 - lam) * self.weights + lam * other.weights
        )

    def to_csv(self, path):
        times = self.tgrid.times
        nodes = self.grid.nodes
        rows = []
        for k in range(self.tgrid.steps + 1):
            for i in range(self.grid.n_nodes):
                coords = list(nodes[i])
                rows.append([times[k]] + coords + [self.weights[k, i]])
        header = ["t", "x1", "weight"] if self.grid.dim == 1 else ["t", "x1", "x2", "weight"]
        write_csv(path, header, rows)

    @staticmethod
    def from_csv(path, grid: StateGrid, tgrid: TimeGrid):
        _, data = read_csv(path)
        w = data[:, -1].reshape(tgrid.steps + 1, grid.n_nodes)
        return MeasureCurve(grid, tgrid, w)


def constant_curve(grid, tgrid, law):
    """Curve frozen at a single law (used to bootstrap coefficient environments)."""
    law = np.asarray(law, dtype=float)
    return MeasureCurve(grid, tgrid, np.tile(law, (tgrid.steps + 1, 1)))


def moment(curve: MeasureCurve, values):
    return curve.moment(values)


def v_weak_gap(curve_n: MeasureCurve, curve: MeasureCurve, zeta):
    """max_t |<zeta, mu^n_t - mu_t>| — quantitative weak-convergence probe."""
    curve.grid.require_same(curve_n.grid, "compared curve")
    curve.tgrid.require_same(curve_n.tgrid, "compared curve")
    vals = zeta(curve.grid.nodes) if callable(zeta) else np.asarray(zeta, dtype=float)
    return float(np.max(np.abs((curve_n.weights - curve.weights) @ vals)))


# ---------------------------------------------------------------------------
# initial laws


def normalize_law(w):
    w = np.asarray(w, dtype=float)
    if w.min(initial=0.0) < 0:
        raise ValidationError("law has negative weights")
    s = w.sum()
    if s <= 0:
        raise ValidationError("law has zero total mass")
    return w / s

def gaussian_law(grid: StateGrid, mean=0.0, std=1.0):
    """Cell masses proportional to an isotropic Gaussian density."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float).ravel(), (grid.dim,))
    d2 = ((grid.nodes - mean[None, :]) ** 2).sum(axis=1)
    return normalize_law(np.exp(-0.5 * d2 / std**2))


def uniform_law(grid: StateGrid):
    return np.full(grid.n_nodes, 1.0 / grid.n_nodes)


def point_law(grid: StateGrid, x0=0.0):
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).ravel(), (grid.dim,))
    idx = grid.nearest_index(x0[None, :])[0]
    w = np.zeros(grid.n_nodes)
    w[idx] = 1.0
    return w


# ---------------------------------------------------------------------------
# mollification


def bump_kernel_matrix(grid: StateGrid, eps):
    """Column-normalized bump weights Omega[y, z] on |y-z| < eps.

    Profile (1 - (r/eps)^2)^3; the diagonal entry is always in the support,
    so no column is empty and each source cell spreads exactly its mass.
    """
    pts = grid.nodes
    diff = pts[None, :, :] - pts[:, None, :]
    r2 = (diff**2).sum(axis=2) / eps**2
    w = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 3, 0.0)
    return w / w.sum(axis=0, keepdims=True)


@dataclass
class MollifyResult:
    curve: MeasureCurve
    payload: Optional[np.ndarray]  # (K_out+1, n_nodes[, du]) or None
    eps_eff: float
    r_steps: int
    phi_weights: np.ndarray
    kernel: np.ndarray


def mollify_curve(curve: MeasureCurve, eps, payload=None) -> MollifyResult:
    """Smooth a curve (and optionally a per-step control payload) in space-time.

    eps is rounded to a whole number of time steps (r >= 1); the output
    curve lives on time nodes t <= T - eps_eff.  Post-conditions checked
    here: every slice has mass 1 +- 1e-8, strictly positive weights, and
    sup |payload_eps| <= sup |payload|.
    """
    tg = curve.tgrid
    r = int(round(eps / tg.dt))
    if r < 1:
        raise ValidationError("mollifier width %.3e below one time step %.3e" % (eps, tg.dt))
    eps_eff = r * tg.dt
    if eps_eff >= min(1.0, tg.horizon):
        raise ValidationError(
            "mollifier width %.3e must stay below min(1, horizon=%.3e)" % (eps_eff, tg.horizon)
        )
    k_out = tg.steps - r  # last admissible time node index
    if k_out < 1:
        raise ValidationError(
            "mollifier spans %d of %d steps; need at least two output time nodes"
            % (r, tg.steps)
        )
    omega = bump_kernel_matrix(curve.grid, eps_eff)
    phi = gaussian_law(curve.grid)

    if payload is not None:
        payload = np.asarray(payload, dtype=float)
        if payload.shape[0] < tg.steps or payload.shape[1] != curve.grid.n_nodes:
            raise ValidationError("payload must be per-step values (K, n_nodes[, du])")

    new_w = np.empty((k_out + 1, curve.grid.n_nodes))
    new_u = None if payload is None else np.empty((k_out + 1,) + payload.shape[1:])
    scale = (1.0 - eps_eff) / eps_eff
    for k in range(k_out + 1):
        window = curve.weights[k : k + r]  # left-endpoint quadrature, weight dt each
        avg = tg.dt * window.sum(axis=0)
        new_w[k] = eps_eff * phi + scale * (omega @ avg)
        if payload is not None:
            flat = payload[k : k + r].reshape(r, curve.grid.n_nodes, -1)
            weighted = tg.dt * np.einsum("snu,sn->nu", flat, window)
            num = scale * (omega @ weighted)
            new_u[k] = (num / new_w[k][:, None]).reshape(payload.shape[1:])

    out_tg = TimeGrid(horizon=k_out * tg.dt, steps=k_out)
    out_curve = MeasureCurve(curve.grid, out_tg, new_w, mass_tol=1e-8)
    if new_w.min() <= 0:
        raise ValidationError("mollified curve lost strict positivity")
    if payload is not None:
        sup_in = np.max(np.linalg.norm(payload.reshape(payload.shape[0], payload.shape[1], -1), axis=2))
        sup_out = np.max(np.linalg.norm(new_u.reshape(new_u.shape[0], new_u.shape[1], -1), axis=2))
        if sup_out > sup_in * (1 + 1e-12) + 1e-15:
            raise ValidationError(
                "mollified payload sup %.6e exceeds input sup %.6e" % (sup_out, sup_in)
            )
    return MollifyResult(out_curve, new_u, eps_eff, r, phi, omega)


def mollified_budget_gap(result: MollifyResult, curve: MeasureCurve, payload, h):
    """Worst signed gap of the convexity budget estimate, per output node.

    For each output time node k the smoothed running cost must satisfy
      sum_y h(|u_eps(k,y)|) mu^eps_k(y)
        <= ((1-eps)/eps) * sum_{s=k}^{k+r-1} dt * sum_z h(|u(s,z)|) mu_s(z).
    Returns max over k of (lhs - rhs); non-positive (up to slack) means pass.
    """
    payload = np.asarray(payload, dtype=float)
    flat = payload.reshape(payload.shape[0], payload.shape[1], -1)
    mag = np.linalg.norm(flat, axis=2)
    if result.payload is None:
        raise ValidationError("mollification carried no payload; nothing to bound")
    r, eps = result.r_steps, result.eps_eff
    scale = (1.0 - eps) / eps
    k_out = result.payload.shape[0] - 1
    gaps = []
    for k in range(k_out + 1):
        u_eps = result.payload[k].reshape(result.curve.grid.n_nodes, -1)
        lhs = float(np.dot(h(np.linalg.norm(u_eps, axis=1)), result.curve.weights[k]))
        rhs = scale * curve.tgrid.dt * float(
            sum(np.dot(h(mag[s]), curve.weights[s]) for s in range(k, k + r))
        )
        gaps.append(lhs - rhs)
    return float(max(gaps))


def subprob_jensen_check(phi, xi, omega, slack=1e-12):
    """Check phi(sum xi*omega) <= sum phi(xi)*omega for a sub-probability omega.

    phi must be convex, nonnegative, with phi(0) = 0; then the inequality
    holds even when omega has total mass < 1 (the missing mass sits at 0).
    Returns (ok, lhs, rhs).
    """
    xi = np.asarray(xi, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.min(initial=0.0) < 0 or omega.sum() > 1 + 1e-12:
        raise ValidationError("omega must be a sub-probability vector")
    lhs = float(phi(float(np.dot(xi, omega))))
    rhs = float(np.dot([phi(float(v)) for v in xi], omega))
    return lhs <= rhs + slack, lhs, rhs


# ---------------------------------------------------------------------------
# conditional families


@dataclass
class ConditionalFamily:
    """Per-(step, cell) distributions over the control grid.

    cond[k, :, i] sums to one where defined[k, i]; cells carrying no mass
    are flagged undefined rather than invented.
    """

    cond: np.ndarray  # (K, m, n_nodes)
    defined: np.ndarray  # (K, n_nodes) bool
    marginal: np.ndarray  # (K, n_nodes)

    def recompose(self):
        return self.cond * self.marginal[:, None, :]


def conditional_family(weights, mass_floor=0.0) -> ConditionalFamily:
    """Disintegrate occupation weights (K, m, n) into control conditionals."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 3:
        raise ValidationError("occupation weights must be (K, m, n_nodes)")
    marginal = weights.sum(axis=1)
    defined = marginal > mass_floor
    safe = np.where(defined, marginal, 1.0)
    cond = weights / safe[:, None, :]
    cond[~np.repeat(defined[:, None, :], weights.shape[1], axis=1)] = 0.0
    fam = ConditionalFamily(cond=cond, defined=defined, marginal=marginal)
    recon = fam.recompose()
    err = np.max(np.abs(recon - np.where(defined[:, None, :], weights, 0.0)))
    if err > 1e-12:
        raise ValidationError("conditional recomposition error %.3e exceeds 1e-12" % err)
    return fam
