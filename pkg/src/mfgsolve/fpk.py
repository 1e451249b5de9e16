"""Conservative finite-volume transport on the truncated box.

The discrete generator G acts on test vectors (functions on nodes): central
second differences carry the diffusion with the coefficient matrix inside
the second derivative, upwind first differences carry the drift b + Q u,
and all off-diagonal rates are nonnegative so that G is a rate matrix.
Cell masses evolve by the transpose: explicit Euler

    m_{k+1} = m_k + dt * G_k^T m_k

preserves mass exactly (interior row sums vanish) and positivity under the
CFL condition dt * max|diag(G)| <= cfl_max, while the implicit variant
(I - dt G^T) m_{k+1} = m_k is an M-matrix solve, positive for any dt.

Boundaries are no-flux: axis rates pointing outside are cancelled
(reflecting), except that the 2D mixed-derivative corner rates crossing
the boundary are dropped from the off-diagonal only, producing explicit,
accounted leakage rows (row sum < 0).  The per-step duality identity
<psi, m_{k+1} - m_k> = dt <G psi, m_k> holds to rounding in explicit mode.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .coefficients import CoefficientSet
from .errors import (
    NumericalError,
    SchemeError,
    StepSizeError,
    ValidationError,
)
from .grids import StateGrid, TimeGrid
from .measures import MeasureCurve, constant_curve, normalize_law
from .tables import write_csv

ROWSUM_TOL = 1e-12
NEG_TOL = -1e-12


def _stencil_1d(grid: StateGrid, a, v):
    """Rate matrix for d=1: a = diffusion (N,), v = drift velocity (N,)."""
    n = grid.npts
    dx = grid.dx
    if a.min() < -1e-14:
        raise SchemeError("negative diffusion coefficient %.3e" % a.min())
    up = np.maximum(a, 0.0) / dx**2 + np.maximum(v, 0.0) / dx
    dn = np.maximum(a, 0.0) / dx**2 + np.maximum(-v, 0.0) / dx
    up_eff = up.copy()
    dn_eff = dn.copy()
    up_eff[-1] = 0.0  # reflecting walls: outward rates cancelled
    dn_eff[0] = 0.0
    diag = -(up_eff + dn_eff)
    mat = sparse.diags(
        [dn_eff[1:], diag, up_eff[:-1]], offsets=[-1, 0, 1], format="csr"
    )
    return mat


def _stencil_2d(grid: StateGrid, a_mats, v):
    """Rate matrix for d=2 with sign-oriented corner stencil for the mixed term."""
    n = grid.npts
    dx = grid.dx
    n_nodes = grid.n_nodes
    a11 = a_mats[:, 0, 0]
    a22 = a_mats[:, 1, 1]
    a12 = 0.5 * (a_mats[:, 0, 1] + a_mats[:, 1, 0])
    off = np.abs(a12)
    head = np.minimum(a11, a22) - off
    if head.min() < -1e-12:
        worst = int(np.argmin(head))
        raise SchemeError(
            "mixed-derivative stencil loses monotonicity at node %d (x=%s): "
            "|a12|=%.4g exceeds min(a11,a22)=%.4g; reduce the off-diagonal "
            "diffusion or refine the model"
            % (worst, np.round(grid.nodes[worst], 4).tolist(), off[worst], min(a11[worst], a22[worst]))
        )
    off = np.minimum(off, np.minimum(a11, a22))
    idx = np.arange(n_nodes)
    i1, i2 = idx // n, idx % n
    s = np.where(a12 >= 0.0, 1, -1)

    rows, cols, vals = [], [], []
    diag = np.zeros(n_nodes)

    def add_axis(rate, mask, shift):
        nonlocal diag
        keep = mask & (rate > 0)
        rows.append(idx[keep])
        cols.append(idx[keep] + shift)
        vals.append(rate[keep])
        diag[keep] -= rate[keep]  # reflecting: only where the neighbor exists

    r_xp = (a11 - off) / dx**2 + np.maximum(v[:, 0], 0.0) / dx
    r_xm = (a11 - off) / dx**2 + np.maximum(-v[:, 0], 0.0) / dx
    r_yp = (a22 - off) / dx**2 + np.maximum(v[:, 1], 0.0) / dx
    r_ym = (a22 - off) / dx**2 + np.maximum(-v[:, 1], 0.0) / dx
    add_axis(r_xp, i1 < n - 1, n)
    add_axis(r_xm, i1 > 0, -n)
    add_axis(r_yp, i2 < n - 1, 1)
    add_axis(r_ym, i2 > 0, -1)

    c_rate = off / dx**2
    # corner (+1, +s) and (-1, -s); out-of-domain corner rates leak
    for sign in (1, -1):
        di1 = sign
        di2 = sign * s
        exists = ((i1 + di1 >= 0) & (i1 + di1 <= n - 1) &
                  (i2 + di2 >= 0) & (i2 + di2 <= n - 1))
        keep = exists & (c_rate > 0)
        rows.append(idx[keep])
        cols.append(idx[keep] + di1 * n + di2[keep])
        vals.append(c_rate[keep])
        diag -= np.where(c_rate > 0, c_rate, 0.0)  # full outflow kept: leakage

    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes),
    )
    return mat


def build_step_generator(grid: StateGrid, a_mats, v):
    """Single-step rate matrix from diffusion matrices (N,d,d) and drift (N,d)."""
    a_mats = np.asarray(a_mats, dtype=float)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if grid.dim == 1:
        return _stencil_1d(grid, a_mats[:, 0, 0], v[:, 0])
    return _stencil_2d(grid, a_mats, v)


@dataclass
class ControlField:
    """Feedback control on the grid: one control vector per (time step, node)."""

    grid: StateGrid
    tgrid: TimeGrid
    values: np.ndarray  # (K, n_nodes, du)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.shape[:2] != (self.tgrid.steps, self.grid.n_nodes):
            raise ValidationError(
                "control field must be (K, n_nodes, du); got %r" % (self.values.shape,)
            )

    @property
    def du(self):
        return self.values.shape[2]

    @staticmethod
    def constant(grid, tgrid, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        vals = np.tile(u, (tgrid.steps, grid.n_nodes, 1))
        return ControlField(grid, tgrid, vals)

    def lookup(self, x, k):
        """Nearest-node control values for off-grid positions x."""
        idx = self.grid.nearest_index(x)
        return self.values[min(k, self.tgrid.steps - 1), idx]

    def magnitudes(self):
        return np.linalg.norm(self.values, axis=2)

    def to_csv(self, path):
        rows = []
        for k in range(self.values.shape[0]):
            for i in range(self.values.shape[1]):
                rows.append([k, i] + list(self.values[k, i]))
        du = self.values.shape[2]
        write_csv(path, ["k", "i"] + ["u%d" % (c + 1) for c in range(du)], rows)


class GeneratorFactory:
    """Lazily builds (and caches, when time-invariant) per-step generators."""

    def __init__(self, coeffs: CoefficientSet, env_curve, grid, tgrid, control):
        self.coeffs = coeffs
        self.env = env_curve
        self.grid = grid
        self.tgrid = tgrid
        self.control = control
        self._fixed_u = None
        if isinstance(control, ControlField):
            control.grid.require_same(grid, "control field")
            control.tgrid.require_same(tgrid, "control field")
        else:
            self._fixed_u = np.atleast_1d(np.asarray(control, dtype=float))
        self._stationary = (
            self._fixed_u is not None
            and coeffs.dependence == "none"
            and getattr(coeffs, "time_constant", True)
        )
        self._cache = {}

    def __call__(self, k):
        key = 0 if self._stationary else k
        if key not in self._cache:
            t = self.tgrid.times[key]
            nodes = self.grid.nodes
            a_mats = np.asarray(self.coeffs.A(nodes, t, self.env), dtype=float)
            if self._fixed_u is not None:
                v = self.coeffs.drift_velocity(nodes, t, self.env, self._fixed_u)
            else:
                v = self.coeffs.drift_velocity(nodes, t, self.env, self.control.values[key])
            mat = build_step_generator(self.grid, a_mats, v)
            rowsum = np.asarray(mat.sum(axis=1)).ravel()
            self._cache[key] = (mat, mat.T.tocsr(), rowsum)
            if not self._stationary and len(self._cache) > 4:
                # keep the cache small on long time-varying runs
                oldest = min(c for c in self._cache if c != key)
                del self._cache[oldest]
        return self._cache[key]


@dataclass
class DiscreteGenerator:
    """Validated per-step rate matrices for one control choice."""

    grid: StateGrid
    tgrid: TimeGrid
    factory: Callable  # k -> (G, G^T, rowsums)

    def mat(self, k):
        return self.factory(k)[0]

    def rowsums(self, k):
        return self.factory(k)[2]

    def validate(self, steps=None):
        steps = steps if steps is not None else sorted({0, self.tgrid.steps // 2, self.tgrid.steps - 1})
        for k in steps:
            mat, _, rowsum = self.factory(k)
            coo = mat.tocoo()
            off = coo.data[coo.row != coo.col]
            if len(off) and off.min() < -ROWSUM_TOL:
                raise SchemeError("negative off-diagonal rate %.3e at step %d" % (off.min(), k))
            interior = self._interior_mask()
            bad = np.abs(rowsum[interior]).max(initial=0.0)
            if bad > ROWSUM_TOL:
                raise SchemeError("interior row sum %.3e at step %d" % (bad, k))
            if rowsum.max(initial=0.0) > ROWSUM_TOL:
                raise SchemeError("positive boundary row sum %.3e at step %d" % (rowsum.max(), k))
        return True

    def _interior_mask(self):
        n = self.grid.npts
        if self.grid.dim == 1:
            mask = np.zeros(n, dtype=bool)
            mask[1:-1] = True
            return mask
        idx = np.arange(self.grid.n_nodes)
        i1, i2 = idx // n, idx % n
        return (i1 > 0) & (i1 < n - 1) & (i2 > 0) & (i2 < n - 1)


def build_generator(coeffs, env_curve, grid, tgrid, control) -> DiscreteGenerator:
    """Generator under a fixed control vector or a feedback ControlField."""
    factory = GeneratorFactory(coeffs, env_curve, grid, tgrid, control)
    return DiscreteGenerator(grid=grid, tgrid=tgrid, factory=factory)


def build_generator_table(coeffs, env_curve, grid, tgrid):
    """Per-(step, control-point) generators used by the best-response program."""
    out = []
    nodes = grid.nodes
    stationary = coeffs.dependence == "none" and getattr(coeffs, "time_constant", True)
    for k in range(tgrid.steps):
        t = tgrid.times[k]
        if k and stationary:
            out.append(out[0])
            continue
        a_mats = np.asarray(coeffs.A(nodes, t, env_curve), dtype=float)
        b_vec = np.asarray(coeffs.b(nodes, t, env_curve), dtype=float)
        q_mat = np.asarray(coeffs.Q(nodes, t, env_curve), dtype=float)
        row = []
        for u in coeffs.controls.points:
            v = b_vec + q_mat @ u
            row.append(build_step_generator(grid, a_mats, v))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# forward solve


@dataclass
class SolveReport:
    curve: MeasureCurve
    mass_defect: np.ndarray  # (K+1,), first entry 0
    leakage: np.ndarray  # (K+1,), per-step leaked mass
    v_moment: np.ndarray  # (K+1,)
    cfl_margin: float  # max over steps of dt*max|diag| (explicit; 0 implicit)
    mode: str
    renormalized_steps: list

    @property
    def total_leakage(self):
        return float(self.leakage.sum())

    def to_csv(self, path):
        times = self.curve.tgrid.times
        rows = [
            [times[k], self.mass_defect[k], self.leakage[k], self.v_moment[k]]
            for k in range(len(times))
        ]
        write_csv(path, ["t", "mass_defect", "leakage", "V_moment"], rows)


def solve_fpk(
    coeffs: CoefficientSet,
    nu,
    grid: StateGrid,
    tgrid: TimeGrid,
    control=None,
    env_curve=None,
    mode="explicit",
    renormalize=False,
    leak_budget=1e-3,
    cfl_max=0.9,
    generator: Optional[DiscreteGenerator] = None,
) -> SolveReport:
    """March the transport equation forward from the initial law nu.

    control: fixed control vector or ControlField (defaults to the model's
    default control).  env_curve: frozen population curve the coefficients
    see; defaults to the initial law held constant in time.
    """
    if mode not in ("explicit", "implicit"):
        raise ValidationError("mode must be 'explicit' or 'implicit'")
    nu = normalize_law(np.asarray(nu, dtype=float))
    if len(nu) != grid.n_nodes:
        raise ValidationError("initial law has %d weights for %d nodes" % (len(nu), grid.n_nodes))
    if control is None:
        control = coeffs.default_control
    if env_curve is None:
        env_curve = constant_curve(grid, tgrid, nu)
    if generator is None:
        generator = build_generator(coeffs, env_curve, grid, tgrid, control)

    K = tgrid.steps
    dt = tgrid.dt
    n = grid.n_nodes
    weights = np.empty((K + 1, n))
    weights[0] = nu
    mass_defect = np.zeros(K + 1)
    leakage = np.zeros(K + 1)
    renorm_steps = []
    cfl_margin = 0.0
    m = nu.copy()
    factor_cache = {}
    for k in range(K):
        mat, mat_t, rowsum = generator.factory(k)
        if mode == "explicit":
            step_cfl = dt * float(np.max(-mat.diagonal()))
            cfl_margin = max(cfl_margin, step_cfl)
            if step_cfl > cfl_max:
                worst = int(np.argmax(-mat.diagonal()))
                raise StepSizeError(
                    "CFL violation at step %d: dt*max|diag| = %.4g > %.2g at node %d "
                    "(x=%s); largest stable dt ~ %.4g"
                    % (
                        k,
                        step_cfl,
                        cfl_max,
                        worst,
                        np.round(grid.nodes[worst], 4).tolist(),
                        cfl_max * dt / step_cfl,
                    )
                )
            m1 = m + dt * (mat_t @ m)
            leak = -dt * float(rowsum @ m)
        else:
            key = id(mat)  # stationary factories reuse one matrix object
            if key not in factor_cache:
                lhs = sparse.eye(n, format="csc") - dt * mat.T.tocsc()
                factor_cache.clear()
                factor_cache[key] = splu(lhs)
            m1 = factor_cache[key].solve(m)
            leak = -dt * float(rowsum @ m1)
        neg = float(m1.min(initial=0.0))
        if neg < NEG_TOL:
            raise NumericalError(
                "negative mass %.3e at step %d (mode=%s)" % (neg, k + 1, mode)
            )
        np.clip(m1, 0.0, None, out=m1)
        defect = abs(m1.sum() - m.sum() + leak)
        if renormalize:
            s = m1.sum()
            if abs(s - 1.0) > 1e-15:
                m1 /= s
                renorm_steps.append(k + 1)
        mass_defect[k + 1] = defect
        leakage[k + 1] = leak
        weights[k + 1] = m1
        m = m1

    total_leak = float(leakage.sum())
    if total_leak > leak_budget:
        first = int(np.argmax(np.cumsum(leakage) > leak_budget))
        raise NumericalError(
            "cumulative boundary leakage %.3e exceeds budget %.1e (first breach at step %d)"
            % (total_leak, leak_budget, first)
        )
    mass_tol = 1e-9 if not renormalize else 1e-12
    curve = MeasureCurve(grid, tgrid, weights, mass_tol=max(mass_tol, total_leak * 1.01 + 1e-12))
    v_moment = curve.moment(lambda x: coeffs.lyapunov.V(x))
    return SolveReport(
        curve=curve,
        mass_defect=mass_defect,
        leakage=leakage,
        v_moment=v_moment,
        cfl_margin=cfl_margin,
        mode=mode,
        renormalized_steps=renorm_steps,
    )


def weak_residual(generator: DiscreteGenerator, curve: MeasureCurve, psi, mode="explicit"):
    """Worst per-step defect of the discrete duality identity for a test vector."""
    psi = np.asarray(psi, dtype=float)
    worst = 0.0
    dt = curve.tgrid.dt
    for k in range(curve.tgrid.steps):
        mat = generator.mat(k)
        lhs = float(psi @ (curve.weights[k + 1] - curve.weights[k]))
        ref = curve.weights[k] if mode == "explicit" else curve.weights[k + 1]
        rhs = dt * float((mat @ psi) @ ref)
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# monitors


@dataclass
class MonitorReport:
    name: str
    passed: bool
    worst_violation: float
    detail: str

    def __str__(self):
        return "[%s] %s  worst violation %.3e  %s" % (
            "PASS" if self.passed else "FAIL",
            self.name,
            self.worst_violation,
            self.detail,
        )


def gronwall_monitor(curve: MeasureCurve, v_values, w_curve_values, rate, rel_tol=1e-8):
    """Check <V, mu_t> <= (<V, nu> + sum_{s<t} dt e^{-rate*s} <Wcal_s, mu_s>) e^{rate*t}."""
    v_values = np.asarray(v_values, dtype=float)
    lhs = curve.weights @ v_values
    times = curve.tgrid.times
    if w_curve_values is None:
        w_terms = np.zeros(len(times))
    else:
        w_vals = np.asarray(w_curve_values, dtype=float)
        if w_vals.ndim == 1:
            w_vals = np.tile(w_vals, (len(times), 1))
        w_terms = np.einsum("kn,kn->k", curve.weights, w_vals)
    integ = np.concatenate(
        [[0.0], np.cumsum(curve.tgrid.dt * np.exp(-rate * times[:-1]) * w_terms[:-1])]
    )
    rhs = (lhs[0] + integ) * np.exp(rate * times)
    rel = (lhs - rhs) / np.maximum(np.abs(rhs), 1.0)
    worst = float(rel.max())
    k = int(np.argmax(rel))
    return MonitorReport(
        name="gronwall-envelope",
        passed=bool(worst <= rel_tol),
        worst_violation=worst,
        detail="at t=%.4g (lhs %.6g vs rhs %.6g)" % (times[k], lhs[k], rhs[k]),
    )


def apriori_monitor(curve: MeasureCurve, lyap, R, budget_value=None, rel_tol=1e-9):
    """Check the moment envelope <V, mu_t> <= R e^{M t} and the control budget."""
    v_vals = curve.moment(lambda x: lyap.V(x))
    env = R * np.exp(lyap.M * curve.tgrid.times)
    rel = (v_vals - env) / np.maximum(env, 1.0)
    worst = float(rel.max())
    k = int(np.argmax(rel))
    env_report = MonitorReport(
        name="moment-envelope",
        passed=bool(worst <= rel_tol),
        worst_violation=worst,
        detail="at t=%.4g (moment %.6g vs envelope %.6g)" % (curve.tgrid.times[k], v_vals[k], env[k]),
    )
    if budget_value is None:
        return env_report
    gamma_r = lyap.gamma(curve.tgrid.horizon) * R
    gap = float(budget_value - gamma_r)
    budget_report = MonitorReport(
        name="control-budget",
        passed=bool(gap <= rel_tol * max(gamma_r, 1.0)),
        worst_violation=gap,
        detail="budget %.6g vs level %.6g" % (budget_value, gamma_r),
    )
    return env_report, budget_report


def control_budget(curve: MeasureCurve, field: ControlField, h):
    """Time-integral of the control cost h(|u|) along the curve (left endpoints)."""
    mags = field.magnitudes()
    hv = np.asarray(h(mags), dtype=float)
    return float(curve.tgrid.dt * np.einsum("kn,kn->", hv, curve.weights[:-1]))
