"""Single-agent optimal control against a frozen population curve.

The control problem on the grid is a finite-horizon Markov decision
process: at each step the agent picks a point from the finite control
set, pays dt * f, and the state moves by the explicit kernel
I + dt G_{k,j}.  Its linear-programming relaxation optimizes over
occupation weights pi(k, j, i) >= 0 subject to the forward dynamics;
optional rows enforce the moment envelope <V, mu_t> <= R e^{Mt} and the
integrated control budget <= gamma R.  When those side rows are absent
or slack, backward dynamic programming solves the same problem exactly
(the relaxation of a finite MDP is tight), so the LP machinery only runs
when a constraint is genuinely active.  Ties in the DP argmin break to
the lowest control index, which keeps reruns bit-identical.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .coefficients import CoefficientSet
from .errors import InfeasibleError, NumericalError, ValidationError
from .fpk import ControlField, build_generator_table, solve_fpk
from .grids import StateGrid, TimeGrid
from .measures import MeasureCurve, constant_curve, normalize_law
from .tables import write_csv

STEP_MASS_TOL = 1e-10
TIE_TOL = 1e-12
JENSEN_SLACK = 1e-8


@dataclass
class OccupationMeasure:
    """Relaxed control plan: joint weights over (time step, control point, node)."""

    grid: StateGrid
    tgrid: TimeGrid
    control_points: np.ndarray  # (m, du)
    weights: np.ndarray  # (K, m, n), nonnegative
    mass_tol: float = STEP_MASS_TOL

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        K, m, n = self.tgrid.steps, len(self.control_points), self.grid.n_nodes
        if self.weights.shape != (K, m, n):
            raise ValidationError(
                "occupation weights must be (K=%d, m=%d, n=%d); got %r"
                % (K, m, n, self.weights.shape)
            )
        if self.weights.min(initial=0.0) < -1e-12:
            raise ValidationError(
                "negative occupation weight %.3e" % self.weights.min()
            )
        sums = self.weights.sum(axis=(1, 2))
        err = float(np.abs(sums - 1.0).max())
        if err > self.mass_tol:
            k = int(np.argmax(np.abs(sums - 1.0)))
            raise ValidationError(
                "occupation step mass off by %.3e at step %d (tol %.1e)"
                % (err, k, self.mass_tol)
            )

    def state_marginals(self):
        """Per-step state weights mu_k(i) = sum_j pi(k, j, i); shape (K, n)."""
        return self.weights.sum(axis=1)

    def control_usage(self):
        """Total weight each control point receives over the run; shape (m,)."""
        return self.weights.sum(axis=(0, 2)) * self.tgrid.dt

    def to_csv(self, path, threshold=0.0):
        rows = []
        K, m, n = self.weights.shape
        for k in range(K):
            for j in range(m):
                for i in range(n):
                    w = self.weights[k, j, i]
                    if w > threshold:
                        rows.append([k, j, i, w])
        write_csv(path, ["k", "j", "i", "weight"], rows)


@dataclass
class BestResponse:
    occupation: OccupationMeasure
    value: float
    curve: MeasureCurve  # state marginals incl. the pushed terminal slice
    method: str  # "dp" or "lp"
    residuals: dict = field(default_factory=dict)


def _tables(coeffs, env_curve, grid, tgrid):
    """Running/terminal cost tables and per-(step, control) kernels.

    The one-step kernels I + dt G must be entrywise nonnegative (they are
    substochastic matrices of a controlled chain); this is the same CFL
    restriction as the explicit transport march.
    """
    gens = build_generator_table(coeffs, env_curve, grid, tgrid)
    K = tgrid.steps
    dt = tgrid.dt
    pts = coeffs.controls.points
    m, n = len(pts), grid.n_nodes
    f_tab = np.empty((K, m, n))
    stationary = coeffs.dependence == "none" and coeffs.time_constant
    for k in range(K):
        if k and stationary:
            f_tab[k] = f_tab[0]
            continue
        t = tgrid.times[k]
        for j, u in enumerate(pts):
            uu = np.broadcast_to(u, (n, len(u)))
            f_tab[k, j] = np.asarray(coeffs.f(uu, grid.nodes, t, env_curve), dtype=float)
    g_vec = np.asarray(coeffs.g(grid.nodes, env_curve), dtype=float)
    kernels = []
    eye = sparse.eye(n, format="csr")
    worst_rate = 0.0
    for k in range(K):
        if k and stationary:
            kernels.append(kernels[0])
            continue
        row = []
        for g in gens[k]:
            worst_rate = max(worst_rate, float(np.max(-g.diagonal())))
            row.append((eye + dt * g).tocsr())
        kernels.append(row)
    if dt * worst_rate > 1.0:
        from .errors import StepSizeError

        raise StepSizeError(
            "one-step kernel loses positivity: dt*max|diag| = %.3g > 1; "
            "use at least %d time steps on this grid"
            % (dt * worst_rate, int(np.ceil(tgrid.horizon * worst_rate / 0.9)))
        )
    return f_tab, g_vec, kernels


def _dp_solve(nu, f_tab, g_vec, kernels, dt, tie_tol=TIE_TOL):
    """Backward value recursion + forward push; returns (value, pi, policy, W0)."""
    K, m, n = f_tab.shape
    W = g_vec.copy()
    policy = np.empty((K, n), dtype=np.int64)
    values = [None] * (K + 1)
    values[K] = W
    for k in range(K - 1, -1, -1):
        cand = np.empty((m, n))
        for j in range(m):
            cand[j] = dt * f_tab[k, j] + kernels[k][j] @ W
        best = cand.min(axis=0)
        # lowest control index among near-minimal candidates
        policy[k] = np.argmax(cand <= best + tie_tol, axis=0)
        W = cand[policy[k], np.arange(n)]
        values[k] = W
    mass = nu.copy()
    pi = np.zeros((K, m, n))
    for k in range(K):
        for j in range(m):
            sel = policy[k] == j
            if sel.any():
                pi[k, j, sel] = mass[sel]
        nxt = np.zeros(n)
        for j in range(m):
            sel = policy[k] == j
            if sel.any():
                contrib = np.zeros(n)
                contrib[sel] = mass[sel]
                nxt += kernels[k][j].T @ contrib
        mass = nxt
    return float(nu @ values[0]), pi, policy, values[0], mass


def _occupation_cost(pi, f_tab, g_vec, kernels, dt):
    run = dt * float(np.sum(pi * f_tab))
    K = pi.shape[0]
    push = np.zeros(len(g_vec))
    for j in range(pi.shape[1]):
        push += kernels[K - 1][j].T @ pi[K - 1, j]
    return run + float(g_vec @ push), push


def _marginal_curve(grid, tgrid, pi, kernels):
    K, m, n = pi.shape
    w = np.empty((K + 1, n))
    w[:K] = pi.sum(axis=1)
    push = np.zeros(n)
    for j in range(m):
        push += kernels[K - 1][j].T @ pi[K - 1, j]
    w[K] = np.clip(push, 0.0, None)
    mass_tol = max(5e-9, float(np.abs(w.sum(axis=1) - 1.0).max()) * 1.01 + 1e-15)
    return MeasureCurve(grid, tgrid, np.clip(w, 0.0, None), mass_tol=mass_tol)


def _assemble_lp(nu, f_tab, g_vec, kernels, dt, v_vals, envelope, budget_coeffs, budget_cap):
    """Equality dynamics + optional envelope/budget rows; returns linprog pieces."""
    K, m, n = f_tab.shape
    nv = K * m * n

    def col(k):
        return slice(k * m * n, (k + 1) * m * n)

    c = (dt * f_tab).reshape(-1).copy()
    for j in range(m):
        c[(K - 1) * m * n + j * n:(K - 1) * m * n + (j + 1) * n] += kernels[K - 1][j] @ g_vec

    eye = sparse.eye(n, format="csr")
    extract = sparse.hstack([eye] * m, format="csr")  # n x (m n): sums over j
    blocks = []
    b_eq = []
    for k in range(K):
        row = [None] * K
        row[k] = extract
        if k > 0:
            push = sparse.hstack([kernels[k - 1][j].T for j in range(m)], format="csr")
            row[k - 1] = -push
        blocks.append(row)
        b_eq.append(nu if k == 0 else np.zeros(n))
    A_eq = sparse.bmat(blocks, format="csr")
    b_eq = np.concatenate(b_eq)

    A_ub_rows, b_ub = [], []
    if envelope is not None:
        for k in range(K):
            data = np.tile(v_vals, m)
            cols = np.arange(k * m * n, (k + 1) * m * n)
            row = sparse.csr_matrix((data, (np.zeros(m * n, dtype=int), cols)), shape=(1, nv))
            A_ub_rows.append(row)
            b_ub.append(envelope[k])
        # terminal slice reached by the last push
        data = np.concatenate([kernels[K - 1][j] @ v_vals for j in range(m)])
        cols = np.arange((K - 1) * m * n, K * m * n)
        A_ub_rows.append(
            sparse.csr_matrix((data, (np.zeros(m * n, dtype=int), cols)), shape=(1, nv))
        )
        b_ub.append(envelope[K])
    if budget_coeffs is not None:
        data = np.tile(np.repeat(budget_coeffs, n), K) * dt
        A_ub_rows.append(
            sparse.csr_matrix((data, (np.zeros(nv, dtype=int), np.arange(nv))), shape=(1, nv))
        )
        b_ub.append(budget_cap)
    A_ub = sparse.vstack(A_ub_rows, format="csr") if A_ub_rows else None
    b_ub = np.array(b_ub) if b_ub else None
    return c, A_eq, b_eq, A_ub, b_ub


def solve_lp(
    coeffs: CoefficientSet,
    nu,
    grid: StateGrid,
    tgrid: TimeGrid,
    env_curve=None,
    R: Optional[float] = None,
    force_lp=False,
    check=True,
) -> BestResponse:
    """Best response to env_curve; R switches on the envelope/budget rows.

    The DP fast path answers first; if its plan already satisfies the side
    constraints (or none were requested) it is returned, otherwise the full
    linear program runs with the rows active.
    """
    nu = normalize_law(np.asarray(nu, dtype=float))
    if len(nu) != grid.n_nodes:
        raise ValidationError("initial law size mismatch")
    if env_curve is None:
        env_curve = constant_curve(grid, tgrid, nu)
    f_tab, g_vec, kernels = _tables(coeffs, env_curve, grid, tgrid)
    dt = tgrid.dt
    K, m, n = f_tab.shape
    lyap = coeffs.lyapunov
    v_vals = np.asarray(lyap.V(grid.nodes), dtype=float)
    envelope = budget_cap = budget_coeffs = None
    if R is not None:
        envelope = R * np.exp(lyap.M * tgrid.times)
        mags = np.linalg.norm(coeffs.controls.points, axis=1)
        budget_coeffs = np.asarray(lyap.h(mags), dtype=float)
        budget_cap = lyap.gamma(tgrid.horizon) * R

    method = "dp"
    residuals = {}
    pi = None
    if not force_lp:
        value, pi, policy, w0, mass_K = _dp_solve(nu, f_tab, g_vec, kernels, dt)
        if R is not None:
            marg = pi.sum(axis=1)
            env_ok = bool((marg @ v_vals <= envelope[:K] + 1e-9 * np.maximum(envelope[:K], 1.0)).all())
            env_ok = env_ok and float(mass_K @ v_vals) <= envelope[K] + 1e-9 * max(envelope[K], 1.0)
            bud = dt * float(np.sum(pi.sum(axis=2) * budget_coeffs[None, :]))
            bud_ok = bud <= budget_cap + 1e-9 * max(budget_cap, 1.0)
            residuals["dp_budget"] = bud
            if not (env_ok and bud_ok):
                pi = None  # side rows active: fall through to the LP
    if pi is None:
        method = "lp"
        c, A_eq, b_eq, A_ub, b_ub = _assemble_lp(
            nu, f_tab, g_vec, kernels, dt, v_vals, envelope, budget_coeffs, budget_cap
        )
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=(0, None),
            method="highs-ds",
            options={
                "primal_feasibility_tolerance": 1e-10,
                "dual_feasibility_tolerance": 1e-10,
            },
        )
        if res.status == 2:
            raise InfeasibleError(
                "best-response program infeasible at R=%.4g: %s\n%s"
                % (R if R is not None else float("nan"), res.message,
                   _infeasibility_witness(coeffs, nu, grid, tgrid, env_curve, R)),
                witness_report=_infeasibility_witness(coeffs, nu, grid, tgrid, env_curve, R),
            )
        if res.status != 0:
            raise NumericalError("linear program failed: status %d (%s)" % (res.status, res.message))
        pi = np.clip(res.x.reshape(K, m, n), 0.0, None)
        value = float(res.fun)
        residuals["lp_eq_residual"] = float(np.abs(A_eq @ res.x - b_eq).max())
        if A_ub is not None:
            residuals["lp_ub_violation"] = float(np.maximum(A_ub @ res.x - b_ub, 0.0).max())

    occ = OccupationMeasure(
        grid=grid,
        tgrid=tgrid,
        control_points=coeffs.controls.points,
        weights=pi,
        mass_tol=max(STEP_MASS_TOL, residuals.get("lp_eq_residual", 0.0) * (m * n) + 1e-12),
    )
    cost, _ = _occupation_cost(pi, f_tab, g_vec, kernels, dt)
    if check and abs(cost - value) > 1e-8 * (1.0 + abs(value)):
        raise NumericalError(
            "occupation cost %.10g disagrees with program value %.10g" % (cost, value)
        )
    curve = _marginal_curve(grid, tgrid, pi, kernels)
    return BestResponse(occupation=occ, value=value, curve=curve, method=method, residuals=residuals)


def _infeasibility_witness(coeffs, nu, grid, tgrid, env_curve, R):
    """Diagnostics for the constant default control: where the rows bite."""
    lyap = coeffs.lyapunov
    try:
        rep = solve_fpk(coeffs, nu, grid, tgrid, control=coeffs.default_control,
                        env_curve=env_curve, mode="implicit")
    except Exception as exc:  # pragma: no cover - diagnostic path
        return "default-control probe failed: %s" % exc
    env = (R if R is not None else np.inf) * np.exp(lyap.M * tgrid.times)
    worst = float((rep.v_moment - env).max())
    u0 = float(np.linalg.norm(coeffs.default_control))
    bud = float(lyap.h(u0)) * tgrid.horizon
    cap = lyap.gamma(tgrid.horizon) * (R if R is not None else np.inf)
    lines = [
        "default control |u0|=%.3g: envelope excess %.4g, budget %.4g vs cap %.4g" % (u0, worst, bud, cap),
        "initial <V, nu> = %.4g vs R = %s" % (float(nu @ lyap.V(grid.nodes)), R),
    ]
    if R is not None and float(nu @ lyap.V(grid.nodes)) > R:
        lines.append("R is below the initial moment: no curve can satisfy the envelope at t=0")
    return "\n".join(lines)


def evaluate_cost(coeffs, curve: MeasureCurve, control, env_curve=None):
    """Linear cost of a curve under a control field (left-endpoint in time)."""
    grid, tgrid = curve.grid, curve.tgrid
    if not isinstance(control, ControlField):
        control = ControlField.constant(grid, tgrid, control)
    total = 0.0
    for k in range(tgrid.steps):
        fv = np.asarray(
            coeffs.f(control.values[k], grid.nodes, tgrid.times[k], env_curve), dtype=float
        )
        total += tgrid.dt * float(fv @ curve.weights[k])
    total += float(np.asarray(coeffs.g(grid.nodes, env_curve), dtype=float) @ curve.weights[-1])
    return total


def project_markovian(occ: OccupationMeasure, coeffs, default_u=None) -> ControlField:
    """Average the relaxed weights into one control per (step, node).

    Cells carrying no occupation mass receive the default control.  The
    averaged controls stay in the convex hull of the control points, which
    for a box set means inside the box.
    """
    if default_u is None:
        default_u = coeffs.default_control
    default_u = np.atleast_1d(np.asarray(default_u, dtype=float))
    pts = occ.control_points
    K, m, n = occ.weights.shape
    marg = occ.weights.sum(axis=1)  # (K, n)
    num = np.einsum("kmn,md->knd", occ.weights, pts)
    vals = np.empty((K, n, pts.shape[1]))
    dead = marg <= 1e-15
    safe = np.where(dead, 1.0, marg)
    vals = num / safe[:, :, None]
    vals[dead] = default_u
    field = ControlField(occ.grid, occ.tgrid, vals)
    inside = coeffs.controls.contains(vals.reshape(-1, pts.shape[1]), tol=1e-9)
    if not inside.all():
        raise NumericalError(
            "projected control left the admissible hull at %d cells" % int((~inside).sum())
        )
    return field


def resolve_and_compare(coeffs, nu, grid, tgrid, occ: OccupationMeasure, env_curve=None,
                        mode="explicit"):
    """Re-run the transport under the projected control and compare costs.

    Averaging controls inside a cell cannot raise the cost (the running
    cost is convex in the control and the kernel is affine), so the
    projected cost must not exceed the relaxed one beyond rounding.
    """
    if env_curve is None:
        env_curve = constant_curve(grid, tgrid, nu)
    field = project_markovian(occ, coeffs)
    rep = solve_fpk(coeffs, nu, grid, tgrid, control=field, env_curve=env_curve, mode=mode)
    f_tab, g_vec, kernels = _tables(coeffs, env_curve, grid, tgrid)
    relaxed, _ = _occupation_cost(occ.weights, f_tab, g_vec, kernels, tgrid.dt)
    projected = evaluate_cost(coeffs, rep.curve, field, env_curve)
    gap = projected - relaxed
    if gap > JENSEN_SLACK * (1.0 + abs(relaxed)):
        raise NumericalError(
            "projected cost %.10g exceeds relaxed cost %.10g by %.3e" % (projected, relaxed, gap)
        )
    return field, rep, projected, relaxed


def feasibility_radius(coeffs, nu, grid, tgrid, beta_fn=None, r_start=None, r_max=2.0**40):
    """Smallest doubling R that survives the self-consistency recipe.

    Requires (i) the default control's budget to fit under gamma R and
    (ii) the Gronwall estimate of the best-response moment, fed by the
    concentration function beta at level R e^{MT}, to return under 3R/4.
    """
    lyap = coeffs.lyapunov
    T = tgrid.horizon
    v0 = float(np.asarray(nu, dtype=float) @ lyap.V(grid.nodes))
    u0 = float(np.linalg.norm(coeffs.default_control))
    base_budget = float(lyap.h(u0)) * T
    if beta_fn is None:
        from .coefficients import beta_vw

        v_vals = np.asarray(lyap.V(grid.nodes), dtype=float)
        w_vals = np.asarray(lyap.W(grid.nodes), dtype=float)

        def beta_fn(r):
            return beta_vw(v_vals, w_vals, r)

    R = max(r_start if r_start is not None else 2.0 * max(v0, 1.0), 1.0)
    while R <= r_max:
        level = R * np.exp(lyap.M * T)
        growth = np.exp(lyap.C_L * T) * (
            v0 + base_budget + lyap.C_L * T * beta_fn(level) * level
        )
        if base_budget <= lyap.gamma(T) * R and growth <= 0.75 * R:
            return float(R)
        R *= 2.0
    from .errors import BoundTooSmallError

    raise BoundTooSmallError(
        "no radius up to %.3g closes the self-consistency recipe "
        "(initial moment %.4g, default budget %.4g)" % (r_max, v0, base_budget)
    )
