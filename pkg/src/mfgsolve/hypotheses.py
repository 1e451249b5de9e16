"""Sampled verification of the standing growth and regularity bounds.

Each checker evaluates one bound on a deterministic sample (grid-node
subsample plus seeded uniform draws in the box, plus control draws in the
hull), reports the worst signed violation together with the magnitude
scale of the two sides, and passes iff

    worst violation <= 1e-8 * (1 + scale).

Checks never prove a bound; they hunt for counterexamples and report the
smallest sampled-feasible constant as a convenience for recalibration.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .coefficients import sym_sqrt
from .errors import ValidationError
from .rng import rng_stream
from .tables import write_csv

REL_TOL = 1e-8


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    scale: float
    worst_label: str
    min_constant: Optional[float] = None
    rows: List[tuple] = field(default_factory=list)  # (label, lhs, rhs, violation)

    @property
    def tolerance(self):
        return REL_TOL * (1.0 + self.scale)

    def __str__(self):
        head = "[%s] %s  worst violation %.3e (tol %.3e) at %s" % (
            "PASS" if self.passed else "FAIL",
            self.name,
            self.worst_violation,
            self.tolerance,
            self.worst_label,
        )
        if self.min_constant is not None:
            head += "  smallest feasible constant ~ %.6g" % self.min_constant
        return head


@dataclass
class HypothesisSuite:
    reports: List[CheckReport]

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    def __str__(self):
        lines = [str(r) for r in self.reports]
        lines.append("overall: %s" % ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def write_text(self, path):
        with open(path, "w") as fh:
            fh.write(str(self) + "\n")

    def write_violations_csv(self, path):
        rows = []
        for r in self.reports:
            for label, lhs, rhs, violation in r.rows:
                rows.append([r.name, label, lhs, rhs, violation])
        write_csv(path, ["check", "sample", "lhs", "rhs", "violation"], rows)


def _finish(name, rows, min_constant=None, keep=25):
    rows = sorted(rows, key=lambda r: -r[3])
    worst = rows[0]
    scale = max(max(abs(r[1]), abs(r[2])) for r in rows)
    passed = worst[3] <= REL_TOL * (1.0 + scale)
    return CheckReport(
        name=name,
        passed=bool(passed),
        worst_violation=float(worst[3]),
        scale=float(scale),
        worst_label=worst[0],
        min_constant=min_constant,
        rows=rows[:keep],
    )


def _sample_states(grid, n, rng):
    nodes = grid.nodes
    take = min(n // 2, len(nodes))
    idx = np.linspace(0, len(nodes) - 1, take).astype(int)
    extra = rng.uniform(-grid.half_width, grid.half_width, size=(n - take, grid.dim))
    return np.vstack([nodes[idx], extra])


def _sample_times(tgrid, n, rng):
    times = tgrid.times
    take = min(n, len(times))
    idx = np.unique(np.linspace(0, len(times) - 1, take).astype(int))
    return times[idx]


def _sample_controls(controls, n, rng):
    pts = [controls.points]
    if controls.kind == "box":
        pts.append(rng.uniform(controls.lo, controls.hi, size=(n, controls.dim)))
    else:
        raw = rng.normal(size=(n, controls.dim))
        raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-300)
        radii = controls.radius * rng.random(n) ** (1.0 / controls.dim)
        pts.append(raw * radii[:, None])
    return np.vstack(pts)


def _curve_moments(coeffs, curve):
    lyap = coeffs.lyapunov
    v_m = curve.moment(lambda x: lyap.V(x))
    w_m = curve.moment(lambda x: lyap.W(x))
    return v_m, float(np.max(w_m))


def check_drift_growth(coeffs, curve, n_states=200, n_times=5, seed=0):
    """Generator-side growth: L V + h*(|Q^T grad V|) against the C_L envelope."""
    rng = rng_stream(seed, 101)
    lyap = coeffs.lyapunov
    grid, tgrid = curve.grid, curve.tgrid
    states = _sample_states(grid, n_states, rng)
    times = _sample_times(tgrid, n_times, rng)
    v_m, sup_w = _curve_moments(coeffs, curve)
    v_x = np.asarray(lyap.V(states), dtype=float)
    gv = np.asarray(lyap.gradV(states), dtype=float)
    hv = np.asarray(lyap.hessV(states), dtype=float)
    rows = []
    ratios = []
    for t in times:
        k = int(round(t / tgrid.dt))
        a_mat = np.asarray(coeffs.A(states, t, curve), dtype=float)
        b_vec = np.asarray(coeffs.b(states, t, curve), dtype=float)
        q_mat = np.asarray(coeffs.Q(states, t, curve), dtype=float)
        gen_v = np.einsum("nij,nji->n", a_mat, hv) + np.einsum("ni,ni->n", b_vec, gv)
        slopes = np.linalg.norm(np.einsum("nij,ni->nj", q_mat, gv), axis=1)
        conj = np.asarray(lyap.h_conj(slopes), dtype=float)
        lhs = gen_v + conj
        denom = v_x + v_m[k] + sup_w
        rhs = lyap.C_L * denom
        ratios.append(np.max(lhs / denom))
        for i in range(len(states)):
            rows.append(
                ("x=%s t=%.4g" % (np.round(states[i], 4).tolist(), t), lhs[i], rhs[i], lhs[i] - rhs[i])
            )
    return _finish("drift-growth-envelope", rows, min_constant=float(max(max(ratios), 0.0)))


def check_pair_regularity(coeffs, curve, n_pairs=150, n_times=3, seed=0):
    """Pairwise bounds: diffusion-root/drift monotonicity and Q variation."""
    rng = rng_stream(seed, 102)
    lyap = coeffs.lyapunov
    grid, tgrid = curve.grid, curve.tgrid
    xs = _sample_states(grid, n_pairs, rng)
    ys = _sample_states(grid, n_pairs, rng)[rng.permutation(n_pairs)]
    keep = np.linalg.norm(xs - ys, axis=1) > 1e-9
    xs, ys = xs[keep], ys[keep]
    times = _sample_times(tgrid, n_times, rng)
    d2 = ((xs - ys) ** 2).sum(axis=1)
    v_x = np.asarray(lyap.V(xs), dtype=float)
    v_y = np.asarray(lyap.V(ys), dtype=float)
    rows_pair, rows_q = [], []
    for t in times:
        ax = sym_sqrt(np.asarray(coeffs.A(xs, t, curve), dtype=float))
        ay = sym_sqrt(np.asarray(coeffs.A(ys, t, curve), dtype=float))
        diff_root = ax - ay
        tr_term = np.einsum("nij,nji->n", diff_root, diff_root)
        b_term = np.einsum(
            "ni,ni->n",
            np.asarray(coeffs.b(xs, t, curve), dtype=float)
            - np.asarray(coeffs.b(ys, t, curve), dtype=float),
            xs - ys,
        )
        lhs = tr_term + b_term
        rhs = lyap.C1 * (1.0 + v_x + v_y) * d2
        qx = np.asarray(coeffs.Q(xs, t, curve), dtype=float)
        qy = np.asarray(coeffs.Q(ys, t, curve), dtype=float)
        q_norm = np.linalg.norm(qx - qy, ord=2, axis=(1, 2))
        theta = np.asarray(lyap.Theta(xs, t), dtype=float) + np.asarray(
            lyap.Theta(ys, t), dtype=float
        )
        rhs_q = theta * np.sqrt(d2)
        for i in range(len(xs)):
            lab = "x=%s y=%s t=%.4g" % (
                np.round(xs[i], 3).tolist(),
                np.round(ys[i], 3).tolist(),
                t,
            )
            rows_pair.append((lab, lhs[i], rhs[i], lhs[i] - rhs[i]))
            rows_q.append((lab, q_norm[i], rhs_q[i], q_norm[i] - rhs_q[i]))
    ratios = [r[1] / max(r[2] / lyap.C1, 1e-300) for r in rows_pair if lyap.C1 > 0]
    min_c1 = float(max(max(ratios), 0.0)) if ratios else None
    return (
        _finish("pair-regularity", rows_pair, min_constant=min_c1),
        _finish("control-map-variation", rows_q),
    )


def check_pointwise_growth(coeffs, curve, n_states=200, n_times=3, seed=0):
    """Pointwise size bound: |A| + |b| + h*(|Q|) + h*(Theta) <= C2 V."""
    rng = rng_stream(seed, 103)
    lyap = coeffs.lyapunov
    states = _sample_states(curve.grid, n_states, rng)
    times = _sample_times(curve.tgrid, n_times, rng)
    v_x = np.asarray(lyap.V(states), dtype=float)
    rows = []
    ratios = []
    for t in times:
        a_norm = np.linalg.norm(np.asarray(coeffs.A(states, t, curve), dtype=float), ord=2, axis=(1, 2))
        b_norm = np.linalg.norm(np.asarray(coeffs.b(states, t, curve), dtype=float), axis=1)
        q_norm = np.linalg.norm(np.asarray(coeffs.Q(states, t, curve), dtype=float), ord=2, axis=(1, 2))
        theta = np.asarray(lyap.Theta(states, t), dtype=float)
        lhs = (
            a_norm
            + b_norm
            + np.asarray(lyap.h_conj(q_norm), dtype=float)
            + np.asarray(lyap.h_conj(theta), dtype=float)
        )
        rhs = lyap.C2 * v_x
        ratios.append(np.max(lhs / v_x))
        for i in range(len(states)):
            rows.append(
                ("x=%s t=%.4g" % (np.round(states[i], 4).tolist(), t), lhs[i], rhs[i], lhs[i] - rhs[i])
            )
    return _finish("pointwise-growth", rows, min_constant=float(max(ratios)))


def check_cost_bounds(coeffs, curve, n_states=150, n_controls=40, n_times=3, seed=0):
    """Terminal-cost bound, two-sided running-cost comparison, convexity in u."""
    rng = rng_stream(seed, 104)
    lyap = coeffs.lyapunov
    states = _sample_states(curve.grid, n_states, rng)
    times = _sample_times(curve.tgrid, n_times, rng)
    controls = _sample_controls(coeffs.controls, n_controls, rng)
    w_x = np.asarray(lyap.W(states), dtype=float)
    _, sup_w = _curve_moments(coeffs, curve)
    slack = w_x + sup_w

    g_vals = np.asarray(coeffs.g(states, curve), dtype=float)
    rows_g = [
        ("x=%s" % (np.round(states[i], 4).tolist(),), abs(g_vals[i]), lyap.C_g * slack[i],
         abs(g_vals[i]) - lyap.C_g * slack[i])
        for i in range(len(states))
    ]
    ratios_g = np.abs(g_vals) / np.maximum(slack, 1e-300)

    rows_f, rows_cvx = [], []
    for t in times:
        for u in controls:
            fu = np.asarray(coeffs.f(u, states, t, curve), dtype=float)
            hu = float(np.asarray(lyap.h(np.linalg.norm(u))))
            upper = lyap.C_h * hu + lyap.C_f * slack
            lower = hu - lyap.C_f * slack
            for i in range(len(states)):
                lab = "u=%s x=%s t=%.4g" % (
                    np.round(u, 3).tolist(),
                    np.round(states[i], 3).tolist(),
                    t,
                )
                rows_f.append((lab + " upper", fu[i], upper[i], fu[i] - upper[i]))
                rows_f.append((lab + " lower", lower[i], fu[i], lower[i] - fu[i]))
        pair_idx = rng.integers(0, len(controls), size=(max(n_controls, 10), 2))
        for j1, j2 in pair_idx:
            u1, u2 = controls[j1], controls[j2]
            mid = 0.5 * (u1 + u2)
            f_mid = np.asarray(coeffs.f(mid, states, t, curve), dtype=float)
            f_avg = 0.5 * (
                np.asarray(coeffs.f(u1, states, t, curve), dtype=float)
                + np.asarray(coeffs.f(u2, states, t, curve), dtype=float)
            )
            i = int(np.argmax(f_mid - f_avg))
            lab = "u1=%s u2=%s x=%s t=%.4g" % (
                np.round(u1, 3).tolist(),
                np.round(u2, 3).tolist(),
                np.round(states[i], 3).tolist(),
                t,
            )
            rows_cvx.append((lab, f_mid[i], f_avg[i], f_mid[i] - f_avg[i]))
    return (
        _finish("terminal-cost-bound", rows_g, min_constant=float(np.max(ratios_g))),
        _finish("running-cost-comparison", rows_f),
        _finish("running-cost-convexity", rows_cvx),
    )


def check_all(coeffs, curve, seed=0, n_states=200) -> HypothesisSuite:
    """Run every checker against a frozen population curve."""
    coeffs.lyapunov.validate_profile()
    coeffs.lyapunov.validate_weights(curve.grid)
    coeffs.check_psd(curve.grid, _sample_times(curve.tgrid, 3, rng_stream(seed, 100)), curve)
    r1 = check_drift_growth(coeffs, curve, n_states=n_states, seed=seed)
    r2a, r2b = check_pair_regularity(coeffs, curve, n_pairs=max(n_states // 2, 50), seed=seed)
    r3 = check_pointwise_growth(coeffs, curve, n_states=n_states, seed=seed)
    r4a, r4b, r4c = check_cost_bounds(coeffs, curve, n_states=max(n_states // 2, 50), seed=seed)
    return HypothesisSuite([r1, r2a, r2b, r3, r4a, r4b, r4c])
