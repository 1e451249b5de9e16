"""Population fixed point: iterate best responses until self-consistent.

A candidate population curve is fed to the single-agent program; the
optimal agent's own marginal curve comes back.  At an equilibrium the two
agree, so the iteration residual is the largest transport distance
between matching time slices of the two curves.  Damped updates (fixed
damping, or the averaged variant whose step sizes decay like 1/(k+1))
trade speed for robustness.  The returned curve is always the last best
response's marginal -- it solves its own transport equation exactly --
and the accompanying certificate measures exploitability directly: no
challenger control, including a freshly computed best response against
the frozen answer, may beat the candidate by more than the advertised
tolerance.
"""

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .best_response import evaluate_cost, project_markovian, solve_lp
from .errors import DivergenceError, ValidationError
from .fpk import ControlField, control_budget, solve_fpk
from .grids import StateGrid, TimeGrid
from .measures import MeasureCurve, constant_curve, normalize_law
from .rng import rng_stream
from .tables import write_csv
from .transport import kr_gap_curve

CERT_TOL_FACTOR = 1e-3


@dataclass
class FixedPointConfig:
    max_iters: int = 200
    damping: float = 0.5  # mixing weight on the fresh best response
    scheme: str = "picard"  # "picard" (fixed damping) or "averaged" (1/(k+1))
    tol: float = 1e-3  # stop when the slice-wise transport residual drops below
    R: Optional[float] = None  # envelope/budget level for the inner program
    force_lp: bool = False
    blowup: float = 1e3

    def __post_init__(self):
        if self.scheme not in ("picard", "averaged"):
            raise ValidationError("scheme must be 'picard' or 'averaged'")
        if self.scheme == "picard" and not (0.0 < self.damping <= 1.0):
            raise ValidationError("picard damping must lie in (0, 1]")


@dataclass
class EquilibriumResult:
    curve: MeasureCurve  # best-response marginal at the best iterate
    control: ControlField
    value: float  # inner program value at the best iterate
    residuals: np.ndarray  # per-iteration transport residuals
    values: np.ndarray
    step_sizes: np.ndarray
    converged: bool
    best_iter: int
    method: str  # inner solver used at the best iterate

    @property
    def iterations(self):
        return len(self.residuals)

    @property
    def residual(self):
        return float(self.residuals[self.best_iter])

    def history_to_csv(self, path):
        rows = [
            [k, self.residuals[k], self.values[k], self.step_sizes[k]]
            for k in range(len(self.residuals))
        ]
        write_csv(path, ["iter", "residual", "value", "step_size"], rows)


def iterate(
    coeffs,
    nu,
    grid: StateGrid,
    tgrid: TimeGrid,
    config: FixedPointConfig = None,
) -> EquilibriumResult:
    """Damped best-response iteration started from the frozen initial law."""
    config = config or FixedPointConfig()
    nu = normalize_law(np.asarray(nu, dtype=float))
    sigma = constant_curve(grid, tgrid, nu)
    residuals, values, steps = [], [], []
    best = None
    for k in range(config.max_iters):
        br = solve_lp(
            coeffs, nu, grid, tgrid, env_curve=sigma, R=config.R, force_lp=config.force_lp
        )
        res = kr_gap_curve(br.curve, sigma)
        if not np.isfinite(res) or res > config.blowup:
            raise DivergenceError(
                "fixed-point residual %.3g exploded at iteration %d" % (res, k)
            )
        lam = config.damping if config.scheme == "picard" else 1.0 / (k + 1.0)
        residuals.append(res)
        values.append(br.value)
        steps.append(lam)
        if best is None or res < best[0]:
            best = (res, k, br)
        if res < config.tol:
            break
        sigma = sigma.mix(br.curve, lam)
    res, k_best, br = best
    field = project_markovian(br.occupation, coeffs)
    return EquilibriumResult(
        curve=br.curve,
        control=field,
        value=br.value,
        residuals=np.asarray(residuals),
        values=np.asarray(values),
        step_sizes=np.asarray(steps),
        converged=bool(res < config.tol),
        best_iter=k_best,
        method=br.method,
    )


# ---------------------------------------------------------------------------
# certification


@dataclass
class Challenger:
    label: str
    cost: float
    gap: float  # candidate cost minus challenger cost; positive = improvement found


@dataclass
class Certificate:
    value: float  # candidate cost against its own population
    exploitability: float  # largest positive gap over all challengers
    tolerance: float
    certified: bool
    challengers: list = dc_field(default_factory=list)
    residual: float = float("nan")  # self-consistency of the frozen curve

    def __str__(self):
        return (
            "[%s] equilibrium certificate  value %.6g  exploitability %.3e  "
            "tolerance %.3e  (%d challengers, self-residual %.3e)"
            % (
                "PASS" if self.certified else "FAIL",
                self.value,
                self.exploitability,
                self.tolerance,
                len(self.challengers),
                self.residual,
            )
        )

    def to_csv(self, path):
        rows = [[c.label, c.cost, c.gap] for c in self.challengers]
        write_csv(path, ["challenger", "cost", "gap"], rows)


def certify(
    coeffs,
    nu,
    grid: StateGrid,
    tgrid: TimeGrid,
    curve: MeasureCurve,
    control: ControlField,
    R: Optional[float] = None,
    n_random=10,
    perturbation=0.25,
    seed=0,
    tol_factor=CERT_TOL_FACTOR,
) -> Certificate:
    """Exploitability audit of a candidate (population curve, control) pair.

    The population is frozen at the candidate curve; every challenger
    control is rolled forward through the same discrete dynamics and its
    cost compared against the candidate's.  The strongest challenger is a
    best response computed against the frozen curve, so the reported
    exploitability is exact for the discretized game (up to solver
    rounding), not merely a sample bound.
    """
    nu = normalize_law(np.asarray(nu, dtype=float))
    cand_rep = solve_fpk(coeffs, nu, grid, tgrid, control=control, env_curve=curve)
    value = evaluate_cost(coeffs, cand_rep.curve, control, env_curve=curve)
    self_res = kr_gap_curve(cand_rep.curve, curve)

    challengers = []

    def try_control(label, ctl):
        rep = solve_fpk(coeffs, nu, grid, tgrid, control=ctl, env_curve=curve)
        cost = evaluate_cost(coeffs, rep.curve, ctl, env_curve=curve)
        challengers.append(Challenger(label=label, cost=cost, gap=value - cost))

    br = solve_lp(coeffs, nu, grid, tgrid, env_curve=curve, R=R)
    br_field = project_markovian(br.occupation, coeffs)
    try_control("best-response", br_field)

    for j, u in enumerate(coeffs.controls.points):
        try_control("constant-%d" % j, np.asarray(u, dtype=float))

    gen = rng_stream(seed, stream=7)
    base = control.values
    for r in range(n_random):
        noise = gen.uniform(-perturbation, perturbation, size=base.shape)
        vals = coeffs.controls.clip((base + noise).reshape(-1, base.shape[2]))
        try_control("perturbed-%d" % r, ControlField(grid, tgrid, vals.reshape(base.shape)))

    exploitability = max(0.0, max(c.gap for c in challengers))
    tol = tol_factor * (1.0 + abs(value))
    return Certificate(
        value=value,
        exploitability=exploitability,
        tolerance=tol,
        certified=bool(exploitability <= tol),
        challengers=challengers,
        residual=self_res,
    )


# ---------------------------------------------------------------------------
# structural diagnostics


def modulus_diagnostic(lyap, R, horizon, v_values):
    """Continuity-modulus profile v -> C(v + v * h^{-1}(budget / v)).

    The profile must be nondecreasing with limit 0 at 0+ for the
    equilibrium map to be stable against small population perturbations;
    the returned table makes that decay inspectable.
    """
    from .coefficients import h_inverse

    v_values = np.asarray(v_values, dtype=float)
    if (v_values <= 0).any():
        raise ValidationError("modulus profile needs positive arguments")
    budget = lyap.gamma(horizon) * R
    out = np.empty_like(v_values)
    for i, v in enumerate(v_values):
        out[i] = v + v * h_inverse(lyap.h, budget / v)
    return out


@dataclass
class SweepRow:
    R: float
    envelope_margin: float  # sup_t <V, mu_t> e^{-Mt} minus R (negative = inside)
    budget_margin: float  # integrated control cost / gamma minus R
    feasible: bool


@dataclass
class SweepReport:
    rows: list
    empirical_radius: float  # smallest level the computed equilibrium fits under
    monotone: bool

    def to_csv(self, path):
        write_csv(
            path,
            ["R", "envelope_margin", "budget_margin", "feasible"],
            [[r.R, r.envelope_margin, r.budget_margin, r.feasible] for r in self.rows],
        )


def apriori_sweep(coeffs, result: EquilibriumResult, r_values) -> SweepReport:
    """Check the computed equilibrium against a ladder of envelope levels.

    Feasibility at level R means the moment curve stays under R e^{Mt}
    and the integrated control cost under gamma R; both requirements
    scale monotonically in R, so the pass flags must be a step function.
    The crossover is the empirical radius of the computed solution.
    """
    lyap = coeffs.lyapunov
    curve = result.curve
    v_curve = curve.moment(lambda x: lyap.V(x))
    needed_env = float(np.max(v_curve * np.exp(-lyap.M * curve.tgrid.times)))
    budget = control_budget(curve, result.control, lyap.h)
    needed_bud = budget / lyap.gamma(curve.tgrid.horizon)
    r0 = max(needed_env, needed_bud)
    rows = []
    for R in sorted(float(r) for r in r_values):
        rows.append(
            SweepRow(
                R=R,
                envelope_margin=needed_env - R,
                budget_margin=needed_bud - R,
                feasible=bool(R >= r0),
            )
        )
    flags = [r.feasible for r in rows]
    monotone = all(not (a and not b) for a, b in zip(flags, flags[1:]))
    return SweepReport(rows=rows, empirical_radius=r0, monotone=monotone)
