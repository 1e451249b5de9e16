"""Acceptance suite: eleven end-to-end criteria, one verdict line each.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities and wall time, then asserts.  Tolerances are frozen; loosening
them is not an accepted way to make a red test green.
"""

import itertools
import time

import numpy as np

from mfgsolve.best_response import resolve_and_compare, solve_lp
from mfgsolve.catalog import example_catalog
from mfgsolve.cli import EX_OK, main as cli_main
from mfgsolve.coefficients import beta_vw, conjugate_fn
from mfgsolve.equilibrium import FixedPointConfig, apriori_sweep, certify, iterate
from mfgsolve.fpk import (
    build_generator,
    build_generator_table,
    control_budget,
    solve_fpk,
    weak_residual,
)
from mfgsolve.grids import StateGrid, TimeGrid
from mfgsolve.hypotheses import check_all
from mfgsolve.measures import (
    MeasureCurve,
    constant_curve,
    gaussian_law,
    mollify_curve,
    subprob_jensen_check,
)
from mfgsolve.best_response import OccupationMeasure
from mfgsolve.particles import simulate, superposition_gap


def _verdict(num, ok, detail, t0, cap):
    elapsed = time.perf_counter() - t0
    line = "[%s] criterion %02d  %s  (%.1fs, cap %ds)" % (
        "PASS" if ok and elapsed < cap else "FAIL", num, detail, elapsed, cap
    )
    print(line)
    assert ok, line
    assert elapsed < cap, line


def _variance(grid, w):
    mean = float(w @ grid.nodes[:, 0])
    return float(w @ (grid.nodes[:, 0] - mean) ** 2)


def test_01_transport_matches_diffusion_oracles():
    t0 = time.perf_counter()
    # pure diffusion: variance grows linearly at rate twice the coefficient
    model = example_catalog("quadratic", a0=0.5, kappa=0.0, q1=0.0)
    grid = StateGrid(dim=1, half_width=4.0, npts=401)
    tg = TimeGrid(horizon=0.2, steps=2000)
    nu = gaussian_law(grid, mean=0.0, std=0.5)
    rep = solve_fpk(model, nu, grid, tg, control=np.zeros(1))
    target = _variance(grid, nu) + 2 * 0.5 * tg.horizon
    heat_err = abs(_variance(grid, rep.curve.weights[-1]) - target) / target
    t_heat = time.perf_counter() - t0

    # linear pull toward the origin: long-run variance a0/kappa
    t1 = time.perf_counter()
    ou = example_catalog("quadratic", a0=0.5, kappa=1.0, q1=0.0)
    g2 = StateGrid(dim=1, half_width=4.0, npts=801)
    tg2 = TimeGrid(horizon=4.0, steps=800)
    nu2 = gaussian_law(g2, mean=1.0, std=0.5)
    rep2 = solve_fpk(ou, nu2, g2, tg2, control=np.zeros(1), mode="implicit")
    ou_err = abs(_variance(g2, rep2.curve.weights[-1]) - 0.5) / 0.5
    t_ou = time.perf_counter() - t1

    ok = heat_err <= 0.02 and ou_err <= 0.02 and t_heat < 10 and t_ou < 10
    _verdict(
        1, ok,
        "diffusion oracles: spreading var err %.2e, settling var err %.2e (<= 2%%)"
        % (heat_err, ou_err),
        t0, 25,
    )


def test_02_conservation_positivity_duality_500_scenarios():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240817)
    worst_mass = worst_neg = worst_dual = 0.0
    for _ in range(500):
        npts = int(rng.integers(15, 42))
        hw = float(rng.uniform(1.0, 3.0))
        a0 = float(rng.uniform(0.05, 0.4))
        kappa = float(rng.uniform(-1.0, 1.0))
        bound = float(rng.uniform(0.2, 1.5))
        model = example_catalog(
            "quadratic", a0=a0, kappa=kappa, q1=0.0,
            half_width=hw, control_bound=bound,
        )
        grid = StateGrid(dim=1, half_width=hw, npts=npts)
        dx = grid.dx
        rate = 2 * a0 / dx**2 + (abs(kappa) * hw + bound) / dx
        T = float(rng.uniform(0.05, 0.15))
        tg = TimeGrid(horizon=T, steps=max(2, int(np.ceil(T * rate / 0.8))))
        nu = rng.dirichlet(np.ones(npts))
        u = rng.uniform(-bound, bound, size=1)
        env = constant_curve(grid, tg, nu)
        gen = build_generator(model, env, grid, tg, u)
        rep = solve_fpk(model, nu, grid, tg, control=u, env_curve=env, generator=gen)
        worst_mass = max(worst_mass, float(rep.mass_defect.max()))
        worst_neg = min(worst_neg, float(rep.curve.weights.min()))
        for _ in range(3):
            psi = rng.normal(size=npts)
            worst_dual = max(worst_dual, weak_residual(gen, rep.curve, psi))
    ok = worst_mass <= 1e-12 and worst_neg >= -1e-12 and worst_dual <= 1e-10
    _verdict(
        2, ok,
        "500 random transports: mass defect %.1e (<=1e-12), min weight %.1e "
        "(>=-1e-12), duality defect %.1e (<=1e-10)"
        % (worst_mass, worst_neg, worst_dual),
        t0, 60,
    )


def test_03_particle_superposition_three_scenarios():
    t0 = time.perf_counter()
    grid = StateGrid(dim=1, half_width=4.0, npts=201)
    tg = TimeGrid(horizon=0.5, steps=500)
    nu = gaussian_law(grid, mean=0.5, std=0.4)
    runs = [
        ("spread", example_catalog("quadratic", a0=0.5, kappa=0.0, q1=0.0), np.zeros(1)),
        ("settle", example_catalog("quadratic", a0=0.5, kappa=1.0, q1=0.0), np.zeros(1)),
        ("steered", example_catalog("quadratic", a0=0.5, kappa=1.0, q1=0.0), np.array([0.5])),
    ]
    gaps = {}
    for label, model, u in runs:
        fv = solve_fpk(model, nu, grid, tg, control=u)
        pr = simulate(model, nu, grid, tg, u, n_particles=100_000, seed=7)
        gaps[label], _, _ = superposition_gap(pr, fv.curve)
    worst = max(gaps.values())
    ok = worst <= 0.05
    _verdict(
        3, ok,
        "cloud vs grid transport over 100k paths: gaps %s, worst %.4f (<= 0.05)"
        % (", ".join("%s %.4f" % kv for kv in sorted(gaps.items())), worst),
        t0, 60,
    )


def test_04_relaxed_program_matches_exhaustive_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    checked = deterministic = 0
    worst = 0.0
    for _ in range(20):
        hw = float(rng.uniform(0.5, 1.5))
        a0 = float(rng.uniform(0.1, 0.6))
        bound = float(rng.uniform(0.5, 1.5))
        model = example_catalog(
            "quadratic", a0=a0, kappa=float(rng.uniform(-1, 1)),
            q1=0.0, f_x=float(rng.uniform(0, 1)), g_x=float(rng.uniform(0, 1)),
            cost_weight=float(rng.uniform(0.5, 2.0)), half_width=hw,
            control_bound=bound, control_counts=2,
        )
        grid = StateGrid(dim=1, half_width=hw, npts=3)
        rate = 2 * a0 / grid.dx**2 + (abs(model.b(grid.nodes, 0.0, None)).max() + bound) / grid.dx
        dt = 0.8 / rate
        tg = TimeGrid(horizon=2 * dt, steps=2)
        nu = rng.dirichlet(np.ones(3))
        br = solve_lp(model, nu, grid, tg, force_lp=True)

        env = constant_curve(grid, tg, nu)
        gens = build_generator_table(model, env, grid, tg)
        kers = [[np.eye(3) + tg.dt * g.toarray() for g in gens[k]] for k in range(2)]
        pts = model.controls.points
        ftab = np.array(
            [[model.f(np.tile(u, (3, 1)), grid.nodes, tg.times[k], env) for u in pts]
             for k in range(2)]
        )
        gv = np.asarray(model.g(grid.nodes, env), dtype=float)
        best = np.inf
        for code in itertools.product(range(2), repeat=6):
            pol = np.reshape(code, (2, 3))
            mass, cost = nu.copy(), 0.0
            for k in range(2):
                P = np.empty((3, 3))
                for i in range(3):
                    P[i] = kers[k][pol[k, i]][i]
                    cost += tg.dt * mass[i] * ftab[k, pol[k, i], i]
                mass = P.T @ mass
            best = min(best, cost + float(gv @ mass))

        cell_mass = br.occupation.weights.sum(axis=1)
        active = (br.occupation.weights > 1e-9 * np.maximum(cell_mass, 1e-30)[:, None, :]).sum(axis=1)
        if (active <= 1).all():
            deterministic += 1
            worst = max(worst, abs(br.value - best))
            ok_i = abs(br.value - best) <= 1e-8
        else:
            ok_i = br.value <= best + 1e-8
        checked += ok_i
    ok = checked == 20
    _verdict(
        4, ok,
        "20 tiny instances vs full policy enumeration: %d/20 agree, %d deterministic, "
        "worst gap %.1e (<= 1e-8)" % (checked, deterministic, worst),
        t0, 30,
    )


def test_05_projection_never_beats_relaxation_50_cases():
    t0 = time.perf_counter()
    model = example_catalog("quadratic", a0=0.4, kappa=0.8, q1=0.0, f_x=0.3)
    grid = StateGrid(dim=1, half_width=2.0, npts=21)
    tg = TimeGrid(horizon=0.3, steps=24)
    m, n = len(model.controls.points), grid.n_nodes
    violations = 0
    worst_gap = -np.inf
    rng = np.random.default_rng(99)
    for _ in range(50):
        nu = gaussian_law(grid, mean=float(rng.uniform(-1, 1)), std=float(rng.uniform(0.2, 0.6)))
        env = constant_curve(grid, tg, nu)
        gens = build_generator_table(model, env, grid, tg)
        mix = rng.dirichlet(np.ones(m), size=(tg.steps, n))
        mass = nu.copy()
        pi = np.zeros((tg.steps, m, n))
        for k in range(tg.steps):
            pi[k] = mass[None, :] * mix[k].T
            nxt = np.zeros(n)
            for j in range(m):
                nxt += (np.eye(n) + tg.dt * gens[k][j].toarray()).T @ pi[k, j]
            mass = np.clip(nxt, 0.0, None)
            mass /= mass.sum()
        occ = OccupationMeasure(grid, tg, model.controls.points, pi, mass_tol=1e-9)
        _, _, projected, relaxed = resolve_and_compare(model, nu, grid, tg, occ, env_curve=env)
        gap = projected - relaxed
        worst_gap = max(worst_gap, gap)
        violations += gap > 1e-8
    ok = violations == 0
    _verdict(
        5, ok,
        "50 randomized relaxed plans: averaging the controls never raised the cost, "
        "worst signed gap %.2e (<= 1e-8), %d violations" % (worst_gap, violations),
        t0, 60,
    )


def test_06_moment_envelope_and_budget_on_equilibrium_run():
    t0 = time.perf_counter()
    # strong enough state cost that the equilibrium actually spends control
    model = example_catalog("quadratic", kappa_mf=0.5, q1=0.0, f_x=2.0)
    assert model.dependence == "marginal"
    grid = StateGrid(dim=1, half_width=2.0, npts=41)
    tg = TimeGrid(horizon=0.5, steps=100)
    nu = gaussian_law(grid, mean=0.8, std=0.4)
    result = iterate(model, nu, grid, tg)
    ladder = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    sweep = apriori_sweep(model, result, ladder)
    R0 = sweep.empirical_radius
    lyap = model.lyapunov
    v_curve = result.curve.moment(lambda x: lyap.V(x))
    env_ok = bool((v_curve <= R0 * np.exp(lyap.M * tg.times) * (1 + 1e-12)).all())
    budget = control_budget(result.curve, result.control, lyap.h)
    bud_ok = budget <= lyap.gamma(tg.horizon) * R0 * (1 + 1e-12)
    ok = result.converged and env_ok and bud_ok and sweep.monotone and budget > 0
    _verdict(
        6, ok,
        "equilibrium moments under level R0=%.3f: envelope %s, spend %.4f <= cap %.4f, "
        "ladder flags monotone %s"
        % (R0, env_ok, budget, lyap.gamma(tg.horizon) * R0, sweep.monotone),
        t0, 120,
    )


def test_07_conjugate_and_concentration_diagnostics():
    t0 = time.perf_counter()
    worst_conj = 0.0
    for C in (0.5, 1.0, 2.0):
        h_star = conjugate_fn(lambda v, C=C: C * v**2)
        p = np.linspace(0.0, 10.0, 41)
        worst_conj = max(worst_conj, float(np.abs(h_star(p) - p**2 / (4 * C)).max()))
    xs = np.linspace(-8.0, 8.0, 161)
    v_vals, w_vals = 1.0 + xs**2, np.abs(xs)
    beta_err = max(
        abs(beta_vw(v_vals, w_vals, 5.0) - 2.0 / 5.0),
        abs(beta_vw(v_vals, w_vals, 50.0) - 7.0 / 50.0),
    )
    decay_ok = beta_vw(v_vals, w_vals, 256.0) < 0.1 * beta_vw(v_vals, w_vals, 2.0)
    ok = worst_conj <= 1e-4 and beta_err <= 1e-9 and decay_ok
    _verdict(
        7, ok,
        "convex conjugate err %.1e (<= 1e-4); concentration ratio err %.1e at "
        "levels 5 and 50; large-level decay %s" % (worst_conj, beta_err, decay_ok),
        t0, 10,
    )


def test_08_structural_checks_catalog_and_broken_model():
    t0 = time.perf_counter()
    outcomes = {}
    # grids sized to the half-width each model's constants were calibrated on
    for name, hw in (("quadratic", 3.0), ("power", 2.5)):
        model = example_catalog(name)
        grid = StateGrid(dim=1, half_width=hw, npts=41)
        tg = TimeGrid(horizon=0.5, steps=50)
        curve = constant_curve(grid, tg, gaussian_law(grid, mean=0.0, std=0.5))
        outcomes[name] = check_all(model, curve, seed=5).passed
    broken = example_catalog("unstable-cubic-drift")
    grid = StateGrid(dim=1, half_width=3.0, npts=41)
    tg = TimeGrid(horizon=0.5, steps=50)
    curve = constant_curve(grid, tg, gaussian_law(grid, mean=0.0, std=0.5))
    suite = check_all(broken, curve, seed=5)
    failed = {r.name for r in suite.reports if not r.passed}
    ok = all(outcomes.values()) and not suite.passed and "drift-growth-envelope" in failed
    _verdict(
        8, ok,
        "catalog checks: quadratic %s, power %s; cubic-drift foil fails %s"
        % (outcomes["quadratic"], outcomes["power"], sorted(failed)),
        t0, 30,
    )


def test_09_equilibrium_end_to_end():
    t0 = time.perf_counter()
    # no coupling: the best response ignores the population, one update suffices
    plain = example_catalog("quadratic", a0=0.5, kappa=1.0, q1=0.0)
    grid = StateGrid(dim=1, half_width=2.0, npts=31)
    tg = TimeGrid(horizon=0.4, steps=40)
    nu = gaussian_law(grid, mean=0.5, std=0.3)
    res0 = iterate(plain, nu, grid, tg, FixedPointConfig(damping=1.0))
    one_step = res0.converged and res0.iterations == 2 and res0.residuals[-1] <= 1e-12

    crowd = example_catalog("crowd-aversion", crowd=0.5)
    g2 = StateGrid(dim=1, half_width=2.0, npts=41)
    tg2 = TimeGrid(horizon=0.5, steps=50)
    nu2 = gaussian_law(g2, mean=0.0, std=0.5)
    res = iterate(crowd, nu2, g2, tg2, FixedPointConfig(max_iters=200))
    m = len(crowd.controls.points)
    cert = certify(
        crowd, nu2, g2, tg2, res.curve, res.control, n_random=100 - 1 - m, seed=3
    )
    crowd_ok = (
        res.converged
        and res.residual <= 1e-3
        and len(cert.challengers) == 100
        and cert.exploitability <= 1e-3
    )
    ok = one_step and crowd_ok
    _verdict(
        9, ok,
        "no-coupling run: zero gap after one update %s; crowd run: residual %.2e "
        "(<=1e-3), exploitability %.2e over %d challengers in %d iterations"
        % (one_step, res.residual, cert.exploitability, len(cert.challengers),
           res.iterations),
        t0, 600,
    )


def test_10_mollification_and_small_mass_convexity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    grid = StateGrid(dim=1, half_width=2.0, npts=31)
    tg = TimeGrid(horizon=0.5, steps=40)
    moll_ok = True
    for r in (2, 5):
        w = rng.uniform(0.1, 1.0, size=(tg.steps + 1, grid.n_nodes))
        w /= w.sum(axis=1, keepdims=True)
        curve = MeasureCurve(grid, tg, w)
        payload = rng.uniform(-1.2, 1.2, size=(tg.steps, grid.n_nodes, 1))
        res = mollify_curve(curve, eps=r * tg.dt, payload=payload)
        mass_err = float(np.abs(res.curve.weights.sum(axis=1) - 1.0).max())
        moll_ok &= mass_err <= 1e-8
        moll_ok &= bool(res.curve.weights.min() > 0)
        moll_ok &= float(np.abs(res.payload).max()) <= float(np.abs(payload).max()) + 1e-12

    violations = 0
    for _ in range(200):
        a, b = rng.uniform(0, 2, size=2)
        p = float(rng.uniform(1.0, 3.0))
        phi = lambda v, a=a, b=b, p=p: a * v**2 + b * abs(v) ** p
        size = int(rng.integers(2, 9))
        xi = rng.normal(scale=3.0, size=size)
        omega = rng.dirichlet(np.ones(size)) * float(rng.uniform(0.0, 1.0))
        ok_i, _, _ = subprob_jensen_check(phi, xi, omega)
        violations += not ok_i
    ok = moll_ok and violations == 0
    _verdict(
        10, ok,
        "smoothing kept unit mass, strict positivity, and the control sup bound %s; "
        "partial-mass convexity inequality held on 200 random triples (%d violations)"
        % (moll_ok, violations),
        t0, 10,
    )


def test_11_reruns_reproduce_byte_identical_outputs(tmp_path):
    t0 = time.perf_counter()
    jobs = [
        ("solve-fpk", []),
        ("equilibrium", []),
        ("particle-check", ["--set", "particles.n=5000"]),
    ]
    fast = ["--set", "grid.npts=41", "--set", "time.steps=50"]
    identical = True
    compared = 0
    for cmd, extra in jobs:
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / ("%s-%s" % (cmd, tag))
            code = cli_main([cmd, "--out", str(out), "--seed", "5"] + fast + extra)
            assert code == EX_OK, cmd
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        identical &= names == sorted(p.name for p in outs[1].iterdir())
        for name in names:
            compared += 1
            identical &= (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    ok = identical
    _verdict(
        11, ok,
        "three scenario commands re-run with the same config and seed: "
        "%d output files byte-identical %s" % (compared, identical),
        t0, 120,
    )
