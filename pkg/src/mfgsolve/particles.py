"""Euler--Maruyama particle clouds for cross-checking the grid transport.

A particle system driven by the same drift b + Q u and diffusion sqrt(2A)
gives an empirical curve whose histogram should shadow the finite-volume
solution; the superposition gap (per-time 1-Wasserstein distance between
the two) quantifies the agreement.  Particles move on the whole space --
the truncated box is purely a device of the grid scheme -- and the
histogram clips stray mass to boundary nodes, so a visible gap also
flags truncation error.  A hard abort fires if any particle runs far
outside the box, which catches super-linear drifts that defeat the
moment envelope.  Batches use counter-based bit generator streams so
runs are reproducible for any batch size.
"""

from dataclasses import dataclass

import numpy as np

from .coefficients import sym_sqrt
from .errors import DivergenceError, ValidationError
from .fpk import ControlField
from .grids import StateGrid, TimeGrid
from .measures import MeasureCurve
from .rng import rng_stream
from .transport import wasserstein_p

DIVERGENCE_FACTOR = 10.0


@dataclass
class ParticleResult:
    grid: StateGrid
    tgrid: TimeGrid
    hist_curve: MeasureCurve  # node histogram of the cloud at each time node
    means: np.ndarray  # (K+1, d)
    second_moments: np.ndarray  # (K+1,), E|X|^2
    cost_mean: float
    cost_se: float
    n_particles: int

    @property
    def variances(self):
        return self.second_moments - np.sum(self.means**2, axis=1)


def simulate(
    coeffs,
    nu,
    grid: StateGrid,
    tgrid: TimeGrid,
    control,
    n_particles=100_000,
    seed=0,
    env_curve=None,
    batch_size=100_000,
) -> ParticleResult:
    """Simulate the controlled diffusion and aggregate histogram/cost statistics.

    control is a fixed vector or a ControlField looked up at the nearest node.
    Initial positions sit at grid nodes, drawn from the weights nu.
    """
    nu = np.asarray(nu, dtype=float)
    if len(nu) != grid.n_nodes:
        raise ValidationError("initial law size mismatch")
    K, dt = tgrid.steps, tgrid.dt
    fixed_u = None
    if not isinstance(control, ControlField):
        fixed_u = np.atleast_1d(np.asarray(control, dtype=float))
    d = grid.dim
    L = grid.half_width
    hist = np.zeros((K + 1, grid.n_nodes))
    mean_acc = np.zeros((K + 1, d))
    m2_acc = np.zeros(K + 1)
    cost_acc = 0.0
    cost_sq_acc = 0.0
    n_done = 0
    p = nu / nu.sum()
    batch_id = 0
    while n_done < n_particles:
        nb = min(batch_size, n_particles - n_done)
        gen = rng_stream(seed, stream=batch_id)
        idx0 = gen.choice(grid.n_nodes, size=nb, p=p)
        x = grid.nodes[idx0].copy()
        run_cost = np.zeros(nb)
        for k in range(K + 1):
            node_idx = grid.nearest_index(x)
            hist[k] += np.bincount(node_idx, minlength=grid.n_nodes)
            mean_acc[k] += x.sum(axis=0)
            m2_acc[k] += float(np.sum(x * x))
            if k == K:
                break
            t = tgrid.times[k]
            if fixed_u is not None:
                u = np.broadcast_to(fixed_u, (nb, len(fixed_u)))
            else:
                u = control.values[k, node_idx]
            v = coeffs.drift_velocity(x, t, env_curve, u)
            a_mats = np.asarray(coeffs.A(x, t, env_curve), dtype=float)
            sig = sym_sqrt(2.0 * a_mats)
            noise = gen.standard_normal((nb, d))
            x = x + dt * v + np.sqrt(dt) * np.einsum("nij,nj->ni", sig, noise)
            worst = float(np.abs(x).max())
            if worst > DIVERGENCE_FACTOR * L:
                raise DivergenceError(
                    "particle escaped to |x|=%.3g (> %g x half-width) at step %d; "
                    "drift is blowing up or dt=%.3g is too coarse" % (worst, DIVERGENCE_FACTOR, k + 1, dt)
                )
            run_cost += dt * np.asarray(
                coeffs.f(u, x, t, env_curve), dtype=float
            )
        run_cost += np.asarray(coeffs.g(x, env_curve), dtype=float)
        cost_acc += float(run_cost.sum())
        cost_sq_acc += float(np.sum(run_cost**2))
        n_done += nb
        batch_id += 1
    hist /= n_done
    mean_acc /= n_done
    m2_acc /= n_done
    cost_mean = cost_acc / n_done
    var = max(cost_sq_acc / n_done - cost_mean**2, 0.0)
    cost_se = float(np.sqrt(var / n_done))
    curve = MeasureCurve(grid, tgrid, hist, mass_tol=1e-9)
    return ParticleResult(
        grid=grid,
        tgrid=tgrid,
        hist_curve=curve,
        means=mean_acc,
        second_moments=m2_acc,
        cost_mean=cost_mean,
        cost_se=cost_se,
        n_particles=n_done,
    )


def superposition_gap(result: ParticleResult, fv_curve: MeasureCurve, time_indices=None):
    """Per-time 1-Wasserstein distance between the cloud histogram and the grid curve."""
    result.hist_curve.grid.require_same(fv_curve.grid, "superposition")
    result.hist_curve.tgrid.require_same(fv_curve.tgrid, "superposition")
    if time_indices is None:
        K = fv_curve.tgrid.steps
        time_indices = sorted({0, K // 4, K // 2, (3 * K) // 4, K})
    gaps = np.array(
        [
            wasserstein_p(
                result.hist_curve.weights[k], fv_curve.weights[k], fv_curve.grid, p=1
            )
            for k in time_indices
        ]
    )
    return float(gaps.max()), np.asarray(time_indices), gaps


def cost_estimate(result: ParticleResult):
    """Monte-Carlo control-cost estimate with its standard error."""
    return result.cost_mean, result.cost_se
