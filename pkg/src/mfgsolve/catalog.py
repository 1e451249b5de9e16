"""Built-in scenario families with documented constants.

Four model families cover the dependence ladder:

* ``quadratic``        — quadratic weight 1+|x|^2, linear drift, optional
                         attraction to the population mean (marginal mode).
* ``power``            — weight 1+|x|^m with m >= 2, odd polynomial
                         confining drift, |x|-Lipschitz diffusion amplitude.
* ``crowd-aversion``   — quadratic base whose running cost rewards distance
                         from the current crowd (marginal mode).
* ``curve-functional`` — running cost modulated by a bounded functional of
                         the whole time-integrated curve (curve mode).

plus ``unstable-cubic-drift``, a deliberately broken variant whose drift
outgrows its documented growth constant: the hypothesis checkers must
reject it.

Constants are baked at build time from the model parameters (closed-form
where a clean bound exists, dense-sample calibration for the power family)
and are exactly the numbers the checkers verify.
"""

import numpy as np

from .coefficients import ControlSet, CoefficientSet, LyapunovData, conjugate_fn
from .errors import ValidationError


def _slice_at(curve, t):
    k = int(round(t / curve.tgrid.dt))
    return curve.weights[min(max(k, 0), curve.tgrid.steps)]


def _require_curve(curve, label):
    if curve is None:
        raise ValidationError("%s coefficients need a population curve" % label)
    return curve


def _umag2(u):
    return np.sum(np.atleast_2d(np.asarray(u, dtype=float)) ** 2, axis=-1)


def time_integrated_moment(curve, zeta):
    """Left-endpoint quadrature of int_0^T <zeta, mu_t> dt over the curve."""
    vals = zeta(curve.grid.nodes) if callable(zeta) else np.asarray(zeta, dtype=float)
    return float(curve.tgrid.dt * (curve.weights[:-1] @ vals).sum())


def whole_curve_field(Phi, zeta):
    """Field (x, t, curve) -> Phi(x, t, int_0^T int zeta dmu dt)."""

    def phi(x, t, curve):
        s = time_integrated_moment(_require_curve(curve, "whole-curve"), zeta)
        return Phi(np.atleast_2d(x), t, s)

    return phi


def _quadratic_lyapunov(cost_weight):
    def V(x):
        return 1.0 + (np.atleast_2d(x) ** 2).sum(axis=1)

    def gradV(x):
        return 2.0 * np.atleast_2d(x)

    def hessV(x):
        x = np.atleast_2d(x)
        n, d = x.shape
        return np.tile(2.0 * np.eye(d), (n, 1, 1))

    def W(x):
        return np.sqrt((np.atleast_2d(x) ** 2).sum(axis=1))

    def h(v):
        return cost_weight * np.asarray(v, dtype=float) ** 2

    return V, gradV, hessV, W, h


def quadratic_model(
    dim=1,
    half_width=3.0,
    a0=0.5,
    kappa=1.0,
    kappa_mf=0.0,
    q0=1.0,
    q1=0.0,
    cost_weight=1.0,
    f_x=0.1,
    f_mf=0.0,
    g_x=0.1,
    control_bound=1.0,
    control_counts=5,
    control_kind="box",
):
    """Quadratic-weight family; drift -kappa*x (+ attraction to the mean)."""
    V, gradV, hessV, W, h = _quadratic_lyapunov(cost_weight)
    du = dim
    eye = np.eye(dim)

    def A(x, t, curve):
        n = np.atleast_2d(x).shape[0]
        return np.tile(a0 * eye, (n, 1, 1))

    def b(x, t, curve):
        x = np.atleast_2d(x)
        out = -kappa * x
        if kappa_mf != 0.0:
            mu = _slice_at(_require_curve(curve, "mean-attraction drift"), t)
            mean = mu @ curve.grid.nodes
            out = out + kappa_mf * mean[None, :]
        return out

    def Q(x, t, curve):
        x = np.atleast_2d(x)
        amp = q0 * (1.0 + q1 * np.sin(x[:, 0]))
        return amp[:, None, None] * eye[None, :, :]

    def f(u, x, t, curve):
        x = np.atleast_2d(x)
        out = cost_weight * _umag2(u) + f_x * np.linalg.norm(x, axis=1)
        if f_mf != 0.0:
            mu = _slice_at(_require_curve(curve, "mean-field running cost"), t)
            out = out + f_mf * float(mu @ np.linalg.norm(curve.grid.nodes, axis=1))
        return out

    def g(x, curve):
        return g_x * np.linalg.norm(np.atleast_2d(x), axis=1)

    gain = q0 * q0 * (1.0 + abs(q1)) ** 2 / cost_weight
    C_L = max(2.0 * a0 * dim, kappa_mf, kappa_mf - 2.0 * kappa + gain)
    theta_val = 0.5 * q0 * abs(q1)
    C2 = (
        a0 * (1.0 + abs(q1))
        + 0.5 * abs(kappa)
        + abs(kappa_mf) * half_width * np.sqrt(dim)
        + gain / 4.0
        + theta_val**2 / (4.0 * cost_weight)
    )
    lyap = LyapunovData(
        V=V,
        gradV=gradV,
        hessV=hessV,
        W=W,
        h=h,
        C_L=C_L,
        C_g=g_x,
        C_h=1.5,
        C_f=max(f_x, f_mf),
        C1=max(0.0, -kappa),
        C2=C2,
        Theta=(lambda x, t: np.full(np.atleast_2d(x).shape[0], theta_val)),
    )
    if control_kind == "box":
        controls = ControlSet.box([-control_bound] * du, [control_bound] * du, control_counts)
    else:
        controls = ControlSet.ball(control_bound, control_counts, dim=du)
    dependence = "none" if (kappa_mf == 0.0 and f_mf == 0.0) else "marginal"
    return CoefficientSet(
        dim=dim,
        A=A,
        b=b,
        Q=Q,
        f=f,
        g=g,
        controls=controls,
        default_control=np.zeros(du),
        lyapunov=lyap,
        dependence=dependence,
        label="quadratic",
    )


def power_model(
    dim=1,
    half_width=2.5,
    m_pow=4.0,
    p_pow=2.0,
    a0=0.3,
    a1=0.1,
    q0=1.0,
    b0=0.2,
    cost_weight=1.0,
    f_x=0.1,
    g_x=0.1,
    control_bound=1.0,
    control_counts=5,
):
    """Power-weight family: V = 1+|x|^m, confining drift -x|x|^{m-1} + b0."""
    if m_pow < 2 or not (1.0 <= p_pow < m_pow):
        raise ValidationError("need m >= 2 and 1 <= p < m")
    du = dim
    eye = np.eye(dim)
    b0_vec = np.full(dim, b0, dtype=float)
    tiny = 1e-300

    def _r(x):
        return np.sqrt((np.atleast_2d(x) ** 2).sum(axis=1))

    def V(x):
        return 1.0 + _r(x) ** m_pow

    def gradV(x):
        x = np.atleast_2d(x)
        r = np.maximum(_r(x), tiny)
        return m_pow * (r ** (m_pow - 2.0))[:, None] * x

    def hessV(x):
        x = np.atleast_2d(x)
        n, d = x.shape
        r = np.maximum(_r(x), tiny)
        term1 = m_pow * (r ** (m_pow - 2.0))[:, None, None] * eye[None, :, :]
        xxt = np.einsum("ni,nj->nij", x, x)
        term2 = m_pow * (m_pow - 2.0) * (r ** (m_pow - 4.0))[:, None, None] * xxt
        return term1 + term2

    def W(x):
        return _r(x) ** p_pow

    def h(v):
        return cost_weight * np.asarray(v, dtype=float) ** 2

    def A(x, t, curve):
        amp = (a0 + a1 * _r(x)) ** 2
        return amp[:, None, None] * eye[None, :, :]

    def b(x, t, curve):
        x = np.atleast_2d(x)
        r = _r(x)
        return -x * (r ** (m_pow - 1.0))[:, None] + b0_vec[None, :]

    def Q(x, t, curve):
        n = np.atleast_2d(x).shape[0]
        return np.tile(q0 * eye, (n, 1, 1))

    def f(u, x, t, curve):
        return cost_weight * _umag2(u) + f_x * W(x)

    def g(x, curve):
        return g_x * W(x)

    # dense-sample calibration of the growth constants (documented numbers)
    r = np.linspace(0.0, half_width * np.sqrt(dim), 4001)
    rs = np.maximum(r, tiny)
    lv_max = (
        (a0 + a1 * r) ** 2 * m_pow * rs ** (m_pow - 2.0) * (dim + m_pow - 2.0)
        + m_pow * rs ** (m_pow - 2.0) * (-(r ** (m_pow + 1.0)) + abs(b0) * np.sqrt(dim) * r)
        + (m_pow**2 * q0**2 / (4.0 * cost_weight)) * rs ** (2.0 * m_pow - 2.0)
    )
    C_L = float(max(np.max(lv_max / (1.0 + r**m_pow)), 0.05) * (1.0 + 1e-9))
    c2_num = (a0 + a1 * r) ** 2 + r**m_pow + abs(b0) * np.sqrt(dim) + q0**2 / (
        4.0 * cost_weight
    )
    C2 = float(np.max(c2_num / (1.0 + r**m_pow)) * (1.0 + 1e-9))
    lyap = LyapunovData(
        V=V,
        gradV=gradV,
        hessV=hessV,
        W=W,
        h=h,
        C_L=C_L,
        C_g=g_x,
        C_h=1.5,
        C_f=f_x,
        C1=dim * a1**2,
        C2=C2,
    )
    controls = ControlSet.box([-control_bound] * du, [control_bound] * du, control_counts)
    return CoefficientSet(
        dim=dim,
        A=A,
        b=b,
        Q=Q,
        f=f,
        g=g,
        controls=controls,
        default_control=np.zeros(du),
        lyapunov=lyap,
        dependence="none",
        label="power",
    )


def crowd_aversion_model(
    dim=1,
    half_width=2.0,
    a0=0.05,
    kappa=1.0,
    q0=1.0,
    cost_weight=1.0,
    crowd=0.5,
    g_crowd=0.0,
    control_bound=1.0,
    control_counts=5,
):
    """Quadratic base whose running cost rewards moving away from the crowd.

    f(u, x, t, mu) = C|u|^2 - crowd * int |x-y| mu_t(dy): cheapest where the
    average distance to the population is large, so best responses spread
    out.  Fits the two-sided cost comparison with C_f = crowd (+ g_crowd).
    """
    base = quadratic_model(
        dim=dim,
        half_width=half_width,
        a0=a0,
        kappa=kappa,
        q0=q0,
        cost_weight=cost_weight,
        f_x=0.0,
        g_x=0.0,
        control_bound=control_bound,
        control_counts=control_counts,
    )

    def mean_distance(x, mu, grid):
        x = np.atleast_2d(x)
        diff = x[:, None, :] - grid.nodes[None, :, :]
        return np.sqrt((diff**2).sum(axis=2)) @ mu

    def f(u, x, t, curve):
        curve = _require_curve(curve, "crowd running cost")
        mu = _slice_at(curve, t)
        return cost_weight * _umag2(u) - crowd * mean_distance(x, mu, curve.grid)

    def g(x, curve):
        x = np.atleast_2d(x)
        if g_crowd == 0.0:
            return np.zeros(x.shape[0])
        curve = _require_curve(curve, "crowd terminal cost")
        return -g_crowd * mean_distance(x, curve.weights[-1], curve.grid)

    base.f = f
    base.g = g
    base.dependence = "marginal"
    base.label = "crowd-aversion"
    base.lyapunov.C_f = crowd
    base.lyapunov.C_g = max(g_crowd, 1e-12)
    return base


def curve_functional_model(
    dim=1,
    half_width=3.0,
    a0=0.5,
    kappa=1.0,
    q0=1.0,
    cost_weight=1.0,
    f_mod=0.3,
    g_x=0.1,
    Phi=None,
    zeta=None,
    control_bound=1.0,
    control_counts=5,
):
    """Running cost modulated by a bounded whole-curve functional."""
    base = quadratic_model(
        dim=dim,
        half_width=half_width,
        a0=a0,
        kappa=kappa,
        q0=q0,
        cost_weight=cost_weight,
        f_x=0.0,
        g_x=g_x,
        control_bound=control_bound,
        control_counts=control_counts,
    )
    if zeta is None:
        zeta = lambda y: 1.0 / (1.0 + (np.atleast_2d(y) ** 2).sum(axis=1))
    if Phi is None:
        Phi = lambda x, t, r: r / (1.0 + r)  # bounded by 1
    field = whole_curve_field(Phi, zeta)

    def f(u, x, t, curve):
        x = np.atleast_2d(x)
        mod = np.asarray(field(x, t, curve), dtype=float)
        return cost_weight * _umag2(u) + f_mod * np.linalg.norm(x, axis=1) * mod

    base.f = f
    base.dependence = "curve"
    base.label = "curve-functional"
    base.lyapunov.C_f = f_mod
    return base


def unstable_cubic_model(**kwargs):
    """Deliberately broken: cubic outward drift under the quadratic constants."""
    base = quadratic_model(**kwargs)

    def b(x, t, curve):
        x = np.atleast_2d(x)
        return x * (x**2).sum(axis=1)[:, None]

    base.b = b
    base.label = "unstable-cubic-drift"
    return base


CATALOG = {
    "quadratic": quadratic_model,
    "power": power_model,
    "crowd-aversion": crowd_aversion_model,
    "curve-functional": curve_functional_model,
    "unstable-cubic-drift": unstable_cubic_model,
}


def example_catalog(name, **overrides) -> CoefficientSet:
    """Build a catalog scenario by name with parameter overrides."""
    if name not in CATALOG:
        raise ValidationError(
            "unknown scenario %r; available: %s" % (name, ", ".join(sorted(CATALOG)))
        )
    return CATALOG[name](**overrides)
