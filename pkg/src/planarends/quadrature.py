"""Numerical integration over the punctured sphere.

Two modes share one machinery:

* ``global``: hard two-chart split (origin-centered polar grids in the z
  and w = 1/z charts).  Correct and spectrally accurate for integrands
  whose chart density is smooth across the ends (total curvature is the
  prime example: K*rho is real-analytic everywhere).

* ``ends``: smooth partition of unity with one radial bump per end plus
  the two-chart bulk.  Each end contribution is integrated on geometric
  annular rings in the normalized end coordinate, so the bump kinks sit
  exactly on panel boundaries; the rings also provide the family of
  boundary-restricted integrals over the complement of end disks.

Error estimates come from order doubling (radial Gauss-Legendre order
and angular trapezoid count both doubled).  Summation order is fixed,
so results are bit-stable run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ends import WeierstrassSurface
from .surface import EndChart, GaussData, MinimalImmersion, gauss_data, normalize_end_chart

__all__ = [
    "QuadratureScheme",
    "SurfaceQuadrature",
    "InvariantReport",
    "integrate_surface",
    "circle_integral",
    "boundary_flux_absX2",
    "geometric_invariants",
    "QuadratureError",
]


class QuadratureError(RuntimeError):
    pass


def _smoothstep(t):
    """C^4 polynomial step: 0 at t<=0, 1 at t>=1."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))))


@dataclass
class QuadratureScheme:
    """Knobs for the two-chart + annular-ring quadrature."""

    radial_order: int = 12
    angular_nodes: int = 96
    bulk_radial_order: int = 16
    bulk_angular_nodes: int = 192
    ring_ratio: float = 2.0
    max_rings: int = 60
    target_tol: float = 1e-9
    chart_split: float | None = None  # |z| radius separating the charts
    swap_charts: bool = False


@dataclass
class _EndPatch:
    chart: EndChart
    r_outer: float      # normalized radius of the bump's outer edge
    r_inner: float      # bump == 1 inside this radius


class SurfaceQuadrature:
    """Precomputed geometry: end charts, bump radii, chart split."""

    def __init__(self, ws: WeierstrassSurface, im: MinimalImmersion,
                 scheme: QuadratureScheme | None = None):
        self.ws = ws
        self.im = im
        self.gd = gauss_data(ws)
        self.scheme = scheme or QuadratureScheme()
        p = ws.config.finite_ends
        span = float(np.max(np.abs(p))) + 1.0
        self.R1 = self.scheme.chart_split or 2.0 * span
        self.patches: list[_EndPatch] = []
        # end at infinity: bump lives where |z| >= 2 R1
        ch0 = normalize_end_chart(im, 0)
        r0 = abs(ch0.scale) / (2.0 * self.R1)
        self.patches.append(_EndPatch(ch0, r0, 0.5 * r0))
        for i in range(1, ws.m):
            ch = normalize_end_chart(im, i)
            sep = min(abs(p[i - 1] - q) for j, q in enumerate(p) if j != i - 1) if len(p) > 1 else 1.0
            d = 0.35 * min(sep, self.R1 - abs(p[i - 1]))
            self.patches.append(_EndPatch(ch, abs(ch.scale) * d, 0.5 * abs(ch.scale) * d))

    # -- partition of unity ------------------------------------------

    def bump(self, patch: _EndPatch, r):
        return 1.0 - _smoothstep((r - patch.r_inner) / (patch.r_outer - patch.r_inner))

    def pu_weights(self, z):
        """Weights (per end..., bulk) at points z; they sum to one."""
        z = np.asarray(z, dtype=complex)
        ws = []
        for patch in self.patches:
            r = np.abs(patch.chart.to_chart(z))
            ws.append(self.bump(patch, r))
        ws = np.stack(ws, axis=0)
        bulk = 1.0 - np.sum(ws, axis=0)
        return ws, bulk

    def chart_weight(self, z):
        """Smooth two-chart weight: 1 in the z chart, 0 in the w chart."""
        r = np.abs(np.asarray(z, dtype=complex))
        return 1.0 - _smoothstep(r / self.R1 - 1.0)

    def rho_chartwise(self, chart: str, pts):
        if chart == "z":
            return self.gd.rho(pts)
        return self.gd.rho_w(pts)

    def ladder_radii(self, end_index: int) -> np.ndarray:
        patch = self.patches[end_index]
        ks = np.arange(self.scheme.max_rings + 1)
        return patch.r_outer * self.scheme.ring_ratio ** (-ks.astype(float))


def _gl_nodes(a: float, b: float, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _polar_panel(f_times_density, r0: float, r1: float, n_rad: int, n_ang: int,
                 center: complex = 0.0) -> float:
    """integral over the annulus r0<=|u-center|<=r1 of F(u) dA,
    F supplied as values on the polar grid."""
    rr, wr = _gl_nodes(r0, r1, n_rad)
    th = 2.0 * np.pi * np.arange(n_ang) / n_ang
    wth = 2.0 * np.pi / n_ang
    U = center + np.multiply.outer(rr, np.exp(1j * th))
    vals = f_times_density(U)
    return float(np.sum(wr[:, None] * rr[:, None] * vals) * wth)


def _end_density(sq: SurfaceQuadrature, patch: _EndPatch, zeta):
    """Chart density in the normalized end coordinate."""
    ch = patch.chart
    if ch.at_infinity:
        w = zeta / ch.scale
        return sq.gd.rho_w(w) / abs(ch.scale) ** 2
    z = ch.from_chart(zeta)
    return sq.gd.rho(z) / abs(ch.scale) ** 2


def _end_rings(sq: SurfaceQuadrature, f, end_index: int, order: int, n_ang: int,
               stop_radius: float | None = None, with_bump: bool = True):
    """Per-ring integrals of f (a function on the surface, fed z-chart
    coordinates) around one end, outermost first.  Returns (radii, sums)
    with radii[k] the inner radius of ring k."""
    patch = sq.patches[end_index]
    ch = patch.chart
    scheme = sq.scheme
    radii = sq.ladder_radii(end_index)
    sums = []
    inner = []

    def integrand(zeta):
        z = ch.from_chart(zeta)
        vals = f(z) * _end_density(sq, patch, zeta)
        if with_bump:
            vals = vals * sq.bump(patch, np.abs(zeta))
        return vals

    for k in range(len(radii) - 1):
        r_hi, r_lo = radii[k], radii[k + 1]
        if stop_radius is not None and r_lo < stop_radius - 1e-15:
            break
        if k == 0:
            # bump transition ring: split at the inner bump edge
            s = _polar_panel(integrand, patch.r_inner, r_hi, order, n_ang)
            sums.append(s)
            inner.append(patch.r_inner)
            continue
        s = _polar_panel(integrand, r_lo, r_hi, order, n_ang)
        sums.append(s)
        inner.append(r_lo)
        if stop_radius is None and len(sums) > 6:
            tail = abs(sums[-1]) + abs(sums[-2])
            if tail <= scheme.target_tol * max(1.0, abs(np.sum(sums))):
                break
    return np.asarray(inner), np.asarray(sums)


def _check_integrable(inner, sums):
    """Reject integrands whose ring sums grow toward the puncture."""
    if len(sums) < 6:
        return
    a = np.abs(sums[-4:])
    if np.all(np.diff(a) > 0) and a[-1] > 10 * abs(np.sum(sums)) * 1e-12:
        expo = float(np.log(a[-1] / a[-4]) / np.log(8.0))
        raise QuadratureError(
            f"non-integrable tail: ring sums grow with exponent {expo:.2f}")


def _bulk_integral(sq: SurfaceQuadrature, f, order: int, n_ang: int,
                   with_pu: bool, n_subdiv: int = 3) -> float:
    """Two-chart bulk: z-polar up to 2 R1 and w-polar up to 1/R1 with the
    smooth chart weight; optionally multiplied by the end-bump complement.

    The bump transition circles are not aligned with origin-centered
    panels, so panels are subdivided and the angular count doubled; the
    bumps are C^4, which suffices at this resolution.
    """
    R1 = sq.R1
    n_ang = 2 * n_ang

    def fz(u):
        vals = f(u) * sq.gd.rho(u) * sq.chart_weight(u)
        if with_pu:
            _, bulk = sq.pu_weights(u)
            vals = vals * bulk
        return vals

    def fw(u):
        # u is the w coordinate; the surface function is fed z = 1/u
        z = 1.0 / u
        vals = f(z) * sq.gd.rho_w(u) * (1.0 - sq.chart_weight(z))
        if with_pu:
            _, bulk = sq.pu_weights(z)
            vals = vals * bulk
        return vals

    def subdivided(points):
        out = [points[0]]
        for a, b in zip(points[:-1], points[1:]):
            for j in range(1, n_subdiv + 1):
                out.append(a + (b - a) * j / n_subdiv)
        return out

    # radial breakpoints: chart collar and tangency radii of the end bumps
    breaks_z = {0.0, R1, 2.0 * R1}
    for patch in sq.patches[1:]:
        c = abs(patch.chart.p)
        for rr in (patch.r_inner, patch.r_outer):
            d = rr / abs(patch.chart.scale)
            breaks_z.add(max(c - d, 0.0))
            breaks_z.add(c + d)
    bz = subdivided(sorted(b for b in breaks_z if b <= 2.0 * R1 + 1e-12))
    total = 0.0
    for a, b in zip(bz[:-1], bz[1:]):
        if b - a > 1e-14:
            total += _polar_panel(fz, a, b, order, n_ang)
    # w chart: breakpoints at the infinity bump edges and the collar
    s0 = abs(sq.patches[0].chart.scale)
    breaks_w = subdivided(sorted({0.0, sq.patches[0].r_inner / s0,
                                  sq.patches[0].r_outer / s0, 0.5 / R1, 1.0 / R1}))
    for a, b in zip(breaks_w[:-1], breaks_w[1:]):
        if b - a > 1e-14:
            total += _polar_panel(fw, max(a, 1e-300), b, order, n_ang)
    return total


def _integrate_once(sq: SurfaceQuadrature, f, order: int, n_ang: int,
                    mode: str, exclude: dict[int, float] | None):
    if mode == "global":
        # hard split at |z| = S: z-polar inside, w-polar outside; swapping
        # the chart roles moves the split to |z| = 1/S
        S = (1.0 / sq.R1) if sq.scheme.swap_charts else sq.R1

        def fz(u):
            return f(u) * sq.gd.rho(u)

        def fw(u):
            return f(1.0 / u) * sq.gd.rho_w(u)

        def panelize(breaks, hi):
            pts = sorted({0.0, hi, *(b for b in breaks if 1e-14 < b < hi)})
            refined = [pts[0]]
            for x, y in zip(pts[:-1], pts[1:]):
                refined.extend([0.5 * (x + y), y])
            return refined

        radii = [abs(p) for p in sq.ws.config.finite_ends]
        bz = panelize(radii, S)
        bw = panelize([1.0 / r for r in radii if r > 1e-14], 1.0 / S)
        val = 0.0
        for a, b in zip(bz[:-1], bz[1:]):
            val += _polar_panel(fz, max(a, 1e-300), b, order, n_ang)
        for a, b in zip(bw[:-1], bw[1:]):
            val += _polar_panel(fw, max(a, 1e-300), b, order, n_ang)
        return val

    total = _bulk_integral(sq, f, order, n_ang, with_pu=True)
    for end_index in range(sq.ws.m):
        stop = None if exclude is None else exclude.get(end_index)
        inner, sums = _end_rings(sq, f, end_index, order, n_ang, stop_radius=stop)
        _check_integrable(inner, sums)
        total += float(np.sum(sums))
        if exclude is None and len(sums) >= 3:
            # geometric tail extrapolation of the truncated ladder
            r = abs(sums[-1]) / max(abs(sums[-2]), 1e-300)
            if r < 0.9:
                total += sums[-1] * r / (1.0 - r)
    return total


def integrate_surface(f, ws: WeierstrassSurface, qs: SurfaceQuadrature | None = None,
                      mode: str = "ends", exclude: dict[int, float] | None = None,
                      scheme: QuadratureScheme | None = None):
    """Integral of f over the surface with the metric area element.

    f is a vectorized function of the z-chart coordinate and must be
    stable for |z| up to ~1e15 (points on the rings at infinity are fed
    as large finite coordinates).  Returns (value, error_estimate); the
    estimate is the order-doubling discrepancy.
    """
    if qs is None:
        from .surface import build_immersion
        qs = SurfaceQuadrature(ws, build_immersion(ws), scheme)
    sc = qs.scheme
    coarse = _integrate_once(sq=qs, f=f, order=sc.radial_order, n_ang=sc.angular_nodes,
                             mode=mode, exclude=exclude)
    fine = _integrate_once(sq=qs, f=f, order=2 * sc.radial_order,
                           n_ang=2 * sc.angular_nodes, mode=mode, exclude=exclude)
    return fine, abs(fine - coarse)


def circle_integral(values, end_chart: EndChart, eps: float, n_nodes: int = 256):
    """Trapezoid rule of a periodic integrand on the circle |zeta| = eps
    in the normalized end coordinate, arclength convention:
    integral of values(zeta) * eps dtheta.  Spectrally accurate."""
    if n_nodes < 256:
        n_nodes = 256
    th = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    zeta = eps * np.exp(1j * th)
    vals = values(zeta)
    return float(np.sum(vals) * (2.0 * np.pi / n_nodes) * eps)


def boundary_flux_absX2(im: MinimalImmersion, ch: EndChart, eps: float,
                        n_nodes: int = 256) -> float:
    """Metric boundary integral of the normal derivative of |X|^2 on the
    circle |zeta| = eps: equals the flat-chart integral of -d|X|^2/dr."""
    th = 2.0 * np.pi * np.arange(max(n_nodes, 256)) / max(n_nodes, 256)
    zeta = eps * np.exp(1j * th)
    z = ch.from_chart(zeta)
    dz_dzeta = (-ch.scale / zeta ** 2) if ch.at_infinity else (1.0 / ch.scale) * np.ones_like(zeta)
    # d_r |X|^2 = 2 Re(e^{i th} d_zeta |X|^2); d_zeta |X|^2 = (X . phi) dz/dzeta
    dzeta_absX2 = im.dz_absX2(z) * dz_dzeta
    d_r = 2.0 * np.real(np.exp(1j * th) * dzeta_absX2)
    return float(np.sum(-d_r) * (2.0 * np.pi / len(th)) * eps)


@dataclass
class InvariantReport:
    total_curvature: float
    total_curvature_err: float
    willmore_energy: float
    willmore_energy_err: float
    c_squared: float
    c_squared_err: float

    def as_dict(self) -> dict:
        return {
            "total_curvature": self.total_curvature,
            "total_curvature_err": self.total_curvature_err,
            "willmore_energy": self.willmore_energy,
            "willmore_energy_err": self.willmore_energy_err,
            "c_squared": self.c_squared,
            "c_squared_err": self.c_squared_err,
        }


def geometric_invariants(ws: WeierstrassSurface, qs: SurfaceQuadrature | None = None) -> InvariantReport:
    """Total curvature, Willmore energy of the inversion (genus zero:
    4 pi plus total absolute curvature), and the positive second-variation
    constant c^2 = integral of K^2 |X|^4 - 4 K |X|^2."""
    if qs is None:
        from .surface import build_immersion
        qs = SurfaceQuadrature(ws, build_immersion(ws))
    gd, im = qs.gd, qs.im

    tk, tk_err = integrate_surface(gd.K, ws, qs, mode="global")
    W = 4.0 * np.pi - tk
    W_err = tk_err

    def c2_integrand(z):
        K = gd.K(z)
        aX2 = im.abs_X_sq(z)
        return K * K * aX2 * aX2 - 4.0 * K * aX2

    c2, c2_err = integrate_surface(c2_integrand, ws, qs, mode="ends")
    if not (c2 > 0.0 and c2 - c2_err > 0.0):
        raise QuadratureError(f"c^2 = {c2} +/- {c2_err} not positive")
    return InvariantReport(tk, tk_err, W, W_err, c2, c2_err)
