"""Normal-span rank, the index of the inverted sphere, second-variation
evaluation, integration-by-parts and end-expansion checks, ramification
bookkeeping, and the logarithmically-growing Jacobi field solver.

The Jacobi operator in a conformal chart is Delta - 2 K rho (flat
Laplacian and the smooth potential 2 K rho); compactified against the
round sphere metric it reads Delta_S2 - Vtilde with the bounded
potential Vtilde supplied by the Gauss data.  The log-field solver
works in that compactified picture with a real spherical-harmonic basis
plus one harmonic pole block per end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import cluster_roots, poly_roots
from .ends import (
    EndConfiguration,
    SurfaceValidationError,
    WeierstrassSurface,
    assemble_weierstrass,
    build_end_matrix,
    kernel_basis,
    pfaffian,
)
from .quadrature import (
    InvariantReport,
    QuadratureError,
    SurfaceQuadrature,
    _bulk_integral,
    _end_rings,
    boundary_flux_absX2,
    geometric_invariants,
    integrate_surface,
)
from .surface import (
    EndChart,
    GaussData,
    MinimalImmersion,
    build_immersion,
    normalize_end_chart,
)

__all__ = [
    "IndexReport",
    "VariationField",
    "EndLocalField",
    "LogJacobiSolution",
    "normal_span",
    "log_jacobi_kernel",
    "index_report",
    "second_variation",
    "optimal_direction",
    "ibp_closed_form",
    "ibp_residual",
    "end_expansion_residual",
    "ramification_divisor",
    "solve_log_jacobi",
    "symmetry_residual",
    "symmetrize_immersion",
    "rotate_surface",
    "pfaffian_zero_config",
]

RANK_TOL = 1e-8


# ---------------------------------------------------------------------------
# normals, rank, index
# ---------------------------------------------------------------------------


def normal_span(ws: WeierstrassSurface, gd: GaussData | None = None,
                rank_tol: float = RANK_TOL):
    """Unit normals at the ends and the dimension of their span
    (numerical rank at a relative singular-value threshold)."""
    gd = gd or GaussData(ws)
    normals = gd.end_normals()
    s = np.linalg.svd(normals.T, compute_uv=False)
    d = int(np.sum(s > rank_tol * s[0]))
    return normals, d


def log_jacobi_kernel(normals: np.ndarray, rank_tol: float = RANK_TOL):
    """Orthonormal basis of {alpha : sum_i alpha_i n(p_i) = 0}."""
    A = np.asarray(normals, dtype=float).T  # 3 x m
    u, s, vh = np.linalg.svd(A)
    rank = int(np.sum(s > rank_tol * s[0]))
    basis = [vh[j] for j in range(rank, A.shape[1])]
    return len(basis), basis


@dataclass
class IndexReport:
    m: int
    normals: np.ndarray
    d: int
    index: int
    log_jacobi_dim: int
    energies: InvariantReport | None = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "m": self.m,
            "end_normals": self.normals.tolist(),
            "normal_span_dim": self.d,
            "index": self.index,
            "log_jacobi_dim": self.log_jacobi_dim,
            "diagnostics": self.diagnostics,
        }
        if self.energies is not None:
            out["energies"] = self.energies.as_dict()
        return out


def index_report(ws: WeierstrassSurface, qs: SurfaceQuadrature | None = None,
                 with_energies: bool = True) -> IndexReport:
    """Index of the inverted sphere: number of ends minus the normal-span
    dimension; the log-Jacobi dimension is the complementary nullity."""
    gd = qs.gd if qs is not None else GaussData(ws)
    normals, d = normal_span(ws, gd)
    N, _ = log_jacobi_kernel(normals)
    diag = {}
    if d < 2:
        diag["warning"] = "normal span dimension < 2 is impossible for valid data"
    energies = geometric_invariants(ws, qs) if with_energies else None
    return IndexReport(ws.m, normals, d, ws.m - d, N, energies, diag)


def optimal_direction(beta: float, c_squared: float):
    """Minimizer of v (8 pi beta + 2 v c^2): v* = -2 pi beta / c^2 with
    value -8 pi^2 beta^2 / c^2."""
    if not c_squared > 0.0:
        raise ValueError("c^2 must be positive")
    v_star = -2.0 * np.pi * beta / c_squared
    value = -8.0 * np.pi ** 2 * beta ** 2 / c_squared
    return v_star, value


# ---------------------------------------------------------------------------
# variation fields with closed-form Jacobi images
# ---------------------------------------------------------------------------


@dataclass
class VariationField:
    """w = v |X|^2 + (t.n)|X|^2 + (b.n) + harmonic blocks.

    Harmonic blocks: log weights c_i on ln|z - p_i| for finite ends,
    pole blocks Re(d_i/(z - p_i)), a linear block Re(d_0 z) (the pole
    block of the end at infinity), and a constant.  The closed-form
    image under the Jacobi operator needs no numerical differentiation:
    harmonic blocks map to -2K times themselves, |X|^2 maps to
    4 - 2K|X|^2, the translation part to 4(t.n) + 2 <grad(t.n),
    grad|X|^2>, and (b.n) to zero.
    """

    v: float = 0.0
    translation: np.ndarray | None = None
    bounded: np.ndarray | None = None
    log_c: dict[int, float] = field(default_factory=dict)
    pole_d: dict[int, complex] = field(default_factory=dict)
    const: float = 0.0

    def same_v(self) -> bool:
        return self.translation is None

    def leading_coefficients(self, sq: SurfaceQuadrature) -> np.ndarray:
        """v_i per end (row 0 the end at infinity)."""
        v = np.full(sq.ws.m, self.v, dtype=float)
        if self.translation is not None:
            normals = sq.gd.end_normals()
            v += normals @ np.asarray(self.translation, dtype=float)
        return v

    def log_weights(self, m: int) -> np.ndarray:
        """beta_i per end; a global ln|z - p_i| block carries +1 at its
        end and -1 at infinity, so the weights sum to zero."""
        beta = np.zeros(m)
        for i, c in self.log_c.items():
            if i == 0:
                raise ValueError("log block at infinity is not independent")
            beta[i] += c
            beta[0] -= c
        return beta

    # -- pointwise evaluation ----------------------------------------

    def blocks(self, sq: SurfaceQuadrature, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, self.const, dtype=float)
        p = sq.ws.config.finite_ends
        for i, c in self.log_c.items():
            out = out + c * np.log(np.abs(z - p[i - 1]))
        for i, d in self.pole_d.items():
            if i == 0:
                out = out + np.real(d * z)
            else:
                out = out + np.real(d / (z - p[i - 1]))
        return out

    def dz_blocks(self, sq: SurfaceQuadrature, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        p = sq.ws.config.finite_ends
        for i, c in self.log_c.items():
            out = out + 0.5 * c / (z - p[i - 1])
        for i, d in self.pole_d.items():
            if i == 0:
                out = out + 0.5 * d
            else:
                out = out - 0.5 * d / (z - p[i - 1]) ** 2
        return out

    def dzz_blocks(self, sq: SurfaceQuadrature, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        p = sq.ws.config.finite_ends
        for i, c in self.log_c.items():
            out = out - 0.5 * c / (z - p[i - 1]) ** 2
        for i, d in self.pole_d.items():
            if i != 0:
                out = out + d / (z - p[i - 1]) ** 3
        return out

    def w1(self, sq: SurfaceQuadrature, z):
        """The part added to v |X|^2 (blocks plus bounded field)."""
        out = self.blocks(sq, z)
        if self.bounded is not None:
            out = out + sq.gd.normal(z) @ np.asarray(self.bounded, float)
        return out

    def value(self, sq: SurfaceQuadrature, z):
        z = np.asarray(z, dtype=complex)
        aX2 = sq.im.abs_X_sq(z)
        out = self.v * aX2 + self.w1(sq, z)
        if self.translation is not None:
            t = np.asarray(self.translation, float)
            out = out + (sq.gd.normal(z) @ t) * aX2
        return out

    def L_value(self, sq: SurfaceQuadrature, z):
        """Closed-form Jacobi image L w (conformal Laplacian minus 2K)."""
        z = np.asarray(z, dtype=complex)
        K = sq.gd.K(z)
        aX2 = sq.im.abs_X_sq(z)
        out = self.v * (4.0 - 2.0 * K * aX2)
        out = out - 2.0 * K * self.blocks(sq, z)
        if self.translation is not None:
            t = np.asarray(self.translation, float)
            tn = sq.gd.normal(z) @ t
            dz_tn = np.sum(np.asarray(t) * sq.gd.dz_normal(z), axis=-1)
            grad_pair = 4.0 * np.real(dz_tn * np.conj(sq.im.dz_absX2(z)))
            out = out + 4.0 * tn + 2.0 * grad_pair / sq.gd.rho(z)
        # the (b.n) summand is a bounded Jacobi field: L(b.n) = 0
        return out

    def L_w1_value(self, sq: SurfaceQuadrature, z):
        """L of the w1 part alone (same-v closed form): -2K * blocks."""
        return -2.0 * sq.gd.K(z) * self.blocks(sq, z)


def _richardson(eps: np.ndarray, vals: np.ndarray, degree: int = 3):
    """Fit vals = S0 + c1 eps + ... + c_deg eps^deg, return (S0, fit rms)."""
    A = np.vander(eps, degree + 1, increasing=True)
    coef, res, *_ = np.linalg.lstsq(A, vals, rcond=None)
    fit = A @ coef
    return float(coef[0]), float(np.sqrt(np.mean((fit - vals) ** 2)))


def second_variation(ws: WeierstrassSurface, qs: SurfaceQuadrature,
                     fld: VariationField, mode: str = "bulk",
                     c_squared: float | None = None,
                     n_eps: int = 7, richardson_degree: int = 3):
    """Second variation of the Willmore energy of the inverted sphere in
    the direction w/|X|^2.

    bulk mode (same leading coefficient at every end):
        1/2 int (L w1)^2 + 2 v int L w1 (2 - K |X|^2)
        + 8 pi v sum_i beta_i + 2 v^2 c^2.
    boundary mode: the epsilon-family
        int_{outside eps disks} 1/2 (L w)^2
        - 2 sum_i v_i^2 (flux of |X|^2 at eps) + 8 pi sum_i v_i beta_i,
    Richardson-extrapolated in eps (normalized end radii).
    """
    m = ws.m
    beta = fld.log_weights(m)
    if mode == "bulk":
        if not fld.same_v():
            raise ValueError("bulk mode requires the same leading coefficient "
                             "at every end")
        if c_squared is None:
            c_squared = geometric_invariants(ws, qs).c_squared
        t1, _ = integrate_surface(lambda z: fld.L_w1_value(qs, z) ** 2, ws, qs, mode="ends")
        t2, _ = integrate_surface(
            lambda z: fld.L_w1_value(qs, z) * (2.0 - qs.gd.K(z) * qs.im.abs_X_sq(z)),
            ws, qs, mode="ends")
        return (0.5 * t1 + 2.0 * fld.v * t2
                + 8.0 * np.pi * fld.v * float(np.sum(beta))
                + 2.0 * fld.v ** 2 * c_squared)

    if mode != "boundary":
        raise ValueError("mode must be 'bulk' or 'boundary'")

    v_ends = fld.leading_coefficients(qs)
    sc = qs.scheme
    order, n_ang = sc.radial_order, sc.angular_nodes

    def integrand(z):
        return 0.5 * fld.L_value(qs, z) ** 2

    bulk = _bulk_integral(qs, integrand, order, n_ang, with_pu=True)
    # ring ladders once per end; partial sums give the whole eps family
    k0 = 2
    ring_data = []
    for i in range(m):
        radii = qs.ladder_radii(i)
        stop = radii[k0 + n_eps]
        inner, sums = _end_rings(qs, integrand, i, order, n_ang, stop_radius=stop)
        ring_data.append((inner, sums))
    charts = [normalize_end_chart(qs.im, i) for i in range(m)]

    s_vals, eps_scale = [], []
    for k in range(n_eps):
        total = bulk
        eps_k = 0.0
        for i in range(m):
            inner, sums = ring_data[i]
            eps_i = qs.ladder_radii(i)[k0 + k]
            keep = inner >= eps_i - 1e-15
            total += float(np.sum(sums[keep]))
            flux = boundary_flux_absX2(qs.im, charts[i], eps_i)
            total -= 2.0 * v_ends[i] ** 2 * flux
            eps_k = max(eps_k, eps_i)
        total += 8.0 * np.pi * float(np.sum(v_ends * beta))
        s_vals.append(total)
        eps_scale.append(eps_k)
    s_vals = np.asarray(s_vals)
    eps_scale = np.asarray(eps_scale)
    limit, rms = _richardson(eps_scale, s_vals, degree=richardson_degree)
    spread = float(np.max(np.abs(s_vals - limit)))
    if rms > 0.05 * max(spread, 1e-12) + 1e-6 * max(1.0, abs(limit)):
        raise QuadratureError(
            f"boundary-mode extrapolation did not converge: rms {rms:.2e}, "
            f"values {s_vals.tolist()}")
    return limit


# ---------------------------------------------------------------------------
# integration by parts at one end
# ---------------------------------------------------------------------------


@dataclass
class EndLocalField:
    """u = Re(a/zeta) + alpha ln|zeta| + smooth, in the normalized chart
    of one end; smooth is a list of (coeff, j, k) monomials
    Re(c zeta^j conj(zeta)^k).  With a cutoff radius the field is
    compactly supported in the chart."""

    a: complex = 0.0
    alpha: float = 0.0
    smooth: list[tuple[complex, int, int]] = field(default_factory=list)
    cutoff: tuple[float, float] | None = None  # (r1, r2): 1 inside r1, 0 outside r2

    def smooth_value(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        out = np.zeros(zeta.shape, dtype=float)
        for c, j, k in self.smooth:
            out = out + np.real(c * zeta ** j * np.conj(zeta) ** k)
        return out

    def smooth_at_zero(self) -> float:
        return float(sum(np.real(c) for c, j, k in self.smooth if j == 0 and k == 0))

    def dz_smooth_at_zero(self) -> complex:
        out = 0.0 + 0.0j
        for c, j, k in self.smooth:
            if (j, k) == (1, 0):
                out += c / 2.0
            elif (j, k) == (0, 1):
                out += np.conj(c) / 2.0
        return complex(out)

    def core_value(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        out = self.smooth_value(zeta)
        if self.a != 0.0:
            out = out + np.real(self.a / zeta)
        if self.alpha != 0.0:
            out = out + self.alpha * np.log(np.abs(zeta))
        return out

    def core_dz(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        out = np.zeros(zeta.shape, dtype=complex)
        for c, j, k in self.smooth:
            if j >= 1:
                out = out + 0.5 * c * j * zeta ** (j - 1) * np.conj(zeta) ** k
            if k >= 1:
                out = out + 0.5 * np.conj(c) * k * zeta ** (k - 1) * np.conj(zeta) ** j
        if self.a != 0.0:
            out = out - 0.5 * self.a / zeta ** 2
        if self.alpha != 0.0:
            out = out + 0.5 * self.alpha / zeta
        return out

    def core_laplacian(self, zeta):
        """Flat Laplacian; the singular summands are harmonic."""
        zeta = np.asarray(zeta, dtype=complex)
        out = np.zeros(zeta.shape, dtype=float)
        for c, j, k in self.smooth:
            if j >= 1 and k >= 1:
                out = out + 4.0 * j * k * np.real(c * zeta ** (j - 1) * np.conj(zeta) ** (k - 1))
        return out

    def _eta(self, r):
        if self.cutoff is None:
            return np.ones_like(r), np.zeros_like(r), np.zeros_like(r)
        r1, r2 = self.cutoff
        t = np.clip((r - r1) / (r2 - r1), 0.0, 1.0)
        s = t ** 5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))))
        ds = (630.0 * t ** 4 * (1.0 - t) ** 4) / (r2 - r1)
        d2s = (2520.0 * t ** 3 * (1.0 - t) ** 3 * (1.0 - 2.0 * t)) / (r2 - r1) ** 2
        inside = (r > r1) & (r < r2)
        return 1.0 - s, np.where(inside, -ds, 0.0), np.where(inside, -d2s, 0.0)

    def value(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        eta, _, _ = self._eta(np.abs(zeta))
        return eta * self.core_value(zeta)

    def laplacian(self, zeta):
        """Flat Laplacian of the (cut off) field: eta lap F + 2 grad eta .
        grad F + F lap eta, all in closed form."""
        zeta = np.asarray(zeta, dtype=complex)
        r = np.abs(zeta)
        eta, deta, d2eta = self._eta(r)
        lapF = self.core_laplacian(zeta)
        if self.cutoff is None:
            return lapF
        F = self.core_value(zeta)
        # radial derivative of F: 2 Re(e^{i th} dF)
        dF = 2.0 * np.real((zeta / r) * self.core_dz(zeta))
        lap_eta = d2eta + deta / r
        return eta * lapF + 2.0 * deta * dF + F * lap_eta


def ibp_closed_form(u: EndLocalField, v: EndLocalField) -> float:
    """2 pi (alpha_u v(0) - u(0) beta_v) - 2 pi Re(a_u dz_v(0) -
    dz_u(0) b_v)."""
    term1 = u.alpha * v.smooth_at_zero() - u.smooth_at_zero() * v.alpha
    term2 = np.real(u.a * v.dz_smooth_at_zero() - u.dz_smooth_at_zero() * v.a)
    return float(2.0 * np.pi * (term1 - term2))


def ibp_pairing(sq: SurfaceQuadrature, ch: EndChart, u: EndLocalField,
                v: EndLocalField, n_rad: int = 16, n_ang: int = 128,
                n_rings: int = 40) -> float:
    """Green pairing of the Jacobi operator localized at one end:
    integral of u L v - (L u) v against the surface measure, oriented so
    it reproduces the boundary-limit closed form.  u must be compactly
    supported in the chart."""
    if u.cutoff is None:
        raise ValueError("u must carry a cutoff")
    from .quadrature import _gl_nodes

    r2 = u.cutoff[1]

    def v_potential(zeta):
        z = ch.from_chart(zeta)
        dz = (np.abs(ch.scale) / np.abs(zeta) ** 2) if ch.at_infinity else 1.0 / abs(ch.scale)
        return 2.0 * sq.gd.k_rho(z) * dz ** 2

    def integrand(zeta):
        V = v_potential(zeta)
        Lu = u.laplacian(zeta) - V * u.value(zeta)
        Lv = v.laplacian(zeta) - V * v.value(zeta)
        return u.value(zeta) * Lv - Lu * v.value(zeta)

    # panels: cutoff transition, then geometric rings toward the puncture
    total = 0.0
    breaks = [u.cutoff[1], u.cutoff[0]]
    r = u.cutoff[0]
    for _ in range(n_rings):
        r *= 0.5
        breaks.append(r)
    th = 2.0 * np.pi * np.arange(n_ang) / n_ang
    wth = 2.0 * np.pi / n_ang
    ring_vals = []
    for hi, lo in zip(breaks[:-1], breaks[1:]):
        rr, wr = _gl_nodes(lo, hi, n_rad)
        Z = np.multiply.outer(rr, np.exp(1j * th))
        vals = integrand(Z)
        ring_vals.append(float(np.sum(wr[:, None] * rr[:, None] * vals) * wth))
    total = float(np.sum(ring_vals))
    # geometric tail below the last ring
    if len(ring_vals) >= 2 and abs(ring_vals[-2]) > 0:
        ratio = abs(ring_vals[-1]) / abs(ring_vals[-2])
        if ratio < 0.9:
            total += ring_vals[-1] * ratio / (1.0 - ratio)
    return total


def ibp_residual(sq: SurfaceQuadrature, end_index: int, u: EndLocalField,
                 v: EndLocalField) -> float:
    """|numeric pairing - closed form| at one end."""
    ch = normalize_end_chart(sq.im, end_index)
    return abs(ibp_pairing(sq, ch, u, v) - ibp_closed_form(u, v))


# ---------------------------------------------------------------------------
# end expansion of the curvature boundary terms
# ---------------------------------------------------------------------------


def _field_chart_data(sq: SurfaceQuadrature, fld: VariationField, ch: EndChart, zeta):
    """w, d_zeta w, and second derivatives in the normalized chart."""
    zeta = np.asarray(zeta, dtype=complex)
    z = ch.from_chart(zeta)
    if ch.at_infinity:
        dz = -ch.scale / zeta ** 2
        d2z = 2.0 * ch.scale / zeta ** 3
    else:
        dz = np.full(zeta.shape, 1.0 / ch.scale)
        d2z = np.zeros(zeta.shape)
    im = sq.im
    w = fld.value(sq, z)
    dzw_z = fld.v * im.dz_absX2(z) + fld.dz_blocks(sq, z)
    if fld.bounded is not None:
        dzw_z = dzw_z + np.sum(np.asarray(fld.bounded, float) * sq.gd.dz_normal(z), axis=-1)
    dzz_z = fld.v * im.dzz_absX2(z) + fld.dzz_blocks(sq, z)
    dw = dzw_z * dz
    d2w = dzz_z * dz ** 2 + dzw_z * d2z
    dzbar_dz_w = fld.v * sq.gd.rho(z) * np.abs(dz) ** 2
    return z, w, dw, d2w, dzbar_dz_w


def end_expansion_residual(sq: SurfaceQuadrature, fld: VariationField,
                           end_index: int, eps_list, n_ang: int = 512):
    """Convergence table for the boundary expansion at one end.

    For each eps: the curvature boundary term
        int [Delta_g w (dw/dnu) - 1/2 d/dnu |dw|^2_g] + int 2K dw/dnu
    minus its two leading contributions 2 v^2 (flux of |X|^2) - 8 pi v
    beta; returns (eps array, residuals, fitted decay exponent).
    Requires a field without translation part (the same-v class of the
    expansion lemma); a bounded summand is allowed.
    """
    if fld.translation is not None:
        raise ValueError("end expansion requires a same-v field")
    if fld.bounded is not None:
        raise ValueError("end expansion with a bounded summand is not supported")
    ch = normalize_end_chart(sq.im, end_index)
    beta_i = fld.log_weights(sq.ws.m)[end_index]
    th = 2.0 * np.pi * np.arange(n_ang) / n_ang
    eiθ = np.exp(1j * th)
    wth = 2.0 * np.pi / n_ang
    out = []
    for eps in eps_list:
        zeta = eps * eiθ
        z, w, dw, d2w, dmix = _field_chart_data(sq, fld, ch, zeta)
        rho_z = sq.gd.rho(z)
        dzdzeta = (np.abs(ch.scale) / np.abs(zeta) ** 2) if ch.at_infinity \
            else np.full(zeta.shape, 1.0 / abs(ch.scale))
        rho_c = rho_z * dzdzeta ** 2
        K = sq.gd.K(z)
        # Delta_g w = 4 v exactly for this field class
        lap_g_w = np.full(zeta.shape, 4.0 * fld.v)
        ddr_w = 2.0 * np.real(eiθ * dw)
        # |dw|^2_g = 4 |d_zeta w|^2 / rho_zeta; radial derivative analytic
        q = 4.0 * np.abs(dw) ** 2 / rho_c
        dzeta_q = (4.0 * (d2w * np.conj(dw) + dmix * dw) / rho_c
                   - 4.0 * np.abs(dw) ** 2 * _dzeta_rho(sq, ch, zeta) / rho_c ** 2)
        ddr_q = 2.0 * np.real(eiθ * dzeta_q)
        vals = lap_g_w * (-ddr_w) - 0.5 * (-ddr_q) + 2.0 * K * (-ddr_w)
        lhs = float(np.sum(vals) * wth * eps)
        flux = boundary_flux_absX2(sq.im, ch, eps)
        resid = lhs - (2.0 * fld.v ** 2 * flux - 8.0 * np.pi * fld.v * beta_i)
        out.append(resid)
    eps_arr = np.asarray(list(eps_list), dtype=float)
    res_arr = np.asarray(out)
    mask = np.abs(res_arr) > 1e-13 * max(1.0, float(np.max(np.abs(res_arr))))
    if np.sum(mask) >= 2:
        slope = float(np.polyfit(np.log(eps_arr[mask]), np.log(np.abs(res_arr[mask])), 1)[0])
    else:
        slope = np.inf  # residuals at noise level: decay faster than any rate
    return eps_arr, res_arr, slope


def _dzeta_rho(sq: SurfaceQuadrature, ch: EndChart, zeta):
    """d/dzeta of the chart density rho_zeta = rho_z |dz/dzeta|^2."""
    zeta = np.asarray(zeta, dtype=complex)
    z = ch.from_chart(zeta)
    phi = sq.im.phi(z)
    dphi = sq.im.phi_prime(z)
    dz_rho = 0.5 * np.sum(dphi * np.conj(phi), axis=-1)
    if not ch.at_infinity:
        return dz_rho * (1.0 / ch.scale) / abs(ch.scale) ** 2
    # rho_zeta = rho_z(s/zeta) |s|^2 / |zeta|^4
    dz = -ch.scale / zeta ** 2
    s2 = abs(ch.scale) ** 2
    rho_z = sq.gd.rho(z)
    return (dz_rho * dz) * s2 / (zeta ** 2 * np.conj(zeta) ** 2) \
        + rho_z * s2 * (-2.0 / (zeta ** 3 * np.conj(zeta) ** 2))


# ---------------------------------------------------------------------------
# ramification divisor
# ---------------------------------------------------------------------------


def ramification_divisor(ws: WeierstrassSurface, root_tol: float = 1e-7):
    """Branch points of the Gauss map with orders: the roots of
    a'b - ab' (with multiplicity), plus the deficit of its degree from
    2m - 4 as the order at infinity; the orders always total 2m - 4."""
    W = ws.wronskian().trim(1e-11)
    target = 2 * ws.m - 4
    points: list[tuple[complex | None, int]] = []
    if W.degree >= 1:
        points = [(p, k) for p, k in cluster_roots(poly_roots(W), tol=root_tol)]
    deficit = target - W.degree if not W.is_zero else target
    if deficit > 0:
        points.append((None, deficit))  # None encodes the end at infinity
    total = sum(k for _, k in points)
    if total != target:
        raise SurfaceValidationError("ramification count mismatch",
                                     f"got {total}, expected {target}")
    return points


# ---------------------------------------------------------------------------
# logarithmically growing Jacobi fields
# ---------------------------------------------------------------------------


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic quasi-uniform points on the unit sphere."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    golden = np.pi * (1.0 + np.sqrt(5.0))
    theta = golden * i
    return np.stack([np.sin(phi) * np.cos(theta),
                     np.sin(phi) * np.sin(theta),
                     np.cos(phi)], axis=-1)


def _real_sph_harm(lmax: int, theta, phi):
    """Real spherical harmonics up to degree lmax; returns (values
    [n_basis, npts], degrees [n_basis])."""
    try:
        from scipy.special import sph_harm_y

        def Y(l, m, th, ph):
            return sph_harm_y(l, m, th, ph)
    except ImportError:  # older scipy
        from scipy.special import sph_harm

        def Y(l, m, th, ph):
            return sph_harm(m, l, ph, th)

    vals, degs = [], []
    for l in range(lmax + 1):
        for m in range(0, l + 1):
            y = Y(l, m, theta, phi)
            if m == 0:
                vals.append(np.real(y))
                degs.append(l)
            else:
                vals.append(np.sqrt(2.0) * np.real(y))
                degs.append(l)
                vals.append(np.sqrt(2.0) * np.imag(y))
                degs.append(l)
    return np.asarray(vals), np.asarray(degs)


@dataclass
class LogJacobiSolution:
    alpha: np.ndarray
    beta_recovered: np.ndarray
    pole_coefficients: np.ndarray
    residual: float
    rhs_norm: float
    kernel_component: float
    detected_kernel_dim: int
    harmonic_coeffs: np.ndarray
    evaluate: object  # callable z -> field value

    @property
    def relative_residual(self) -> float:
        return self.residual / max(self.rhs_norm, 1e-300)


def solve_log_jacobi(ws: WeierstrassSurface, alpha, qs: SurfaceQuadrature | None = None,
                     lmax: int = 22, n_nodes: int = 5000,
                     kernel_tol: float = 1e-8,
                     residual_tol: float = 1e-4) -> LogJacobiSolution:
    """Jacobi field with prescribed log weights alpha at the ends.

    alpha must annihilate the normal matrix (sum alpha_i n(p_i) = 0).
    The field is sought as (log blocks carrying alpha) + (harmonic pole
    blocks with unknown complex coefficients) + (smooth spherical-
    harmonic part), solved by least squares on the round-sphere
    collocation residual with the right-hand side projected off the
    sampled bounded-Jacobi-field kernel.
    """
    alpha = np.asarray(alpha, dtype=float)
    gd = qs.gd if qs is not None else GaussData(ws)
    im = qs.im if qs is not None else build_immersion(ws)
    normals = gd.end_normals()
    if np.linalg.norm(normals.T @ alpha) > kernel_tol * np.linalg.norm(alpha):
        raise SurfaceValidationError("alpha not in kernel",
                                     "log weights must annihilate the normal matrix")
    m = ws.m
    p = ws.config.finite_ends

    # collocation nodes in the z chart, away from the ends
    pts3 = _fibonacci_sphere(n_nodes)
    denom = 1.0 - pts3[:, 2]
    good = denom > 1e-9
    z = (pts3[good, 0] + 1j * pts3[good, 1]) / denom[good]
    for q in p:
        z = z[np.abs(z - q) > 1e-4]
    z = z[np.abs(z) < 1e9]

    theta = np.arccos(np.clip((np.abs(z) ** 2 - 1.0) / (np.abs(z) ** 2 + 1.0), -1, 1))
    phi_az = np.mod(np.angle(z), 2.0 * np.pi)
    Yv, degs = _real_sph_harm(lmax, theta, phi_az)
    Vt = gd.v_sphere(z)

    def halfG(zz):
        return 0.5 * np.log1p(np.abs(zz) ** 2)

    # inhomogeneity: the log blocks carrying the target weights
    W_vals = -alpha[0] * halfG(z)
    lapW_scaled = -0.5 * alpha[0] * (-1.0)
    for i in range(1, m):
        W_vals = W_vals + alpha[i] * (np.log(np.abs(z - p[i - 1])) - halfG(z))
        lapW_scaled = lapW_scaled - 0.5 * alpha[i]
    f = -(lapW_scaled - Vt * W_vals)

    # columns: smooth spherical harmonics, then Re/Im pole blocks per end
    cols = [-(-degs[j] * (degs[j] + 1.0) * Yv[j] - Vt * Yv[j]) for j in range(len(degs))]
    pole_funcs = []
    for i in range(m):
        h = z if i == 0 else 1.0 / (z - p[i - 1])
        pole_funcs.append(np.real(h))
        pole_funcs.append(-np.imag(h))  # Re(i c h) pairing
    for h in pole_funcs:
        cols.append(-(0.0 - Vt * h))
    A = np.stack(cols, axis=-1)

    # sampled bounded Jacobi fields: coordinate normals plus the two
    # support functions (of X and of its conjugate surface)
    n_at = gd.normal(z)
    Fz = im.F(z)
    Xv = np.real(Fz) + im.x0
    Xc = np.imag(Fz)
    cand = [n_at[:, 0], n_at[:, 1], n_at[:, 2],
            np.sum(Xv * n_at, axis=-1), np.sum(Xc * n_at, axis=-1)]
    Q, R = np.linalg.qr(np.stack(cand, axis=-1))
    keep = np.abs(np.diag(R)) > 1e-6 * np.abs(R[0, 0])
    Q = Q[:, keep]
    kernel_component = float(np.linalg.norm(Q.T @ f))
    f_proj = f - Q @ (Q.T @ f)

    x, *_ = np.linalg.lstsq(A, f_proj, rcond=None)
    r = A @ x - f_proj
    r = r - Q @ (Q.T @ r)
    residual = float(np.linalg.norm(r))
    rhs_norm = float(np.linalg.norm(f))
    sv = np.linalg.svd(A, compute_uv=False)
    detected = int(np.sum(sv < 1e-10 * sv[0]))

    n_sh = len(degs)
    coeff_sh = x[:n_sh]
    pole = x[n_sh:].reshape(m, 2)
    pole_c = pole[:, 0] + 1j * pole[:, 1]

    def evaluate(zz):
        zz = np.asarray(zz, dtype=complex)
        val = -alpha[0] * halfG(zz)
        for i in range(1, m):
            val = val + alpha[i] * (np.log(np.abs(zz - p[i - 1])) - halfG(zz))
        th = np.arccos(np.clip((np.abs(zz) ** 2 - 1.0) / (np.abs(zz) ** 2 + 1.0), -1, 1))
        ph = np.mod(np.angle(zz), 2.0 * np.pi)
        Yz, _ = _real_sph_harm(lmax, th, ph)
        val = val + np.tensordot(coeff_sh, Yz, axes=(0, 0))
        for i in range(m):
            h = zz if i == 0 else 1.0 / (zz - p[i - 1])
            val = val + np.real(pole_c[i] * h)
        return val

    # recover the log weights from circle averages: the mean of the field
    # on |z - p| = r grows like beta ln r
    beta_rec = np.zeros(m)
    th = 2.0 * np.pi * np.arange(512) / 512
    for i in range(m):
        r1, r2 = 1e-3, 2e-3
        if i == 0:
            c1 = np.mean(evaluate((1.0 / r1) * np.exp(1j * th)))
            c2 = np.mean(evaluate((1.0 / r2) * np.exp(1j * th)))
        else:
            c1 = np.mean(evaluate(p[i - 1] + r1 * np.exp(1j * th)))
            c2 = np.mean(evaluate(p[i - 1] + r2 * np.exp(1j * th)))
        beta_rec[i] = (c2 - c1) / np.log(r2 / r1)

    sol = LogJacobiSolution(alpha, beta_rec, pole_c, residual, rhs_norm,
                            kernel_component, detected, coeff_sh, evaluate)
    if sol.relative_residual > residual_tol:
        raise QuadratureError(
            f"log-Jacobi residual {sol.relative_residual:.2e} above {residual_tol:.0e}; "
            f"singular values range {sv[0]:.2e}..{sv[-1]:.2e}")
    return sol


# ---------------------------------------------------------------------------
# symmetry and family transformations
# ---------------------------------------------------------------------------


def _rotation_about_e3(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def symmetrize_immersion(im: MinimalImmersion, angle: float, s_map) -> tuple[MinimalImmersion, float]:
    """Choose the integration constant so that S X(z) = X(s(z)) for the
    rotation S about the vertical axis; returns the adjusted immersion
    and the constancy defect of the required translation."""
    S = _rotation_about_e3(angle)
    rng = np.random.default_rng(7)
    z = 1.2 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
    z = z[np.all(np.abs(z[:, None] - im.finite_ends[None, :]) > 0.15, axis=1)]
    t = im.X(np.asarray(s_map(z), dtype=complex)) - im.X(z) @ S.T
    defect = float(np.max(np.linalg.norm(t - t.mean(axis=0), axis=1)))
    c, *_ = np.linalg.lstsq(np.eye(3) - S, t.mean(axis=0), rcond=None)
    return MinimalImmersion(im.ws, im.c0, im.E, im.primitives, x0=im.x0 + c), defect


def symmetry_residual(im: MinimalImmersion, angle: float, s_map,
                      gd: GaussData | None = None,
                      end_cycle: list[int] | None = None,
                      n_probes: int = 200, seed: int = 3):
    """Largest defect of S Psi(z) = Psi(s(z)) over a probe set, plus the
    normal alternation defect max |n(p_{i+1}) + S n(p_i)| when an end
    cycle is supplied."""
    S = _rotation_about_e3(angle)
    gd = gd or GaussData(im.ws)
    rng = np.random.default_rng(seed)
    z = 1.5 * (rng.standard_normal(n_probes) + 1j * rng.standard_normal(n_probes))
    z = z[np.all(np.abs(z[:, None] - im.finite_ends[None, :]) > 0.1, axis=1)]
    z = z[np.abs(z) > 0.1]

    def psi(zz):
        X = im.X(zz)
        return X / np.sum(X * X, axis=-1, keepdims=True)

    r1 = float(np.max(np.linalg.norm(psi(z) @ S.T - psi(np.asarray(s_map(z), complex)), axis=-1)))
    r2 = 0.0
    if end_cycle is not None:
        normals = gd.end_normals()
        for a, b in zip(end_cycle, end_cycle[1:] + end_cycle[:1]):
            r2 = max(r2, float(np.linalg.norm(normals[b] + S @ normals[a])))
    return r1, r2


def rotate_surface(ws: WeierstrassSurface, alpha: complex, beta: complex) -> WeierstrassSurface:
    """Rigid rotation of the surface through the unitary action on the
    polynomial pair: (a, b) -> (alpha a + beta b, -conj(beta) a +
    conj(alpha) b), |alpha|^2 + |beta|^2 = 1."""
    norm = np.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
    alpha, beta = alpha / norm, beta / norm
    a_hat = alpha * ws.a_hat + beta * ws.b_hat
    b_hat = -np.conj(beta) * ws.a_hat + np.conj(alpha) * ws.b_hat
    return assemble_weierstrass(ws.config, a_hat, b_hat)


def pfaffian_zero_config(m: int, seed: int = 0, max_tries: int = 200) -> EndConfiguration:
    """A configuration of m ends (m even) on which the end matrix is
    singular: fix all but the last finite end at deterministic random
    positions and solve for the last one by Newton iteration on the
    Pfaffian (holomorphic in each end position)."""
    if m % 2 != 0:
        raise SurfaceValidationError("Pfaffian undefined", "m must be even")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        base = [0.0, 1.0] + [complex(rng.standard_normal() * 1.5,
                                     rng.standard_normal() * 1.5)
                             for _ in range(m - 4)]
        t = complex(rng.standard_normal(), rng.standard_normal())
        ok = False
        for _ in range(60):
            try:
                cfg = EndConfiguration(base + [t])
            except SurfaceValidationError:
                break
            pf = pfaffian(build_end_matrix(cfg))
            if abs(pf) < 1e-12:
                ok = True
                break
            h = 1e-7 * max(1.0, abs(t))
            pf2 = pfaffian(build_end_matrix(EndConfiguration(base + [t + h])))
            dpf = (pf2 - pf) / h
            if abs(dpf) < 1e-14:
                break
            t = t - pf / dpf
        if not ok:
            continue
        try:
            cfg = EndConfiguration(base + [t])
        except SurfaceValidationError:
            continue
        if len(kernel_basis(build_end_matrix(cfg))) >= 2:
            return cfg
    raise SurfaceValidationError("sampling failed", "no singular configuration found")
