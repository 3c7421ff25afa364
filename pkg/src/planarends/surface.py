"""Closed-form minimal immersion, Gauss map, metric and curvature,
end-chart normalization, inversion, and the bounded-Jacobi-field map.

All geometric quantities reduce to the polynomial pair (a, b): with
W = a'b - ab' and N = |a|^2 + |b|^2,

    area density   rho = (N/2)^2 / |phi1|^4
    Gauss curvature  K = -16 |W|^2 |phi1|^4 / N^4
    K * rho            = -4 |W|^2 / N^2          (smooth across the ends)
    d_z n              = 2 W conj(Pnum) / N^2

where Pnum = ((b^2-a^2)/2, i(b^2+a^2)/2, ab).  These forms have no
spurious poles, which keeps evaluation stable near the ends and near
poles of g = a/b.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    Polynomial,
    RationalFunction,
    partial_fractions,
    rational_antiderivative,
)
from .ends import SurfaceValidationError, WeierstrassSurface

__all__ = [
    "MinimalImmersion",
    "GaussData",
    "InvertedSurface",
    "EndChart",
    "phi_components",
    "build_immersion",
    "immersion_point",
    "gauss_map",
    "metric_and_curvature",
    "normalize_end_chart",
    "invert",
    "montiel_ros_Y",
]


def stereographic_point(w):
    """Inverse stereographic projection from the north pole:
    w -> (w + conj w, -i(w - conj w), -1 + |w|^2) / (1 + |w|^2)."""
    w = np.asarray(w, dtype=complex)
    d = 1.0 + np.abs(w) ** 2
    return np.stack([2.0 * w.real / d, 2.0 * w.imag / d, (np.abs(w) ** 2 - 1.0) / d], axis=-1)


def phi_components(ws: WeierstrassSurface) -> tuple[RationalFunction, RationalFunction, RationalFunction]:
    """The holomorphic triple ((b^2-a^2)/2, i(b^2+a^2)/2, ab) / phi1^2."""
    phi1sq = ws.phi1 * ws.phi1
    poles = [(complex(p), 2) for p in ws.config.finite_ends]
    return tuple(
        RationalFunction(num, phi1sq, poles=list(poles))
        for num in ws.phi_component_numerators()
    )


@dataclass
class EndChart:
    """Normalized conformal coordinate at one end: zeta = s*(z - p) at a
    finite end, zeta = s/z at infinity; the pole coefficient of d(X)/d(zeta)
    satisfies |a|^2 = 2 and a.a = 0."""

    index: int
    at_infinity: bool
    p: complex
    scale: complex
    pole_vector: np.ndarray  # shape (3,), isotropic, |a|^2 = 2

    def to_chart(self, z):
        z = np.asarray(z, dtype=complex)
        return self.scale / z if self.at_infinity else self.scale * (z - self.p)

    def from_chart(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        return self.scale / zeta if self.at_infinity else self.p + zeta / self.scale

    def normal(self) -> np.ndarray:
        """Unit normal at the end from the pole vector, -0.5i (a x conj a);
        the sign matches the stereographic Gauss map convention."""
        a = self.pole_vector
        return np.real(-0.5j * np.cross(a, np.conj(a)))


@dataclass
class MinimalImmersion:
    """X(z) = Re(F(z)) + x0, with the primitive stored both as explicit
    partial fractions (c0 z - sum_i E_i/(z - p_i)) and as rational
    functions produced by the closed-form antiderivative."""

    ws: WeierstrassSurface
    c0: np.ndarray                        # phi at infinity, shape (3,)
    E: np.ndarray                         # order-2 coefficients, shape (m-1, 3)
    primitives: tuple[RationalFunction, RationalFunction, RationalFunction]
    x0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    end_proximity: float = 1e-9

    @property
    def m(self) -> int:
        return self.ws.m

    @property
    def finite_ends(self) -> np.ndarray:
        return self.ws.config.finite_ends

    # -- evaluation ---------------------------------------------------

    def F(self, z):
        """Complex primitive, shape (..., 3); stable for large |z|."""
        z = np.asarray(z, dtype=complex)
        out = np.multiply.outer(z, self.c0)
        for p, e in zip(self.finite_ends, self.E):
            out = out - np.multiply.outer(1.0 / (z - p), e)
        return out

    def phi(self, z):
        """The holomorphic derivative triple, F' = phi."""
        z = np.asarray(z, dtype=complex)
        out = np.multiply.outer(np.ones_like(z), self.c0)
        for p, e in zip(self.finite_ends, self.E):
            out = out + np.multiply.outer(1.0 / (z - p) ** 2, e)
        return out

    def phi_prime(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (3,), dtype=complex)
        for p, e in zip(self.finite_ends, self.E):
            out = out + np.multiply.outer(-2.0 / (z - p) ** 3, e)
        return out

    def X(self, z):
        return np.real(self.F(z)) + self.x0

    def abs_X_sq(self, z):
        X = self.X(z)
        return np.sum(X * X, axis=-1)

    def dz_absX2(self, z):
        """d/dz |X|^2 = X . phi (Wirtinger derivative of a real function)."""
        return np.sum(self.X(z) * self.phi(z), axis=-1)

    def dzz_absX2(self, z):
        """d^2/dz^2 |X|^2 = X . phi' (uses phi.phi = 0)."""
        return np.sum(self.X(z) * self.phi_prime(z), axis=-1)

    def _check_off_ends(self, z):
        z = np.asarray(z, dtype=complex)
        for p in self.finite_ends:
            if np.any(np.abs(z - p) < self.end_proximity):
                raise SurfaceValidationError("evaluation at an end")

    def pole_vector_raw(self, index: int) -> np.ndarray:
        """Coefficient v_i with phi = -v_i/(z-p_i)^2 + holomorphic
        (phi bounded with limit v_1 at infinity for index 0)."""
        if index == 0:
            return self.c0.copy()
        return -self.E[index - 1]


def build_immersion(ws: WeierstrassSurface, x0=None) -> MinimalImmersion:
    comps = phi_components(ws)
    prims = []
    c0 = np.zeros(3, dtype=complex)
    E = np.zeros((ws.m - 1, 3), dtype=complex)
    for k, comp in enumerate(comps):
        pf = partial_fractions(comp)
        prims.append(rational_antiderivative(pf))
        if not pf.poly_part.is_zero:
            if pf.poly_part.degree > 0:
                raise SurfaceValidationError("invalid data", "phi grows at infinity")
            c0[k] = pf.poly_part.coeffs[0]
        for i, p in enumerate(ws.config.finite_ends):
            coeffs = pf.principal[complex(p)]
            E[i, k] = coeffs[1] if len(coeffs) > 1 else 0.0
    im = MinimalImmersion(ws, c0, E, tuple(prims),
                          x0=np.zeros(3) if x0 is None else np.asarray(x0, float))
    # inversion-center guard: |X| must stay away from zero
    grid = _validation_grid(ws)
    mn = float(np.min(np.sqrt(im.abs_X_sq(grid))))
    if mn <= 1e-6:
        warnings.warn(f"min |X| = {mn:.2e} on the validation grid; "
                      "inversion may be ill-conditioned")
    return im


def _validation_grid(ws: WeierstrassSurface, n: int = 40) -> np.ndarray:
    """Deterministic probe grid covering both charts, away from the ends."""
    rng = np.random.default_rng(12345)
    pts = []
    p = ws.config.finite_ends
    span = 1.0 + float(np.max(np.abs(p)))
    for _ in range(n):
        z = span * (rng.standard_normal() + 1j * rng.standard_normal())
        if np.all(np.abs(z - p) > 5e-2) and abs(z) > 5e-2:
            pts.append(z)
    for r in (2.0 * span, 8.0 * span):
        pts.extend(r * np.exp(2j * np.pi * np.arange(8) / 8.0))
    return np.asarray(pts, dtype=complex)


def immersion_point(im: MinimalImmersion, z: complex) -> np.ndarray:
    im._check_off_ends(z)
    return im.X(z)


class GaussData:
    """Gauss map data through g = a/b.

    Evaluation uses the homogeneous pair (a(z), b(z)), so poles of g need
    no special casing, and switches to reversed-coefficient polynomials
    beyond |z| = 1e3 for the chart at infinity.  The Wronskian is trimmed
    of its numerically-zero top coefficients (they vanish identically for
    valid data but would otherwise pollute large-|z| evaluation).
    """

    BIG = 1e3

    def __init__(self, ws: WeierstrassSurface):
        self.ws = ws
        deg = ws.m - 1
        self.a, self.b, self.phi1 = ws.a, ws.b, ws.phi1
        self.W = ws.wronskian().trim(1e-12)
        self.a_rev = self.a.reversed(deg)
        self.b_rev = self.b.reversed(deg)
        self.phi1_rev = self.phi1.reversed(deg)
        self.W_rev = self.W.reversed(2 * ws.m - 4)
        self.numerators = ws.phi_component_numerators()
        phi1sq = self.phi1 * self.phi1
        self.g = RationalFunction(self.a, self.b)
        self.f = RationalFunction(self.b * self.b, phi1sq,
                                  poles=[(complex(p), 2) for p in ws.config.finite_ends])

    def _split(self, z):
        z = np.asarray(z, dtype=complex)
        big = np.abs(z) > self.BIG
        zsafe = np.where(big, 1.0, z)
        winv = np.where(big, 1.0 / np.where(big, z, 1.0), 0.0)
        return z, big, zsafe, winv

    def _ab_homogeneous(self, z):
        """(a, b) up to a common nonzero factor, stable in both charts."""
        z, big, zsafe, winv = self._split(z)
        av = np.where(big, self.a_rev(winv), self.a(zsafe))
        bv = np.where(big, self.b_rev(winv), self.b(zsafe))
        return av, bv

    def normal(self, z) -> np.ndarray:
        av, bv = self._ab_homogeneous(z)
        n2 = np.abs(av) ** 2 + np.abs(bv) ** 2
        w = av * np.conj(bv)
        return np.stack([2 * w.real / n2, 2 * w.imag / n2,
                         (np.abs(av) ** 2 - np.abs(bv) ** 2) / n2], axis=-1)

    def rho(self, z):
        """Area density in the z chart, = half |phi|^2."""
        z = np.asarray(z, dtype=complex)
        N = np.abs(self.a(z)) ** 2 + np.abs(self.b(z)) ** 2
        return 0.25 * N ** 2 / np.abs(self.phi1(z)) ** 4

    def rho_w(self, w):
        """Area density in the chart at infinity (z = 1/w)."""
        w = np.asarray(w, dtype=complex)
        N = np.abs(self.a_rev(w)) ** 2 + np.abs(self.b_rev(w)) ** 2
        return 0.25 * N ** 2 / (np.abs(self.phi1_rev(w)) ** 4 * np.abs(w) ** 4)

    def K(self, z):
        """Gauss curvature, -16|W|^2 |phi1|^4 / (|a|^2+|b|^2)^4."""
        z, big, zsafe, winv = self._split(z)
        Nz = np.abs(self.a(zsafe)) ** 2 + np.abs(self.b(zsafe)) ** 2
        Kz = -16.0 * np.abs(self.W(zsafe)) ** 2 * np.abs(self.phi1(zsafe)) ** 4 / Nz ** 4
        if not np.any(big):
            return Kz
        Nw = np.abs(self.a_rev(winv)) ** 2 + np.abs(self.b_rev(winv)) ** 2
        Kw = (-16.0 * np.abs(self.W_rev(winv)) ** 2 * np.abs(self.phi1_rev(winv)) ** 4
              * np.abs(winv) ** 4 / Nw ** 4)
        return np.where(big, Kw, Kz)

    def k_rho(self, z):
        """K * rho = -4|W|^2/N^2, real-analytic across the ends."""
        z, big, zsafe, winv = self._split(z)
        Nz = np.abs(self.a(zsafe)) ** 2 + np.abs(self.b(zsafe)) ** 2
        vz = -4.0 * np.abs(self.W(zsafe)) ** 2 / Nz ** 2
        if not np.any(big):
            return vz
        Nw = np.abs(self.a_rev(winv)) ** 2 + np.abs(self.b_rev(winv)) ** 2
        vw = -4.0 * np.abs(self.W_rev(winv)) ** 2 * np.abs(winv) ** 4 / Nw ** 2
        return np.where(big, vw, vz)

    def dz_normal(self, z) -> np.ndarray:
        """d_z n = 2 W(z) conj(Pnum(z)) / N^2, Pnum the phi numerators."""
        z = np.asarray(z, dtype=complex)
        n1, n2, n3 = self.numerators
        N = np.abs(self.a(z)) ** 2 + np.abs(self.b(z)) ** 2
        Wv = self.W(z)
        P = np.stack([np.conj(n1(z)), np.conj(n2(z)), np.conj(n3(z))], axis=-1)
        return 2.0 * P * (Wv / N ** 2)[..., None]

    def abs_dz_normal_sq(self, z):
        z = np.asarray(z, dtype=complex)
        N = np.abs(self.a(z)) ** 2 + np.abs(self.b(z)) ** 2
        return 2.0 * np.abs(self.W(z)) ** 2 / N ** 2

    def v_sphere(self, z):
        """Round-sphere Jacobi potential: 2 K rho / (4/(1+|z|^2)^2) =
        -2 (1+|z|^2)^2 |W|^2 / N^2; smooth and bounded on the sphere."""
        z, big, zsafe, winv = self._split(z)
        Nz = np.abs(self.a(zsafe)) ** 2 + np.abs(self.b(zsafe)) ** 2
        vz = -2.0 * (1.0 + np.abs(zsafe) ** 2) ** 2 * np.abs(self.W(zsafe)) ** 2 / Nz ** 2
        if not np.any(big):
            return vz
        Nw = np.abs(self.a_rev(winv)) ** 2 + np.abs(self.b_rev(winv)) ** 2
        vw = (-2.0 * (1.0 + np.abs(winv) ** 2) ** 2
              * np.abs(self.W_rev(winv)) ** 2 / Nw ** 2)
        return np.where(big, vw, vz)

    def end_normals(self) -> np.ndarray:
        """Unit normals at the ends, row 0 the end at infinity."""
        lead = self.ws.a_hat[0] / self.ws.b_hat[0]
        rows = [stereographic_point(lead)]
        for p in self.ws.config.finite_ends:
            rows.append(self.normal(np.asarray(p, dtype=complex)))
        return np.asarray(rows, dtype=float)


def gauss_data(ws: WeierstrassSurface) -> GaussData:
    return GaussData(ws)


def gauss_map(gd: GaussData, z) -> np.ndarray:
    return gd.normal(z)


def metric_and_curvature(gd: GaussData, z, end_proximity: float = 1e-9):
    z = np.asarray(z, dtype=complex)
    for p in gd.ws.config.finite_ends:
        if np.any(np.abs(z - p) < end_proximity):
            raise SurfaceValidationError("evaluation at an end")
    return gd.rho(z), gd.K(z)


def normalize_end_chart(im: MinimalImmersion, index: int) -> EndChart:
    """Chart scale making the end expansion X = Re(a/zeta) + O(1) hold
    with an isotropic pole vector of squared norm two, so that
    |X|^2 = |zeta|^-2 (1 + O(zeta)) and the boundary flux of |X|^2 obeys
    the 8 pi/eps^2 law.

    index 0 is the end at infinity (coordinate s/z); index i >= 1 the
    i-th finite end (coordinate s*(z - p_i)).
    """
    v = im.pole_vector_raw(index)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise SurfaceValidationError("non-planar end", "vanishing pole coefficient")
    iso = abs(np.sum(v * v)) / (nv ** 2)
    if iso > 1e-8:
        raise SurfaceValidationError("non-planar end", "pole coefficient not isotropic")
    s = np.sqrt(2.0) / nv
    a = v * s
    if index == 0:
        return EndChart(0, True, complex(np.inf), s, a)
    return EndChart(index, False, complex(im.finite_ends[index - 1]), s, a)


@dataclass
class InvertedSurface:
    """Psi = X/|X|^2; extends by zero across the ends."""

    immersion: MinimalImmersion

    def psi(self, z):
        X = self.immersion.X(z)
        n2 = np.sum(X * X, axis=-1, keepdims=True)
        return X / n2

    def psi_at_ends(self) -> np.ndarray:
        return np.zeros((self.immersion.m, 3))

    def rho_hat(self, z, gd: GaussData):
        return gd.rho(z) / im_abs_sq(self.immersion, z) ** 2


def im_abs_sq(im: MinimalImmersion, z):
    return im.abs_X_sq(z)


def invert(im: MinimalImmersion) -> InvertedSurface:
    grid = _validation_grid(im.ws)
    mn = float(np.min(np.sqrt(im.abs_X_sq(grid))))
    if mn <= 1e-6:
        raise SurfaceValidationError("inversion center on surface")
    return InvertedSurface(im)


def montiel_ros_Y(gd: GaussData, a_vec, z, ram_tol: float = 1e-12) -> np.ndarray:
    """Bounded-Jacobi-field recipe Y(u) = u n + (d_zbar u d_z n +
    d_z u d_zbar n)/|d_z n|^2 for u = a.n; undefined at ramification
    points of the Gauss map."""
    a_vec = np.asarray(a_vec, dtype=float)
    z = np.asarray(z, dtype=complex)
    dn = gd.dz_normal(z)
    dn2 = gd.abs_dz_normal_sq(z)
    if np.any(dn2 < ram_tol):
        raise SurfaceValidationError("ramification point",
                                     "Gauss map derivative vanishes at a probe")
    n = gd.normal(z)
    u = np.sum(a_vec * n, axis=-1)
    du = np.sum(a_vec * dn, axis=-1)  # d_z u
    tangential = 2.0 * np.real(np.conj(du)[..., None] * dn) / dn2[..., None]
    return u[..., None] * n + tangential
