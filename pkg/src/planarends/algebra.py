"""Exact complex polynomial and rational-function arithmetic.

Coefficients are stored in ascending degree order.  Everything here is
plain numpy; degrees stay small (<= ~40), so companion-matrix root
finding and Sylvester resultants are adequate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Polynomial",
    "RationalFunction",
    "PartialFractionForm",
    "AlgebraError",
    "poly_eval_and_derivative",
    "poly_roots",
    "poly_coprime",
    "partial_fractions",
    "rational_antiderivative",
]


class AlgebraError(ValueError):
    pass


def _as_coeffs(c) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(c, dtype=complex))
    if arr.ndim != 1:
        raise AlgebraError("coefficients must be one-dimensional")
    return arr


def _trim_exact(arr: np.ndarray) -> np.ndarray:
    nz = np.nonzero(arr)[0]
    if len(nz) == 0:
        return np.zeros(0, dtype=complex)
    return arr[: nz[-1] + 1]


@dataclass(frozen=True)
class Polynomial:
    """Complex polynomial, coefficients ascending.  Zero polynomial has
    empty coefficient array and degree -1."""

    coeffs: np.ndarray

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", _trim_exact(_as_coeffs(coeffs)))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return len(self.coeffs) == 0

    @property
    def leading(self) -> complex:
        if self.is_zero:
            return 0.0 + 0.0j
        return complex(self.coeffs[-1])

    def coeff_norm(self) -> float:
        if self.is_zero:
            return 0.0
        return float(np.linalg.norm(self.coeffs))

    # -- arithmetic -------------------------------------------------

    def __add__(self, other: "Polynomial") -> "Polynomial":
        a, b = self.coeffs, other.coeffs
        n = max(len(a), len(b))
        out = np.zeros(n, dtype=complex)
        out[: len(a)] += a
        out[: len(b)] += b
        return Polynomial(out)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (other * (-1.0))

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            if self.is_zero or other.is_zero:
                return Polynomial([])
            return Polynomial(np.convolve(self.coeffs, other.coeffs))
        return Polynomial(self.coeffs * complex(other))

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise AlgebraError("negative polynomial power")
        out = Polynomial([1.0])
        for _ in range(n):
            out = out * self
        return out

    def derivative(self) -> "Polynomial":
        if self.degree < 1:
            return Polynomial([])
        k = np.arange(1, len(self.coeffs))
        return Polynomial(self.coeffs[1:] * k)

    def antiderivative(self) -> "Polynomial":
        if self.is_zero:
            return Polynomial([])
        k = np.arange(1, len(self.coeffs) + 1)
        return Polynomial(np.concatenate([[0.0], self.coeffs / k]))

    def __call__(self, z):
        """Horner evaluation; accepts scalars or arrays."""
        z = np.asarray(z, dtype=complex)
        if self.is_zero:
            return np.zeros_like(z)
        acc = np.full_like(z, self.coeffs[-1])
        for c in self.coeffs[-2::-1]:
            acc = acc * z + c
        return acc if acc.shape else complex(acc)

    def reversed(self, degree: int | None = None) -> "Polynomial":
        """z^n p(1/z) with n = degree (defaults to deg p); used for the
        chart at infinity."""
        n = self.degree if degree is None else degree
        if n < self.degree:
            raise AlgebraError("reversal degree below polynomial degree")
        out = np.zeros(n + 1, dtype=complex)
        if not self.is_zero:
            out[n - self.degree :] = self.coeffs[::-1]
        return Polynomial(out)

    def conj(self) -> "Polynomial":
        return Polynomial(np.conj(self.coeffs))

    def trim(self, rel_tol: float = 1e-12) -> "Polynomial":
        """Drop leading coefficients below rel_tol * max |coeff|."""
        if self.is_zero:
            return self
        scale = np.max(np.abs(self.coeffs))
        keep = np.nonzero(np.abs(self.coeffs) > rel_tol * scale)[0]
        if len(keep) == 0:
            return Polynomial([])
        return Polynomial(self.coeffs[: keep[-1] + 1])

    def divmod(self, other: "Polynomial") -> tuple["Polynomial", "Polynomial"]:
        if other.is_zero:
            raise AlgebraError("division by zero polynomial")
        q, r = np.polydiv(self.coeffs[::-1] if not self.is_zero else [0.0],
                          other.coeffs[::-1])
        return Polynomial(np.atleast_1d(q)[::-1]), Polynomial(np.atleast_1d(r)[::-1])

    @staticmethod
    def from_roots(roots, leading: complex = 1.0) -> "Polynomial":
        p = Polynomial([leading])
        for r in roots:
            p = p * Polynomial([-r, 1.0])
        return p

    @staticmethod
    def one() -> "Polynomial":
        return Polynomial([1.0])


def poly_eval_and_derivative(p: Polynomial, z: complex, order: int = 0):
    """Values (p(z), p'(z), ..., p^(order)(z)) by repeated Horner."""
    if order < 0:
        raise AlgebraError("order must be >= 0")
    out = []
    q = p
    for _ in range(order + 1):
        out.append(complex(q(z)) if np.isscalar(z) or np.asarray(z).shape == () else q(z))
        q = q.derivative()
    return tuple(out)


def poly_roots(p: Polynomial) -> np.ndarray:
    """All roots with multiplicity via the companion matrix, followed by
    one Newton polish pass (skipped near multiple roots where p' ~ 0)."""
    if p.degree < 1:
        raise AlgebraError("no roots: degree < 1")
    r = np.roots(p.coeffs[::-1])
    dp = p.derivative()
    pv = p(r)
    dv = dp(r)
    scale = p.coeff_norm()
    safe = np.abs(dv) > 1e-8 * max(scale, 1e-300)
    step = np.zeros_like(r)
    step[safe] = pv[safe] / dv[safe]
    polished = r - step
    # keep the polish only where it actually reduced |p|
    better = np.abs(p(polished)) <= np.abs(pv)
    return np.where(better, polished, r)


def cluster_roots(roots: np.ndarray, tol: float = 1e-7) -> list[tuple[complex, int]]:
    """Group numerically coincident roots into (location, multiplicity)."""
    remaining = list(roots)
    clusters: list[tuple[complex, int]] = []
    while remaining:
        z0 = remaining.pop(0)
        group = [z0]
        rest = []
        for z in remaining:
            if abs(z - z0) <= tol * max(1.0, abs(z0)):
                group.append(z)
            else:
                rest.append(z)
        remaining = rest
        clusters.append((complex(np.mean(group)), len(group)))
    return clusters


def _sylvester(p: Polynomial, q: Polynomial) -> np.ndarray:
    m, n = p.degree, q.degree
    S = np.zeros((m + n, m + n), dtype=complex)
    pc = p.coeffs[::-1]  # descending
    qc = q.coeffs[::-1]
    for i in range(n):
        S[i, i : i + m + 1] = pc
    for i in range(m):
        S[n + i, i : i + n + 1] = qc
    return S


def resultant(p: Polynomial, q: Polynomial) -> complex:
    if p.degree < 1 and q.degree < 1:
        return 1.0 + 0.0j
    if p.degree < 1:
        return complex(p.leading ** q.degree)
    if q.degree < 1:
        return complex(q.leading ** p.degree)
    return complex(np.linalg.det(_sylvester(p, q)))


def poly_coprime(p: Polynomial, q: Polynomial, rel_tol: float = 1e-9) -> bool:
    """True iff |Res(p, q)| exceeds rel_tol scaled by coefficient norms.

    The scale ||p||^deg(q) ||q||^deg(p) matches the resultant's natural
    homogeneity, so the test is invariant under rescaling p or q.
    """
    if p.is_zero or q.is_zero:
        raise AlgebraError("coprimality undefined for the zero polynomial")
    scale = p.coeff_norm() ** q.degree * q.coeff_norm() ** p.degree
    if scale == 0.0:
        raise AlgebraError("degenerate coefficient scale")
    return abs(resultant(p, q)) > rel_tol * scale


@dataclass
class RationalFunction:
    """num/den with a cached pole list (denominator roots, clustered)."""

    num: Polynomial
    den: Polynomial
    poles: list[tuple[complex, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.den.is_zero:
            raise AlgebraError("denominator identically zero")
        if not self.poles and self.den.degree >= 1:
            self.poles = cluster_roots(poly_roots(self.den))

    def __call__(self, z):
        return self.num(z) / self.den(z)

    def derivative(self) -> "RationalFunction":
        n, d = self.num, self.den
        return RationalFunction(n.derivative() * d - n * d.derivative(), d * d)

    def scale(self, c: complex) -> "RationalFunction":
        return RationalFunction(self.num * c, self.den, poles=list(self.poles))


@dataclass
class PartialFractionForm:
    """polynomial part + principal parts; principal[p][j] is the
    coefficient of (z - p)^-(j+1)."""

    poly_part: Polynomial
    principal: dict[complex, np.ndarray]

    def residues(self) -> dict[complex, complex]:
        return {p: complex(c[0]) for p, c in self.principal.items()}

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = self.poly_part(z).astype(complex) if not self.poly_part.is_zero else np.zeros_like(z)
        out = out + 0j
        for p, cs in self.principal.items():
            w = 1.0 / (z - p)
            acc = np.zeros_like(z)
            for c in cs[::-1]:
                acc = (acc + c) * w
            out = out + acc
        return out


def _taylor_at(p: Polynomial, z0: complex, n: int) -> np.ndarray:
    """First n Taylor coefficients of p at z0 (exact synthetic division)."""
    coeffs = p.coeffs.copy() if not p.is_zero else np.zeros(1, dtype=complex)
    out = np.zeros(n, dtype=complex)
    work = coeffs[::-1].copy()  # descending
    for j in range(n):
        if len(work) == 0:
            break
        # synthetic division by (z - z0); remainder = value = Taylor coeff j
        rem = work[0]
        for i in range(1, len(work)):
            rem = rem * z0 + work[i]
        out[j] = rem
        # quotient coefficients
        q = np.zeros(max(len(work) - 1, 0), dtype=complex)
        acc = 0.0 + 0.0j
        for i in range(len(work) - 1):
            acc = acc * z0 + work[i]
            q[i] = acc
        work = q
    return out


def _series_div(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Leading n coefficients of the power series a(t)/b(t), b[0] != 0."""
    if abs(b[0]) == 0.0:
        raise AlgebraError("series division by vanishing leading term")
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        s = a[k] if k < len(a) else 0.0
        for j in range(1, k + 1):
            if j < len(b):
                s -= b[j] * out[k - j]
        out[k] = s / b[0]
    return out


def partial_fractions(r: RationalFunction, pole_sep_tol: float = 1e-7) -> PartialFractionForm:
    """Exact principal parts at every denominator root cluster.

    Raises on pole clusters closer than pole_sep_tol (relative): the
    series division becomes meaningless there.
    """
    poles = r.poles
    for i, (p, _) in enumerate(poles):
        for q, _ in poles[i + 1 :]:
            if abs(p - q) < pole_sep_tol * max(1.0, abs(p), abs(q)):
                raise AlgebraError("ill-conditioned poles")
    poly_part, num_rem = r.num.divmod(r.den)
    principal: dict[complex, np.ndarray] = {}
    for p, k in poles:
        dn = _taylor_at(r.den, p, k + r.den.degree + 1)
        # denominator = (z-p)^k * q(z); q-series = den-series shifted by k
        q_series = dn[k:]
        nn = _taylor_at(num_rem, p, k) if not num_rem.is_zero else np.zeros(k, dtype=complex)
        t = _series_div(nn, q_series, k)
        # h(z) = num/q = t0 + t1 (z-p) + ...; (z-p)^-k h gives
        # order-k coefficient t0, ..., order-1 coefficient t_{k-1}
        coeffs = t[::-1].copy()  # coeffs[j] belongs to order j+1
        principal[complex(p)] = coeffs
    return PartialFractionForm(poly_part, principal)


def rational_antiderivative(pf: PartialFractionForm, residue_tol: float = 1e-9) -> RationalFunction:
    """Closed-form primitive of a residue-free partial-fraction form.

    Raises "logarithmic primitive required" when any residue exceeds
    residue_tol relative to the largest principal-part coefficient.
    """
    scale = max(
        [np.max(np.abs(c)) for c in pf.principal.values()] + [pf.poly_part.coeff_norm(), 1e-30]
    )
    for p, c in pf.principal.items():
        if abs(c[0]) > residue_tol * scale:
            raise AlgebraError("logarithmic primitive required")
    den = Polynomial.one()
    for p, c in pf.principal.items():
        order = len(c)
        if order >= 2:
            den = den * Polynomial.from_roots([p] * (order - 1))
    num = pf.poly_part.antiderivative() * den
    for p, c in pf.principal.items():
        order = len(c)
        # integral of c_j (z-p)^-(j+1) for j >= 1 is -c_j/j (z-p)^-j
        cof, _ = den.divmod(Polynomial.from_roots([p] * (order - 1))) if order >= 2 else (den, None)
        acc = Polynomial([])
        pw = Polynomial.one()
        for j in range(order - 1, 0, -1):
            # term -c[j]/j * (z-p)^{order-1-j} relative to (z-p)^{order-1}
            term = Polynomial.from_roots([p] * (order - 1 - j)) * (-c[j] / j)
            acc = acc + term
        num = num + cof * acc
    return RationalFunction(num, den)
