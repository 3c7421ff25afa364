"""End configurations, the skew end-matrix, kernel machinery, and
assembly of Weierstrass data for minimal spheres with planar ends.

Conventions: the first end sits at infinity; the remaining ends are
finite and pairwise distinct.  Coefficient vectors are indexed so that
entry 0 belongs to the end at infinity (the phi_1 coefficient) and
entry i >= 1 to the i-th finite end.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    AlgebraError,
    Polynomial,
    RationalFunction,
    partial_fractions,
    poly_coprime,
)

__all__ = [
    "EndConfiguration",
    "EndMatrix",
    "WeierstrassSurface",
    "SurfaceValidationError",
    "ObstructionVerdict",
    "phi_basis",
    "build_end_matrix",
    "pfaffian",
    "kernel_basis",
    "assemble_weierstrass",
    "equal_modulus_obstruction",
    "equianharmonic_config",
    "sample_valid_surfaces",
    "find_symmetric_member",
]

EQUIANHARMONIC = 0.5 + 0.5j * np.sqrt(3.0)


class SurfaceValidationError(ValueError):
    """Raised when coefficient data does not define a valid surface."""

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(message or code)


@dataclass(frozen=True)
class EndConfiguration:
    """m ends: one at infinity plus m-1 finite positions."""

    finite_ends: np.ndarray
    min_separation: float = 1e-8

    def __init__(self, finite_ends, min_separation: float = 1e-8):
        arr = np.atleast_1d(np.asarray(finite_ends, dtype=complex))
        object.__setattr__(self, "finite_ends", arr)
        object.__setattr__(self, "min_separation", float(min_separation))
        if len(arr) < 1:
            raise SurfaceValidationError("too few ends", "need at least one finite end")
        for i, j in itertools.combinations(range(len(arr)), 2):
            if abs(arr[i] - arr[j]) <= self.min_separation:
                raise SurfaceValidationError("duplicate ends")

    @property
    def m(self) -> int:
        return len(self.finite_ends) + 1

    def normalized(self) -> "EndConfiguration":
        """Moebius-normalize so the first two finite ends are 0 and 1."""
        p = self.finite_ends
        if len(p) < 2:
            raise SurfaceValidationError("too few ends", "normalization needs two finite ends")
        return EndConfiguration((p - p[0]) / (p[1] - p[0]))


def equianharmonic_config(conjugate: bool = False) -> EndConfiguration:
    """The four-end configuration on which the end-matrix determinant
    vanishes: finite ends 0, 1, t with t^2 - t + 1 = 0."""
    t = np.conj(EQUIANHARMONIC) if conjugate else EQUIANHARMONIC
    return EndConfiguration([0.0, 1.0, t])


def phi_basis(cfg: EndConfiguration) -> list[Polynomial]:
    """Basis [phi_1, ..., phi_m]: phi_1 = prod (z - p_j); phi_i omits the
    factor (z - p_i).  Degrees m-1 and m-2."""
    p = cfg.finite_ends
    full = Polynomial.from_roots(p)
    basis = [full]
    for i in range(len(p)):
        basis.append(Polynomial.from_roots(np.delete(p, i)))
    return basis


@dataclass(frozen=True)
class EndMatrix:
    matrix: np.ndarray
    config: EndConfiguration

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


def build_end_matrix(cfg: EndConfiguration) -> EndMatrix:
    """Entries 1/(p_i - p_j) between finite ends; -1 first row, +1 first
    column, zero diagonal.  Anti-symmetry is exact by mirrored fill."""
    m = cfg.m
    p = cfg.finite_ends
    M = np.zeros((m, m), dtype=complex)
    M[0, 1:] = -1.0
    M[1:, 0] = 1.0
    for i in range(1, m):
        for j in range(i + 1, m):
            v = 1.0 / (p[i - 1] - p[j - 1])
            M[i, j] = v
            M[j, i] = -v
    return EndMatrix(M, cfg)


def _pfaffian_dense(A: np.ndarray) -> complex:
    """Recursive expansion along the first row; fine for m <= ~12."""
    n = A.shape[0]
    if n == 0:
        return 1.0 + 0.0j
    if n == 2:
        return complex(A[0, 1])
    total = 0.0 + 0.0j
    rest = list(range(1, n))
    for k, j in enumerate(rest):
        keep = [i for i in range(1, n) if i != j]
        minor = A[np.ix_(keep, keep)]
        total += (-1.0) ** k * A[0, j] * _pfaffian_dense(minor)
    return total


def pfaffian(M: EndMatrix | np.ndarray) -> complex:
    A = M.matrix if isinstance(M, EndMatrix) else np.asarray(M, dtype=complex)
    n = A.shape[0]
    if n % 2 != 0:
        raise SurfaceValidationError("Pfaffian undefined", "Pfaffian undefined for odd size")
    return _pfaffian_dense(A)


def _svd_kernel(A: np.ndarray, rel_tol: float = 1e-8) -> np.ndarray:
    u, s, vh = np.linalg.svd(A)
    if len(s) == 0 or s[0] == 0.0:
        return np.eye(A.shape[1], dtype=complex)
    keep = s <= rel_tol * s[0]
    return vh[len(s) - int(np.sum(keep)):].conj().T


def kernel_basis(M: EndMatrix, rel_tol: float = 1e-8) -> list[np.ndarray]:
    """Kernel basis of the end matrix.

    Dimension is the SVD numerical nullity (relative threshold).  When
    the dimension is two and the leading (m-2)x(m-2) block is
    well-conditioned, the basis is returned in the block form
    (-A^{-1} C e_l, e_l); otherwise the raw SVD basis is returned.
    """
    A = M.matrix
    m = A.shape[0]
    ker = _svd_kernel(A, rel_tol)
    dim = ker.shape[1]
    if dim == 0:
        return []
    if dim == 2 and m >= 4:
        top = A[: m - 2, : m - 2]
        C = A[: m - 2, m - 2 :]
        if np.linalg.cond(top) < 1e8:
            sol = -np.linalg.solve(top, C)
            vecs = [np.concatenate([sol[:, l], np.eye(2)[l]]) for l in range(2)]
            norm = np.linalg.norm(A) or 1.0
            if all(np.linalg.norm(A @ v) <= 1e-9 * norm * np.linalg.norm(v) for v in vecs):
                return vecs
    return [ker[:, j] for j in range(dim)]


def _planar_condition_residuals(cfg: EndConfiguration, coeffs: np.ndarray,
                                basis: list[Polynomial]) -> np.ndarray:
    """Residuals of the per-end derivative conditions: at each finite end
    q'(p) phi_i(p) - q(p) phi_i'(p), plus the coefficient sum for the end
    at infinity.  All vanish iff the coefficient vector is annihilated by
    the end matrix."""
    p = cfg.finite_ends
    q = Polynomial([])
    for c, b in zip(coeffs, basis):
        q = q + b * c
    dq = q.derivative()
    out = []
    for i, pi in enumerate(p):
        phi_i = basis[i + 1]
        out.append(dq(pi) * phi_i(pi) - q(pi) * phi_i.derivative()(pi))
    out.append(-np.sum(coeffs[1:]))
    return np.asarray(out, dtype=complex)


@dataclass
class WeierstrassSurface:
    """Validated generating data: end positions plus the polynomial pair."""

    config: EndConfiguration
    a_hat: np.ndarray
    b_hat: np.ndarray
    a: Polynomial
    b: Polynomial
    basis: list[Polynomial] = field(repr=False)

    @property
    def m(self) -> int:
        return self.config.m

    @property
    def phi1(self) -> Polynomial:
        return self.basis[0]

    def wronskian(self) -> Polynomial:
        return self.a.derivative() * self.b - self.a * self.b.derivative()

    def phi_component_numerators(self) -> tuple[Polynomial, Polynomial, Polynomial]:
        a2 = self.a * self.a
        b2 = self.b * self.b
        return ((b2 - a2) * 0.5, (b2 + a2) * 0.5j, self.a * self.b)


def _poly_from_coeffs(coeffs: np.ndarray, basis: list[Polynomial]) -> Polynomial:
    q = Polynomial([])
    for c, b in zip(coeffs, basis):
        q = q + b * c
    return q


def assemble_weierstrass(cfg: EndConfiguration, a_hat, b_hat,
                         kernel_tol: float = 1e-10,
                         check_tol: float = 1e-9) -> WeierstrassSurface:
    """Build and validate the polynomial pair from kernel coefficients.

    Checks, in order: kernel membership, nonvanishing at ends and at
    infinity, the per-end derivative conditions, coprimality, and
    residue-freeness of the induced rational triple.
    """
    a_hat = np.asarray(a_hat, dtype=complex)
    b_hat = np.asarray(b_hat, dtype=complex)
    M = build_end_matrix(cfg)
    basis = phi_basis(cfg)
    normM = np.linalg.norm(M.matrix)
    for vec in (a_hat, b_hat):
        if vec.shape != (cfg.m,):
            raise SurfaceValidationError("not in kernel", "coefficient length mismatch")
        if np.linalg.norm(M.matrix @ vec) > kernel_tol * normM * np.linalg.norm(vec):
            raise SurfaceValidationError("not in kernel")
    a = _poly_from_coeffs(a_hat, basis)
    b = _poly_from_coeffs(b_hat, basis)

    scale_a = a.coeff_norm()
    scale_b = b.coeff_norm()
    for q, hat, scale in ((a, a_hat, scale_a), (b, b_hat, scale_b)):
        vals = np.abs(q(cfg.finite_ends))
        if np.any(vals <= check_tol * scale) or abs(hat[0]) <= check_tol * np.linalg.norm(hat):
            raise SurfaceValidationError(
                "end degeneracy: a or b vanishes at an end")
    # derivative conditions, re-verified on the assembled polynomials
    for hat, scale in ((a_hat, scale_a), (b_hat, scale_b)):
        res = _planar_condition_residuals(cfg, hat, basis)
        if np.max(np.abs(res)) > check_tol * max(scale, 1.0):
            raise SurfaceValidationError("not in kernel",
                                         "derivative conditions violated")
    if not poly_coprime(a, b, rel_tol=check_tol):
        raise SurfaceValidationError("common zero of a and b (non-immersed point)")

    ws = WeierstrassSurface(cfg, a_hat, b_hat, a, b, basis)
    phi1sq = ws.phi1 * ws.phi1
    exact_poles = [(complex(p), 2) for p in cfg.finite_ends]
    for num in ws.phi_component_numerators():
        pf = partial_fractions(RationalFunction(num, phi1sq, poles=list(exact_poles)))
        res = pf.residues()
        scale = max(num.coeff_norm(), 1e-30)
        if any(abs(v) > check_tol * scale for v in res.values()):
            raise SurfaceValidationError("nonzero residue")
    return ws


# ---------------------------------------------------------------------------
# equal-modulus obstruction
# ---------------------------------------------------------------------------


@dataclass
class ObstructionVerdict:
    obstructed: bool
    method: str
    witness: tuple[np.ndarray, np.ndarray] | None = None
    max_mismatch: float | None = None
    entry_classes: list[str] = field(default_factory=list)


def _reduce_to_block_form(vectors: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Change basis so the two kernel vectors are (..., 1, 0) and
    (..., 0, 1) at the best-conditioned coordinate pair; returns the new
    basis and the remaining coordinate indices."""
    v1, v2 = vectors
    m = len(v1)
    best = None
    for j, k in itertools.combinations(range(m), 2):
        B = np.array([[v1[j], v2[j]], [v1[k], v2[k]]])
        s = np.linalg.svd(B, compute_uv=False)
        score = s[-1]
        if best is None or score > best[0]:
            best = (score, j, k)
    _, j, k = best
    B = np.array([[v1[j], v2[j]], [v1[k], v2[k]]])
    T = np.linalg.inv(B)
    u1 = T[0, 0] * v1 + T[1, 0] * v2
    u2 = T[0, 1] * v1 + T[1, 1] * v2
    rest = [i for i in range(m) if i not in (j, k)]
    return u1, u2, rest


def _classify(c: complex, tol: float) -> str:
    if abs(c) <= tol:
        return "zero"
    if abs(c.imag) <= tol * abs(c):
        return "real"
    if abs(c.real) <= tol * abs(c):
        return "imaginary"
    return "neither"


def equal_modulus_obstruction(kernel: list[np.ndarray],
                              grid: float = 1e-3,
                              witness_tol: float = 1e-8) -> ObstructionVerdict:
    """Decide whether two linearly independent kernel vectors with equal
    componentwise moduli exist.

    Fast path: one entrywise product in R\\{0} and another in iR\\{0}
    forces obstruction.  Otherwise a torus search over the two free
    phases (leading coefficients normalized real, equal ratio of second
    coefficients) with local refinement down to the requested grid.
    """
    dim = len(kernel)
    if dim == 0:
        raise SurfaceValidationError("empty kernel", "obstruction undefined for trivial kernel")
    if dim == 1:
        return ObstructionVerdict(True, method="dimension-1")
    if dim != 2:
        raise SurfaceValidationError("unsupported kernel dimension")

    u1, u2, rest = _reduce_to_block_form([np.asarray(v, dtype=complex) for v in kernel])
    tol = 1e-10
    cs = np.array([np.conj(u1[j]) * u2[j] for j in rest], dtype=complex)
    active = [c for c in cs if abs(c) > tol * max(1.0, np.abs(cs).max() if len(cs) else 0.0)]
    classes = [_classify(c, 1e-9) for c in cs]

    if len(active) == 0:
        # no constraints at all: any equal-modulus independent pair works
        witness = (u1 + u2, u1 - u2)
        return ObstructionVerdict(False, "unconstrained", witness, 0.0, classes)

    has_real = any(k == "real" for k in classes)
    has_imag = any(k == "imaginary" for k in classes)
    if has_real and has_imag:
        return ObstructionVerdict(True, "real/imaginary entry pair", None, None, classes)

    # torus search over the phases of the second coefficients; leading
    # coefficients normalized to 1 and |alpha2| = |beta2| = 1 (the
    # equal-modulus condition at the block coordinates removes the
    # modulus freedom, and the residual mismatch depends only on the
    # phases).  The mismatch of (u1 + e^{i ta} u2, u1 + e^{i tb} u2)
    # vanishes linearly in |e^{i ta} - e^{i tb}|, so the search ranks the
    # normalized rate; a torus minimum bounded away from zero certifies
    # obstruction.
    def mismatch_rate(ta: float, tb: float) -> float:
        alpha2 = np.exp(1j * ta)
        beta2 = np.exp(1j * tb)
        sep = abs(alpha2 - beta2)
        if sep < 1e-14:
            return np.inf
        va = u1 + alpha2 * u2
        vb = u1 + beta2 * u2
        return float(np.max(np.abs(np.abs(va) - np.abs(vb)))) / sep

    n0 = 128
    thetas = np.linspace(0.0, 2.0 * np.pi, n0, endpoint=False)
    best = (np.inf, 0.0, 0.0)
    for ta in thetas:
        for tb in thetas:
            r = mismatch_rate(ta, tb)
            if r < best[0]:
                best = (r, ta, tb)
    step = 2.0 * np.pi / n0
    r, ta, tb = best
    while step > grid:
        step /= 4.0
        for da in (-step, 0.0, step):
            for db in (-step, 0.0, step):
                cand = mismatch_rate(ta + da, tb + db)
                if cand < r:
                    r, ta, tb = cand, ta + da, tb + db
    scale = float(np.max(np.abs(np.concatenate([u1, u2]))))
    if r > witness_tol * max(scale, 1.0):
        return ObstructionVerdict(True, "torus search", None, r, classes)
    # construct an exact witness from the minimizing phase direction:
    # alpha2 - beta2 = w with Re(w c_j) = 0 for all j, |alpha2| = |beta2|
    w = np.exp(1j * ta) - np.exp(1j * tb)
    w /= abs(w)
    alpha2, beta2 = w / 2 + 1j * w, -w / 2 + 1j * w
    va, vb = u1 + alpha2 * u2, u1 + beta2 * u2
    return ObstructionVerdict(False, "torus search", (va, vb),
                              float(np.max(np.abs(np.abs(va) - np.abs(vb)))), classes)


# ---------------------------------------------------------------------------
# sampling the four-end family / symmetric member
# ---------------------------------------------------------------------------


def sample_valid_surfaces(cfg: EndConfiguration, count: int, seed: int = 0,
                          max_tries: int = 2000) -> list[WeierstrassSurface]:
    """Deterministic rejection sampling of valid coefficient pairs from
    the kernel family."""
    M = build_end_matrix(cfg)
    ker = kernel_basis(M)
    if len(ker) < 2:
        raise SurfaceValidationError("trivial kernel")
    rng = np.random.default_rng(seed)
    out: list[WeierstrassSurface] = []
    for _ in range(max_tries):
        if len(out) >= count:
            break
        c = rng.standard_normal(8)
        a_hat = (c[0] + 1j * c[1]) * ker[0] + (c[2] + 1j * c[3]) * ker[1]
        b_hat = (c[4] + 1j * c[5]) * ker[0] + (c[6] + 1j * c[7]) * ker[1]
        try:
            out.append(assemble_weierstrass(cfg, a_hat, b_hat))
        except SurfaceValidationError:
            continue
    if len(out) < count:
        raise SurfaceValidationError("sampling failed",
                                     f"found only {len(out)} of {count} valid pairs")
    return out


def _mobius_pullback_matrix(tau: complex, deg: int) -> np.ndarray:
    """Matrix of q(u) -> (conj(tau) - u)^deg * q(conj(tau)/(conj(tau)-u))
    on ascending monomial coefficients."""
    tbar = np.conj(tau)
    S = np.zeros((deg + 1, deg + 1), dtype=complex)
    for k in range(deg + 1):
        # column k: tbar^k (tbar - u)^(deg-k)
        col = (Polynomial([tbar, -1.0]) ** (deg - k) if deg - k > 0 else Polynomial.one())
        cc = np.zeros(deg + 1, dtype=complex)
        cc[: col.degree + 1] = col.coeffs * (tbar ** k)
        S[:, k] = cc
    return S


def quarter_turn_chart_map(tau: complex):
    """Anti-holomorphic chart self-map cycling the ends
    inf -> 0 -> 1 -> tau -> inf."""
    tbar = np.conj(tau)

    def s(z):
        z = np.asarray(z, dtype=complex)
        return tbar / (tbar - np.conj(z))

    return s


def find_symmetric_member(cfg: EndConfiguration | None = None):
    """Locate the coefficient pair whose surface has the orientation-
    reversing quarter-turn symmetry about the vertical axis.

    The symmetry forces the monomial coefficient vector of a to be an
    eigenvector (eigenvalue on the imaginary axis) of the composition of
    the chart pullback with coefficient conjugation, and determines b
    from a.  Returns (a_hat, b_hat, diagnostics).
    """
    if cfg is None:
        cfg = equianharmonic_config()
    tau = cfg.finite_ends[2]
    m = cfg.m
    basis = phi_basis(cfg)
    M = build_end_matrix(cfg)
    ker = kernel_basis(M)
    if len(ker) != 2:
        raise SurfaceValidationError("trivial kernel")
    # monomial coefficients of the kernel polynomials
    deg = m - 1
    Q = np.zeros((deg + 1, 2), dtype=complex)
    for l, v in enumerate(ker):
        q = _poly_from_coeffs(v, basis)
        Q[: q.degree + 1, l] = q.coeffs
    S4 = _mobius_pullback_matrix(tau, deg)

    def phi_map(x):  # antilinear
        return np.conj(S4 @ x)

    # verify the pullback preserves the kernel polynomial space
    G = np.linalg.lstsq(Q, np.column_stack([phi_map(Q[:, 0]), phi_map(Q[:, 1])]),
                        rcond=None)[0]
    recon = Q @ G
    err = np.linalg.norm(recon - np.column_stack([phi_map(Q[:, 0]), phi_map(Q[:, 1])]))
    if err > 1e-9 * np.linalg.norm(Q):
        raise SurfaceValidationError("symmetry search failed",
                                     "pullback does not preserve the kernel family")
    G2 = G @ np.conj(G)  # matrix of the squared antilinear map
    evals, evecs = np.linalg.eig(G2)
    candidates = []
    for idx in range(len(evals)):
        mu = evals[idx]
        if abs(mu) < 1e-12 or abs(mu.real) > 1e-9 * abs(mu):
            continue  # need eigenvalue on the imaginary axis
        c = evecs[:, idx]
        lam_bar = np.sqrt(abs(mu))
        c_b = (G @ np.conj(c)) / lam_bar  # kernel coords of b
        a_hat = ker[0] * c[0] + ker[1] * c[1]
        b_hat = ker[0] * c_b[0] + ker[1] * c_b[1]
        try:
            ws = assemble_weierstrass(cfg, a_hat, b_hat)
        except SurfaceValidationError:
            continue
        candidates.append((ws, complex(mu)))
    if not candidates:
        raise SurfaceValidationError("symmetry search failed", "no admissible eigenvector")
    return candidates
