"""Fluctuation-field and large-field regulators, regulator norms, and their Monte-Carlo estimation."""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .algebra import NElement, complex_field
from .lattice import Torus
from .norms import NormParams, Weight, _unwrapped_coords, localized_phi_norm, rho_ratio, tnorm, tphi_norm

CI_Z99 = 2.5758293035489004  # two-sided 99% normal quantile
CHUNK = 10_000


@dataclass(frozen=True)
class RegulatorParams:
    ell: float = 1.0
    h: float = 1.0
    d_poly: int = 0  # cap on polynomial dimension for the large-field norm
    alpha_G: float = 1.1
    t: float = 1.0
    p_phi: int = 0
    K: int = 64

    def __post_init__(self):
        if not (self.ell > 0 and self.h > 0):
            raise ValueError("ell and h must be positive")
        if self.alpha_G <= 1:
            raise ValueError("alpha_G must exceed 1")
        if self.t < 0 or self.d_poly < 0 or self.p_phi < 0:
            raise ValueError("t, d_poly and p_phi must be nonnegative")

    def poly_degree(self, d: int) -> int | None:
        """Largest polynomial degree whose dimension (d-2)/2 + degree stays within d_poly."""
        k = math.floor(self.d_poly - (d - 2) / 2)
        return k if k >= 0 else None


# ---------------------------------------------------------------------------
# regulators


def block_field_norm(torus: Torus, phi, block: int, params: RegulatorParams, kind: str = "G") -> float:
    """||phi||_{Phi(B^box, ell)} (kind G) or its polynomial quotient (kind Gtilde); upper end of the bracket."""
    box = torus.small_set_neighbourhood(torus.block_sites(block))
    if kind == "G":
        return localized_phi_norm(phi, box, params.ell, params.p_phi, torus, None, params.K)[1]
    if kind == "Gtilde":
        _unwrapped_coords(torus, box)  # the polynomial quotient needs B^box embedded in Z^d
        deg = params.poly_degree(torus.d)
        if deg is None:
            return localized_phi_norm(phi, box, params.ell, params.p_phi, torus, None, params.K)[1]
        return localized_phi_norm(phi, box, params.ell, params.p_phi, torus, deg, params.K)[1]
    raise ValueError(f"unknown regulator kind {kind!r}")


def log_regulator(torus: Torus, X, phi, params: RegulatorParams, kind: str = "G") -> float:
    X = set(X)
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    total = 0.0
    by_block: dict[int, int] = {}
    for x in X:
        b = torus.block_of(x)
        by_block[b] = by_block.get(b, 0) + 1
    half = 0.5 if kind == "Gtilde" else 1.0
    for b, count in sorted(by_block.items()):
        nrm = block_field_norm(torus, phi, b, params, kind)
        total += half * count / torus.block_volume * nrm ** 2
    return total


def fluctuation_regulator(torus: Torus, X, phi, params: RegulatorParams) -> float:
    return math.exp(log_regulator(torus, X, phi, params, "G"))


def large_field_regulator(torus: Torus, X, phi, params: RegulatorParams) -> float:
    return math.exp(log_regulator(torus, X, phi, params, "Gtilde"))


# ---------------------------------------------------------------------------
# probes and regulator norms


def probe_fields(torus: Torus, seed: int = 0, amplitudes=(0.0, 0.25, 0.5, 1.0, 2.0, 3.0), n_random: int = 4):
    """Constant fields, single-site bumps, linear ramps and Gaussian draws at several amplitudes."""
    rng = np.random.default_rng(seed)
    n = torus.volume
    shapes = [np.ones(n, dtype=complex), np.exp(0.7j) * np.ones(n)]
    for x in (0, n // 2):
        bump = np.zeros(n, dtype=complex)
        bump[x] = 1.0
        shapes.append(bump)
    coords = np.array([torus.coords(x)[0] for x in range(n)], dtype=float)
    shapes.append((coords / max(1, torus.period - 1)).astype(complex))
    for _ in range(n_random):
        shapes.append((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2))
    out = [np.zeros(n, dtype=complex)]
    for a in amplitudes:
        if a == 0:
            continue
        out.extend(a * s for s in shapes)
    return out


def support_sites(F: NElement) -> set[int]:
    return {u.site for u in F.variables()}


@dataclass
class RegulatorNorm:
    lower: float
    upper: float | None
    argmax: int
    ratios: list[float] = field(default_factory=list)


def regulator_norm(F: NElement, X, kind: str, norm_params: NormParams, params: RegulatorParams, probes,
                   species: str = "phi") -> RegulatorNorm:
    """sup over probes of ||F||_{T_phi} / regulator(X, phi): a lower bound, with an upper bound when available."""
    torus = F.layout.torus
    Xbox = torus.small_set_neighbourhood(X)
    if not support_sites(F) <= Xbox:
        raise ValueError("element is not supported in the small set neighbourhood of X")
    ratios = []
    for phi in probes:
        field_ = complex_field(F.layout, species, phi)
        val = tnorm(F, field_, norm_params)
        ratios.append(val * math.exp(-log_regulator(torus, X, phi, params, kind)))
    best = int(np.argmax(ratios))
    upper = None
    is_polymer = set(X) == set(torus.polymer_sites(torus.blocks_meeting(X)))
    A = F.degree()
    if kind == "G" and params.p_phi == 0 and is_polymer and X and A <= norm_params.p_N and F.truncation is None:
        upper = tnorm(F, None, norm_params) * polynomial_gaussian_sup(A, 1.0)
    return RegulatorNorm(ratios[best], upper, best, ratios)


def polynomial_gaussian_sup(A: int, c: float = 1.0) -> float:
    """sup_{u >= 0} (1+u)^A exp(-c u^2)."""
    if A == 0:
        return 1.0
    u = (-1 + math.sqrt(1 + 2 * A / c)) / 2
    return (1 + u) ** A * math.exp(-c * u * u)


# ---------------------------------------------------------------------------
# the chain relating the two regulator norms


@dataclass
class KKKReport:
    holds: bool
    c_A: float
    c_A_closed_form: float | None
    worst_slack: float
    G_norm: float
    Gtilde_norm: float
    T0_ell: float
    rho: float
    violations: list = field(default_factory=list)


def kkk_check(F: NElement, X, A: int, p_N: int, params: RegulatorParams, probes, species: str = "phi",
              t_grid=None) -> KKKReport:
    """Check the pointwise norm-change chain on each probe and the resulting regulator-norm inequality.

    Per probe: ||F||_{T_phi(ell)} <= (1+||phi||_{Phi(ell,X)})^{A+1} (||F||_{T_0(ell)} + rho sup_t ||F||_{T_{t phi}(h)}),
    with rho the norm-comparison ratio of the ell and h weights. Then
    ||F||_G <= c_A (||F||_{T_0(ell)} + rho ||F||_Gtilde) with c_A = sup_probes (1+||phi||_{Phi(ell,X^box)})^{A+1} / G^{1/2}.
    """
    if params.ell > params.h:
        raise ValueError("the chain is configured with ell <= h")
    lay = F.layout
    torus = lay.torus
    names = [s.name for s in lay.species]
    fermions = {s.name: lay.n_sites for s in lay.species if s.fermion}
    w_ell = Weight({s: params.ell for s in names}, params.p_phi, torus.R)
    w_h = Weight({s: params.h for s in names}, params.p_phi, torus.R)
    mode = "exact" if params.p_phi == 0 else "complex"
    P_ell = NormParams(p_N, w_ell, mode, params.K)
    P_h = NormParams(p_N, w_h, mode, params.K)
    rho = rho_ratio(w_ell, w_h, A + 1, p_N, fermions)
    t_grid = np.linspace(0, 1, 11) if t_grid is None else t_grid
    X = set(X)
    Xbox = torus.small_set_neighbourhood(X)
    T0_res = tphi_norm(F, None, P_ell)
    T0 = T0_res.upper
    c_A = 0.0
    G_norm = 0.0
    Gt_norm = 0.0
    worst = math.inf
    violations = []
    for k, phi in enumerate(probes):
        nrm_X = localized_phi_norm(phi, X, params.ell, params.p_phi, torus, None, params.K)[1]
        nrm_box = localized_phi_norm(phi, Xbox, params.ell, params.p_phi, torus, None, params.K)[1]
        logG = log_regulator(torus, X, phi, params, "G")
        lhs = tnorm(F, complex_field(lay, species, phi), P_ell)
        sup_t = 0.0
        for t in t_grid:
            res = tphi_norm(F, complex_field(lay, species, t * phi), P_h)
            sup_t = max(sup_t, res.upper)
            Gt_norm = max(Gt_norm, res.value * math.exp(-log_regulator(torus, X, t * phi, params, "Gtilde")))
        rhs = (1 + nrm_X) ** (A + 1) * (T0 + rho * sup_t)
        worst = min(worst, rhs - lhs)
        if lhs > rhs * (1 + 1e-12):
            violations.append(("pointwise", k, lhs, rhs))
        c_A = max(c_A, math.exp((A + 1) * math.log1p(nrm_box) - 0.5 * logG))
        G_norm = max(G_norm, lhs * math.exp(-logG))
    closed = None
    if params.p_phi == 0 and X and set(torus.polymer_sites(torus.blocks_meeting(X))) == X:
        closed = polynomial_gaussian_sup(A + 1, 0.5)
        if c_A > closed * (1 + 1e-12):
            violations.append(("c_A", c_A, closed))
    rhs = c_A * (T0 + rho * Gt_norm)
    if G_norm > rhs * (1 + 1e-12):
        violations.append(("regulator norms", G_norm, rhs))
    worst = min(worst, rhs - G_norm)
    return KKKReport(not violations, c_A, closed, worst, G_norm, Gt_norm, T0, rho, violations)


# ---------------------------------------------------------------------------
# Gaussian expectation of the fluctuation regulator


def quadratic_majorant(torus: Torus, X, params: RegulatorParams) -> np.ndarray:
    """Real matrix V with t log G(X, phi) <= |V phi|^2 for every field phi.

    With no derivative constraints the localized norm is a max over B^box, bounded by
    the sum; otherwise the global norm bounds the localized one and the sup over
    (alpha, y) is bounded by the sum over them.
    """
    n = torus.volume
    X = set(X)
    counts: dict[int, int] = {}
    for x in X:
        b = torus.block_of(x)
        counts[b] = counts.get(b, 0) + 1
    if params.p_phi == 0:
        a = np.zeros(n)
        for b, c in counts.items():
            for y in torus.small_set_neighbourhood(torus.block_sites(b)):
                a[y] += params.t * c / torus.block_volume / params.ell ** 2
        return np.diag(np.sqrt(a))
    from .lattice import multiindices

    total = params.t * sum(c / torus.block_volume for c in counts.values()) / params.ell ** 2
    rows = [math.sqrt(total) * torus.R ** a.order * torus.difference_matrix(a) for a in multiindices(torus.d, params.p_phi)]
    return np.vstack(rows)


@dataclass
class MCReport:
    seed: int
    samples: int
    estimate: float
    ci_halfwidth: float
    bound: float
    gaussian_bound: float  # det(I - Q)^{-1/2} >= E G^t when the lambda gate holds
    lambda_max: float
    trace_Q: float
    within_hypothesis: bool
    flags: list = field(default_factory=list)
    X_size: int = 0
    t: float = 1.0

    def record(self) -> dict:
        return asdict(self)


def regulator_gate(torus: Torus, X, C_b, params: RegulatorParams):
    """(lambda_max(Q), Tr Q, det(I-Q)^{-1/2}) for the Gaussian vector majorising t log G."""
    V = quadratic_majorant(torus, X, params)
    C = np.asarray(C_b, dtype=float)
    Q1 = V @ C @ V.T  # real and imaginary parts contribute one copy each
    lam = np.linalg.eigvalsh((Q1 + Q1.T) / 2)
    lam_max = float(lam.max()) if lam.size else 0.0
    trace = 2 * float(lam.sum())
    gauss = float(np.prod((1 - lam) ** -1.0)) if lam_max < 1 else math.inf
    return lam_max, trace, gauss


def scale_to_gate(torus: Torus, X, C_b, params: RegulatorParams, safety: float = 0.9) -> float:
    """Largest scale s (times safety) for which s*C_b passes both gates."""
    lam, tr, _ = regulator_gate(torus, X, C_b, params)
    target = len(X) / torus.block_volume * math.log(params.alpha_G)
    s = min(0.5 / lam if lam > 0 else math.inf, target / tr if tr > 0 else math.inf)
    return safety * s


def sample_fields(C_b, n: int, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian fields with E conj(phi_k) phi_l = C_b[k][l]: real and imaginary parts ~ N(0, C_b/2)."""
    C = np.asarray(C_b, dtype=float)
    L = np.linalg.cholesky(C / 2)
    re = rng.standard_normal((n, C.shape[0])) @ L.T
    im = rng.standard_normal((n, C.shape[0])) @ L.T
    return re + 1j * im


def _chunk_moments(args):
    torus, X, C_b, params, seed_seq, n = args
    rng = np.random.default_rng(seed_seq)
    phis = sample_fields(C_b, n, rng)
    if params.t == 0:
        vals = np.ones(n)
    elif params.p_phi == 0:
        vals = np.exp(params.t * _log_G_fast(torus, X, phis, params))
    else:
        vals = np.array([math.exp(params.t * log_regulator(torus, X, p, params, "G")) for p in phis])
    return float(vals.sum()), float((vals ** 2).sum()), n


def _log_G_fast(torus: Torus, X, phis: np.ndarray, params: RegulatorParams) -> np.ndarray:
    counts: dict[int, int] = {}
    for x in X:
        b = torus.block_of(x)
        counts[b] = counts.get(b, 0) + 1
    out = np.zeros(phis.shape[0])
    for b, c in counts.items():
        box = sorted(torus.small_set_neighbourhood(torus.block_sites(b)))
        nrm = np.max(np.abs(phis[:, box]), axis=1) / params.ell
        out += c / torus.block_volume * nrm ** 2
    return out


def regulator_expectation_mc(torus: Torus, X, C_b, params: RegulatorParams, samples: int, seed: int,
                             workers: int = 1) -> MCReport:
    """Monte-Carlo estimate of E G(X, phi)^t with a 99% confidence half-width."""
    X = sorted(set(X))
    lam, tr, gauss = regulator_gate(torus, X, C_b, params)
    bound = params.alpha_G ** (len(X) / torus.block_volume)
    flags = []
    if lam >= 0.5:
        flags.append("outside hypothesis: lambda_max(Q) >= 1/2")
    if tr > math.log(bound):
        flags.append("outside hypothesis: exp(Tr Q) exceeds the target growth")
    sizes = [CHUNK] * (samples // CHUNK) + ([samples % CHUNK] if samples % CHUNK else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(torus, X, C_b, params, s, n) for s, n in zip(seqs, sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_moments, jobs))
    else:
        parts = [_chunk_moments(j) for j in jobs]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    if n == 0:
        return MCReport(seed, 0, math.nan, math.nan, bound, gauss, lam, tr, not flags, flags, len(X), params.t)
    mean = s1 / n
    var = max(s2 / n - mean ** 2, 0.0) * n / max(n - 1, 1)
    half = CI_Z99 * math.sqrt(var / n)
    if params.t == 0:
        mean, half = 1.0, 0.0
    return MCReport(seed, n, mean, half, bound, gauss, lam, tr, not flags, flags, len(X), params.t)


def write_mc_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["X", "t", "estimate", "bound"])
        for r in reports:
            w.writerow([r.X_size, r.t, repr(r.estimate), repr(r.bound)])


# ---------------------------------------------------------------------------
# auxiliary inequalities


def exponential_moment(C) -> tuple[float, float]:
    """(E exp((xi,xi)/2), exp(Tr C)) for a real Gaussian xi with covariance C and lambda_max < 1."""
    lam = np.linalg.eigvalsh(np.asarray(C, dtype=float))
    if lam.max() >= 1:
        raise ValueError("exponential moment diverges for lambda_max >= 1")
    return float(np.prod((1 - lam) ** -0.5)), float(math.exp(lam.sum()))


def _block_difference(f: np.ndarray, y, dirs) -> complex | None:
    """nabla^alpha f(y) inside the block (no wraparound); None if the stencil leaves the block."""
    total = 0
    k = len(dirs)
    for r in range(k + 1):
        for S in itertools.combinations(range(k), r):
            p = list(y)
            for i in S:
                axis, sign = dirs[i]
                p[axis] += sign
            if any(c < 0 or c >= f.shape[a] for a, c in enumerate(p)):
                return None
            total += (-1) ** (k - r) * f[tuple(p)]
    return total


def lattice_sobolev_ratio(f: np.ndarray, R: int) -> float:
    """max_x |f(x)|^2 / (2^{3d+2} R^-d sum_y sum_{|alpha|_inf <= 1} |nabla_R^alpha f(y)|^2) on one block."""
    f = np.asarray(f)
    d = f.ndim
    units = [(axis, s) for axis in range(d) for s in (1, -1)]
    total = 0.0
    for y in itertools.product(range(R), repeat=d):
        for r in range(len(units) + 1):
            for dirs in itertools.combinations(units, r):
                v = _block_difference(f, y, dirs)
                if v is not None:
                    total += abs(R ** r * v) ** 2
    rhs = 2 ** (3 * d + 2) * R ** (-d) * total
    lhs = float(np.max(np.abs(f)) ** 2)
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


def gram_ratio(U: np.ndarray, V: np.ndarray) -> float:
    """|det <u_i, v_j>| / prod ||u_i|| ||v_i||."""
    G = U.conj() @ V.T
    denom = float(np.prod(np.linalg.norm(U, axis=1) * np.linalg.norm(V, axis=1)))
    return float(abs(np.linalg.det(G))) / denom if denom else 0.0
