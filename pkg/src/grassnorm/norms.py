"""Test functions, weighted Phi norms, the pairing, and the T_phi semi-norm.

The T_phi semi-norm is the dual of the Phi norm under the pairing. Derivative
constraints only move sites around, so the unit ball is a product over *patterns*
(the species and component at each position of a sequence). The semi-norm is
therefore a sum of independent per-pattern problems:

* with no derivative constraints every coordinate is an independent box and the
  dual is a weighted absolute sum (mode ``"exact"``);
* otherwise each pattern is a linear program over real test functions (``"lp"``),
  or, for complex data, over a K-gon outer approximation of the modulus
  constraint (``"complex"``), which brackets the value within a factor cos(pi/K).
"""

from __future__ import annotations

import functools
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .algebra import (
    FieldIndex,
    Layout,
    NElement,
    boson_degree,
    permutation_sign,
    primed,
    sort_fermions,
    unprimed,
)
from .lattice import MultiIndex, Torus, multiindices

Pattern = tuple[tuple[str, int], ...]
MODES = ("exact", "lp", "complex")


# ---------------------------------------------------------------------------
# weights and parameters


@dataclass(frozen=True)
class Weight:
    """w^-1 = h^-1 R^|alpha| for |alpha| <= p_phi and 0 (unconstrained) above, per species."""

    h: Mapping[str, float]
    p_phi: int = 0
    R: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "h", dict(self.h))
        if self.p_phi < 0:
            raise ValueError("p_phi must be nonnegative")
        for name, v in self.h.items():
            if not v > 0:
                raise ValueError(f"h for {name!r} must be positive")

    def scale(self, species: str) -> float:
        try:
            return self.h[species]
        except KeyError:
            raise KeyError(f"weight has no scale for species {species!r}") from None

    def inv(self, species: str, order: int) -> float | None:
        """w^-1 for one argument, or None when the derivative is unconstrained."""
        if order > self.p_phi:
            return None
        return self.R ** order / self.scale(species)

    def value(self, alpha: MultiIndex, u: FieldIndex) -> float:
        inv = self.inv(u.species, alpha.order)
        return math.inf if inv is None else 1.0 / inv

    def of_sequence(self, z) -> float:
        """w_z with alpha = 0."""
        return math.prod(self.scale(u.species) for u in z)

    def disjoint_union(self, other: "Weight") -> "Weight":
        """w on unprimed species, other on their primed copies."""
        self._same_shape(other)
        h = dict(self.h)
        h.update({primed(k): v for k, v in other.h.items()})
        return Weight(h, self.p_phi, self.R)

    def __add__(self, other: "Weight") -> "Weight":
        self._same_shape(other)
        return Weight({k: v + other.h[k] for k, v in self.h.items()}, self.p_phi, self.R)

    def scaled(self, s: float) -> "Weight":
        return Weight({k: s * v for k, v in self.h.items()}, self.p_phi, self.R)

    def with_p_phi(self, p_phi: int) -> "Weight":
        return Weight(self.h, p_phi, self.R)

    def _same_shape(self, other):
        if self.p_phi != other.p_phi or self.R != other.R:
            raise ValueError("weights differ in p_phi or R")


@dataclass(frozen=True)
class NormParams:
    """Caps and weight of a T_phi semi-norm."""

    p_N: int
    weight: Weight
    mode: str = "exact"
    K: int = 64  # polygon sides for complex data
    seq_cap: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.p_N < 0:
            raise ValueError("p_N must be nonnegative")
        if self.mode == "exact" and self.weight.p_phi != 0:
            raise ValueError("exact mode requires p_phi = 0")

    def cap(self, layout: Layout) -> int:
        if self.seq_cap is not None:
            return self.seq_cap
        return 2 * len(layout.fermion_indices) + self.p_N

    def with_weight(self, weight: Weight, mode: str | None = None) -> "NormParams":
        return NormParams(self.p_N, weight, mode or self.mode, self.K, self.seq_cap)


# ---------------------------------------------------------------------------
# test functions


@dataclass
class TestFunction:
    """A complex function on species-ordered sequences; zero off its support."""

    __test__ = False  # keep pytest from collecting this class

    layout: Layout
    values: dict = field(default_factory=dict)
    p_N: int | None = None

    def __post_init__(self):
        clean = {}
        for z, v in self.values.items():
            z = tuple(z)
            if not self.layout.is_species_ordered(z):
                raise ValueError(f"sequence is not species ordered: {z}")
            if self.p_N is not None and sum(not self.layout.is_fermion(u) for u in z) > self.p_N:
                continue
            if v != 0:
                clean[z] = v
        self.values = clean

    def __getitem__(self, z):
        return self.values.get(tuple(z), 0)

    def items(self):
        return self.values.items()

    def scale(self, s) -> "TestFunction":
        return TestFunction(self.layout, {z: s * v for z, v in self.values.items()}, self.p_N)

    def __add__(self, other: "TestFunction") -> "TestFunction":
        vals = dict(self.values)
        for z, v in other.values.items():
            vals[z] = vals.get(z, 0) + v
        return TestFunction(self.layout, vals, self.p_N)

    def restrict_length(self, r: int) -> "TestFunction":
        return TestFunction(self.layout, {z: v for z, v in self.values.items() if len(z) == r}, self.p_N)


def field_test_function(layout: Layout, phi: Mapping[FieldIndex, complex]) -> TestFunction:
    """A boson field viewed as a test function on length-one sequences."""
    return TestFunction(layout, {(u,): v for u, v in phi.items() if not layout.is_fermion(u)})


def pattern_of(z) -> Pattern:
    return tuple((u.species, u.comp) for u in z)


def _group(values: Mapping) -> dict[Pattern, dict]:
    out: dict = defaultdict(dict)
    for z, v in values.items():
        out[pattern_of(z)][tuple(u.site for u in z)] = v
    return out


# ---------------------------------------------------------------------------
# Phi norm


def _alpha_tuples(d: int, p_phi: int, r: int):
    singles = multiindices(d, p_phi)
    return itertools.product(singles, repeat=r)


def _apply_args(arr: np.ndarray, torus: Torus, alphas) -> np.ndarray:
    """Apply nabla^{alpha_k} to argument k of a dense array of shape (n,)*r."""
    r = len(alphas)
    d = torus.d
    grid = arr.reshape(torus.shape * r)
    for k, alpha in enumerate(alphas):
        for axis, sign in alpha.directions():
            ax = k * d + axis
            grid = np.roll(grid, -sign, axis=ax) - grid
    return grid.reshape(arr.shape)


def phi_norm(g: TestFunction, w: Weight, torus: Torus | None = None) -> tuple[float, dict[int, float]]:
    """sup over (alpha, z) of w^-1 |nabla^alpha g_z|; also returns the per-length sups."""
    torus = torus or g.layout.torus
    per_len: dict[int, float] = defaultdict(float)
    if w.p_phi > 0 and torus is None:
        raise ValueError("derivative constraints need a torus")
    for pat, entries in _group(g.values).items():
        r = len(pat)
        base = math.prod(1.0 / w.scale(s) for s, _ in pat)
        if w.p_phi == 0 or r == 0:
            best = max(abs(v) for v in entries.values()) * base
        else:
            n = torus.volume
            arr = np.zeros((n,) * r, dtype=complex)
            for sites, v in entries.items():
                arr[sites] = v
            best = 0.0
            for alphas in _alpha_tuples(torus.d, w.p_phi, r):
                fac = base * math.prod(w.R ** a.order for a in alphas)
                best = max(best, fac * float(np.max(np.abs(_apply_args(arr, torus, alphas)))))
        per_len[r] = max(per_len[r], best)
    return max(per_len.values(), default=0.0), dict(per_len)


def norm_of_field(layout: Layout, phi: Mapping[FieldIndex, complex], w: Weight) -> float:
    return phi_norm(field_test_function(layout, phi), w)[0]


# ---------------------------------------------------------------------------
# pairing and symmetrisation


class Jet:
    """Taylor data of F at phi: F_z(phi) for every species-ordered z, by table lookup."""

    def __init__(self, F: NElement, phi: Mapping[FieldIndex, complex] | None = None):
        if phi and any(v != 0 for v in phi.values()):
            if F.truncation is not None:
                raise ValueError("a truncated jet can only be paired at phi = 0")
            F = F.shift(phi)
        self.F = F
        self.layout = F.layout

    def __call__(self, z) -> complex:
        lay = self.layout
        xs = [u for u in z if not lay.is_fermion(u)]
        ys = [u for u in z if lay.is_fermion(u)]
        mono, sign = sort_fermions(lay, ys)
        if sign == 0:
            return 0
        counts: dict = defaultdict(int)
        for x in xs:
            counts[x] += 1
        bm = tuple(sorted(counts.items(), key=lambda t: lay.key(t[0])))
        c = self.F.terms.get((mono, bm), 0)
        if c == 0:
            return 0
        return sign * c * math.prod(math.factorial(e) for _, e in bm)

    def classes(self, p_N: int, cap: int):
        """(canonical z, F_z) for every term with at most p_N boson entries and length <= cap."""
        for (f, b), c in self.F.terms.items():
            deg = boson_degree(b)
            if deg > p_N or deg + len(f) > cap:
                continue
            z = tuple(u for u, e in b for _ in range(e)) + f
            z, s = self.layout.species_sort(z)
            yield z, s * c * math.prod(math.factorial(e) for _, e in b), b


def pairing(F: NElement, g: TestFunction, phi=None) -> complex:
    """sum_z (1/z!) F_z(phi) g_z."""
    jet = Jet(F, phi)
    lay = F.layout
    return sum(jet(z) * v / lay.factorial(z) for z, v in g.items())


def _block_permutations(layout: Layout, z):
    """All species-order-preserving rearrangements sigma z with the fermion sign of sigma."""
    blocks = []
    start = 0
    z = tuple(z)
    while start < len(z):
        end = start
        while end < len(z) and z[end].species == z[start].species:
            end += 1
        blocks.append(list(range(start, end)))
        start = end
    for choice in itertools.product(*(itertools.permutations(b) for b in blocks)):
        perm = [i for block in choice for i in block]
        ferm = [i for i in perm if layout.is_fermion(z[i])]
        yield tuple(z[i] for i in perm), permutation_sign(ferm)


def orbit(layout: Layout, z) -> dict[tuple, int]:
    """Distinct rearrangements of z with the sign F_{sigma z} = sign * F_z."""
    out = {}
    for w, s in _block_permutations(layout, z):
        out.setdefault(w, s)
    return out


def symmetrise(g: TestFunction) -> TestFunction:
    """(Sg)_z = (1/z!) sum_sigma sgn(sigma_f) g_{sigma z}."""
    lay = g.layout
    out: dict = {}
    done = set()
    for z in g.values:
        for w in orbit(lay, z):
            if w in done:
                continue
            done.add(w)
            total = sum(s * g[v] for v, s in _block_permutations(lay, w))
            out[w] = total / lay.factorial(w)
    return TestFunction(lay, out, g.p_N)


# ---------------------------------------------------------------------------
# T_phi semi-norm


@dataclass
class NormResult:
    value: float
    mode: str
    upper: float | None = None  # certified upper bound when value is only a lower bound
    factor: float = 1.0  # value >= factor * upper
    certificate: TestFunction | None = None
    cap: int = 0
    p_N: int = 0
    weight: Weight | None = None

    def __float__(self):
        return float(self.value)


def _objectives(F: NElement, phi, params: NormParams) -> dict[Pattern, dict]:
    """Per pattern, the map site-tuple -> (1/z!) F_z(phi)."""
    jet = Jet(F, phi)
    lay = F.layout
    cap = params.cap(lay)
    obj: dict = defaultdict(lambda: defaultdict(complex))
    for z, D, _ in jet.classes(params.p_N, cap):
        zf = lay.factorial(z)
        for w, s in orbit(lay, z).items():
            obj[pattern_of(w)][tuple(u.site for u in w)] += s * D / zf
    return obj


def _check_truncation(F: NElement, phi, params: NormParams):
    if F.truncation is not None and F.truncation < params.p_N:
        raise ValueError(f"element known only to boson degree {F.truncation} < p_N = {params.p_N}")


def tphi_norm(F: NElement, phi=None, params: NormParams | None = None, certificate: bool = False) -> NormResult:
    """sup over the Phi unit ball of |<F, g>_phi|."""
    if params is None:
        raise ValueError("norm parameters required")
    _check_truncation(F, phi, params)
    lay = F.layout
    w = params.weight
    cap = params.cap(lay)
    if params.mode == "exact":
        return _exact_norm(F, phi, params, certificate)
    obj = _objectives(F, phi, params)
    torus = lay.torus
    total_lo = 0.0
    total_hi = 0.0
    cert: dict = {}
    factor = 1.0
    for pat, entries in obj.items():
        entries = {k: v for k, v in entries.items() if v != 0}
        if not entries:
            continue
        if params.mode == "lp":
            if any(abs(v.imag) > 1e-14 * max(1.0, abs(v)) for v in entries.values()):
                raise ValueError("lp mode needs real coefficients F_z(phi); use the complex mode")
            lo, g = _pattern_lp_real(pat, entries, w, torus, lay.n_sites)
            hi = lo
        else:
            lo, hi, g = _pattern_lp_complex(pat, entries, w, torus, lay.n_sites, params.K)
            factor = math.cos(math.pi / params.K)
        total_lo += lo
        total_hi += hi
        for sites, v in g.items():
            cert[tuple(FieldIndex(s, c, x) for (s, c), x in zip(pat, sites))] = v
    tf = TestFunction(lay, cert, params.p_N) if certificate else None
    return NormResult(total_lo, params.mode, total_hi, factor, tf, cap, params.p_N, w)


def _exact_norm(F, phi, params, certificate):
    lay = F.layout
    w = params.weight
    jet = Jet(F, phi)
    cap = params.cap(lay)
    total = 0.0
    cert = {}
    for z, D, b in jet.classes(params.p_N, cap):
        wz = w.of_sequence(z)
        mult = math.prod(math.factorial(e) for _, e in b)
        total += abs(D) * wz / mult
        if certificate and D != 0:
            phase = complex(D).conjugate() / abs(D)
            for v, s in orbit(lay, z).items():
                cert[v] = s * wz * phase
    tf = TestFunction(lay, cert, params.p_N) if certificate else None
    return NormResult(total, "exact", total, 1.0, tf, cap, params.p_N, w)


def tnorm(F: NElement, phi=None, params: NormParams | None = None) -> float:
    return tphi_norm(F, phi, params).value


@functools.lru_cache(maxsize=256)
def _stacked_differences(torus: Torus, n: int, r: int, p_phi: int):
    """All nabla^{alpha_1} x ... x nabla^{alpha_r} with some derivative, stacked; plus the orders."""
    singles = multiindices(torus.d, p_phi)
    mats = {a: torus.difference_matrix(a) if a.order else np.eye(n) for a in singles}
    ops, orders = [], []
    for alphas in itertools.product(singles, repeat=r):
        if all(a.order == 0 for a in alphas):
            continue
        op = mats[alphas[0]]
        for a in alphas[1:]:
            op = np.kron(op, mats[a])
        ops.append(sp.csr_matrix(op))
        orders.append([a.order for a in alphas])
    stacked = sp.vstack(ops, format="csr") if ops else None
    return ops, np.array(orders, dtype=float), stacked


def _constraint_blocks(pat: Pattern, w: Weight, torus: Torus | None, n: int):
    """(operator, bound) for every constrained alpha-tuple with some derivative."""
    r = len(pat)
    if w.p_phi == 0 or r == 0:
        return []
    ops, orders, _ = _stacked_differences(torus, n, r, w.p_phi)
    scales = np.array([w.scale(s) for s, _ in pat])
    bounds = np.prod(scales) / np.prod(float(w.R) ** orders, axis=1)
    return list(zip(ops, bounds))


def _flat(entries: Mapping, n: int, r: int, dtype=float) -> np.ndarray:
    c = np.zeros(n ** r, dtype=dtype)
    for sites, v in entries.items():
        idx = 0
        for x in sites:
            idx = idx * n + x
        c[idx] += v if dtype is complex else v.real if isinstance(v, complex) else v
    return c


def _unflat(vec: np.ndarray, n: int, r: int) -> dict:
    out = {}
    for idx in np.nonzero(vec)[0]:
        sites = np.unravel_index(int(idx), (n,) * r) if r else ()
        out[tuple(int(x) for x in sites)] = vec[idx]
    return out


def _pattern_lp_real(pat, entries, w, torus, n):
    r = len(pat)
    box = math.prod(w.scale(s) for s, _ in pat)
    c = _flat(entries, n, r)
    blocks = _constraint_blocks(pat, w, torus, n)
    if not blocks:
        g = box * np.sign(c)
    else:
        M = _stacked_differences(torus, n, r, w.p_phi)[2]
        bnd = np.concatenate([np.full(op.shape[0], bound) for op, bound in blocks])
        A = sp.vstack([M, -M], format="csr")
        b = np.concatenate([bnd, bnd])
        res = linprog(-c, A_ub=A, b_ub=b, bounds=[(-box, box)] * c.size, method="highs")
        if res.status != 0:
            raise RuntimeError(f"LP failed: {res.message}")
        g = res.x
    g = _normalise(g, pat, w, torus, n)
    return float(abs(c @ g)), _unflat(g, n, r)


def _pattern_lp_complex(pat, entries, w, torus, n, K):
    r = len(pat)
    box = math.prod(w.scale(s) for s, _ in pat)
    c = _flat(entries, n, r, complex)
    N = c.size
    angles = 2 * math.pi * np.arange(K) / K
    cos, sin = np.cos(angles), np.sin(angles)
    # variables [a; b] with g = a + i b; maximise Re sum c g = c.real a - c.imag b
    obj = -np.concatenate([c.real, -c.imag])
    eye = sp.identity(N, format="csr")
    blocks = [(eye, box)] + _constraint_blocks(pat, w, torus, n)
    M = sp.vstack([op for op, _ in blocks], format="csr")
    bnd = np.concatenate([np.full(op.shape[0], bound) for op, bound in blocks])
    # one copy of every constraint per polygon direction
    A = sp.hstack([sp.kron(cos[:, None], M), sp.kron(sin[:, None], M)], format="csr")
    b = np.tile(bnd, K)
    lim = box / math.cos(math.pi / K)
    res = linprog(obj, A_ub=A, b_ub=b, bounds=[(-lim, lim)] * (2 * N), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    upper = -res.fun
    g = (res.x[:N] + 1j * res.x[N:]) * math.cos(math.pi / K)
    g = _normalise(g, pat, w, torus, n)
    return float(abs(c @ g)), float(upper), _unflat(g, n, r)


def _normalise(g: np.ndarray, pat, w, torus, n) -> np.ndarray:
    """Scale g into the closed unit ball (absorbs solver feasibility tolerance)."""
    r = len(pat)
    entries = _unflat(g, n, r)
    if not entries:
        return g
    tf_vals = {tuple(FieldIndex(s, c, x) for (s, c), x in zip(pat, sites)): v for sites, v in entries.items()}
    norm = _pattern_norm(tf_vals, pat, w, torus, n)
    return g / norm if norm > 1 else g


def _pattern_norm(values, pat, w, torus, n) -> float:
    r = len(pat)
    base = math.prod(1.0 / w.scale(s) for s, _ in pat)
    arr = np.zeros((n,) * r, dtype=complex)
    for z, v in values.items():
        arr[tuple(u.site for u in z)] = v
    if w.p_phi == 0 or r == 0:
        return float(np.max(np.abs(arr))) * base
    best = 0.0
    for alphas in _alpha_tuples(torus.d, w.p_phi, r):
        fac = base * math.prod(w.R ** a.order for a in alphas)
        best = max(best, fac * float(np.max(np.abs(_apply_args(arr, torus, alphas)))))
    return best


def verify_certificate(F: NElement, phi, result: NormResult, params: NormParams, rtol: float = 1e-12) -> bool:
    """Re-pair the stored test function: it must lie in the unit ball and reproduce the value."""
    g = result.certificate
    if g is None:
        raise ValueError("result carries no certificate")
    norm, _ = phi_norm(g, params.weight, F.layout.torus)
    if norm > 1 + rtol:
        return False
    # per-pattern phases are independent; re-pair each pattern and add moduli
    total = 0.0
    jet = Jet(F, phi)
    lay = F.layout
    for pat, entries in _group(g.values).items():
        s = 0
        for sites, v in entries.items():
            z = tuple(FieldIndex(sp_, c, x) for (sp_, c), x in zip(pat, sites))
            s += jet(z) * v / lay.factorial(z)
        total += abs(s)
    return abs(total - result.value) <= rtol * max(1.0, abs(result.value))


# ---------------------------------------------------------------------------
# adjoint maps used in the estimates


def theta_star(g: TestFunction, base: Layout) -> TestFunction:
    """(theta* g)_z = sum_{v forgets to z} (z!/v!) g_v; g lives on base.doubled()."""
    out: dict = defaultdict(int)
    for v, val in g.items():
        z = []
        for s in base.species:
            z.extend(FieldIndex(s.name, u.comp, u.site) for u in v if u.species == s.name)
            z.extend(FieldIndex(s.name, u.comp, u.site) for u in v if u.species == primed(s.name))
        z = tuple(z)
        out[z] += Fraction(base.factorial(z), g.layout.factorial(v)) * val
    return TestFunction(base, dict(out), g.p_N)


def sigma_star(g: TestFunction, xi: Mapping[FieldIndex, complex], s=1, m: int | None = None,
               max_length: int | None = None) -> TestFunction:
    """sum over boson suffixes z'' appended species-wise to z' in supp g.

    Full map (m is None): weight z!/(z'! z''!) s^|z''| xi^z''. Derivative of order m in s
    at s = 0: only |z''| = m with weight m! z!/(z'! z''!) xi^z''. Sequences longer
    than max_length are dropped.
    """
    lay = g.layout
    cap = max_length if max_length is not None else g.p_N
    if cap is None:
        raise ValueError("need a length cap")
    by_species: dict = defaultdict(list)
    for u, v in xi.items():
        if v != 0:
            by_species[u.species].append(u)
    bosons = [sp_.name for sp_ in lay.species if not sp_.fermion and by_species[sp_.name]]
    out: dict = defaultdict(int)
    for z1, val in g.items():
        room = cap - len(z1)
        if room < 0:
            continue
        lens_range = [range(room + 1)] * len(bosons)
        for lens in itertools.product(*lens_range):
            k = sum(lens)
            if k > room or (m is not None and k != m):
                continue
            choices = [itertools.product(by_species[name], repeat=L) for name, L in zip(bosons, lens)]
            for suffixes in itertools.product(*choices):
                suffix = tuple(u for part in suffixes for u in part)
                z = lay.concat(z1, suffix)
                coef = Fraction(lay.factorial(z), lay.factorial(z1) * lay.factorial(suffix))
                coef *= math.prod(xi[u] for u in suffix)
                coef *= math.factorial(k) if m is not None else s ** k
                out[z] += coef * val
    return TestFunction(lay, dict(out), g.p_N)


def covariance_test_function(layout: Layout, entries: Mapping) -> TestFunction:
    """The assembled covariance as a function on length-two sequences."""
    vals = {}
    for (a, b), c in entries.items():
        z, _ = layout.species_sort((a, b))
        if z == (a, b):
            vals[z] = c
    return TestFunction(layout, vals)


def covariance_star(g: TestFunction, entries: Mapping, A: int) -> TestFunction:
    """Adjoint of half the Laplacian: (C* g)_v = sum_{v = u o z} v!/(u! z!) C_(u2,u1) g_z.

    The kernel is read with its arguments swapped; this only matters for the
    antisymmetric fermion block, where the anti-derivations act in reverse order.
    """
    lay = g.layout
    out: dict = defaultdict(int)
    for (u1, u2), c in entries.items():
        u = (u2, u1)
        if u1.species != u2.species:
            raise ValueError("covariance couples different species")
        for z, val in g.items():
            v = lay.concat(u, z)
            if len(v) > A:
                continue
            out[v] += Fraction(lay.factorial(v), 2 * lay.factorial(z)) * c * val
    return TestFunction(lay, dict(out), g.p_N)


def expectation_star(g: TestFunction, target: Layout, C) -> TestFunction:
    """(E* g)_v = g_x E(psi^{y'}) for v = x o y' with y' a sequence of primed fermions.

    ``C`` is the covariance pair keyed by unprimed names; ``target`` is the doubled layout.
    """
    from .gaussian import fermion_expectation

    names = [primed(n) for n in C.fermion]
    Cp = C.primed()
    gens = [u for u in target.fermion_indices if u.species in names]
    cache: dict = {}

    def expect(y):
        key = tuple(y)
        if key not in cache:
            mono = NElement.monomial(target, y)
            cache[key] = fermion_expectation(mono, Cp).constant_term()
        return cache[key]

    ys = set()
    for q in range(0, len(gens) + 1, 2):
        for y in itertools.permutations(gens, q):
            ys.add(target.species_sort(y)[0])
    out: dict = defaultdict(int)
    for x, val in g.items():
        for y in ys:
            e = expect(y)
            if e == 0:
                continue
            v, sign = target.species_sort(tuple(x) + y)
            out[v] += sign * e * val
    return TestFunction(target, dict(out), g.p_N)


# ---------------------------------------------------------------------------
# comparison of norms


def rho_ratio(w_prime: Weight, w: Weight, n: int, p_N: int, fermion_counts: Mapping[str, int] | None = None,
              max_length: int | None = None) -> float:
    """2 sup_{r >= n} sup_{g in unit ball of Phi'^(r)} ||g||_{Phi^(r)}.

    For weights of the h-family with equal R and p_phi the inner sup is attained by a
    constant-like g and equals the largest product of ratios h'_s / h_s over species
    compositions of length r that respect the boson cap and the fermion counts.
    """
    w._same_shape(w_prime)
    fermion_counts = dict(fermion_counts or {})
    ratios = {s: w_prime.scale(s) / w.scale(s) for s in w.h if s in w_prime.h}
    bosons = [s for s in ratios if s not in fermion_counts]
    fermions = [s for s in ratios if s in fermion_counts]
    # 2 components per fermion species site
    limit = max_length if max_length is not None else p_N + sum(2 * v for v in fermion_counts.values())
    best = 0.0
    qb = max((ratios[s] for s in bosons), default=None)
    for r in range(n, limit + 1):
        for nf in range(0, r + 1):
            nb = r - nf
            if nb > p_N or (nb > 0 and qb is None):
                continue
            val = _best_fermion_product(nf, fermions, ratios, fermion_counts)
            if val is None:
                continue
            best = max(best, val * (qb ** nb if nb else 1.0))
    return 2.0 * best


def _best_fermion_product(nf, fermions, ratios, counts):
    if nf == 0:
        return 1.0
    slots = []
    for s in fermions:
        slots.extend([ratios[s]] * (2 * counts[s]))
    if nf > len(slots):
        return None
    slots.sort(reverse=True)
    return math.prod(slots[:nf])


# ---------------------------------------------------------------------------
# localized norms of fields


def localized_phi_norm(phi_values: np.ndarray, X: Iterable[int], w_scale: float, p_phi: int, torus: Torus,
                       poly_degree: int | None = None, K: int = 64) -> tuple[float, float]:
    """inf over modifications of phi off X (and, optionally, a polynomial on X) of the Phi norm.

    phi_values is a complex array over sites. Returns (lower, upper): equal for real data or
    p_phi = 0 without polynomial freedom; otherwise a K-gon bracket.
    """
    X = sorted(set(X))
    phi_values = np.asarray(phi_values, dtype=complex).reshape(-1)
    if not X:
        return 0.0, 0.0
    if poly_degree is None and p_phi == 0:
        v = float(np.max(np.abs(phi_values[X]))) / w_scale
        return v, v
    n = torus.volume
    real = bool(np.all(phi_values.imag == 0))
    alphas = multiindices(torus.d, p_phi)
    ops = [(torus.difference_matrix(a), torus.R ** a.order / w_scale) for a in alphas]
    # variables: h (n reals, or 2n), polynomial coefficients, t
    basis = _poly_basis(torus, X, poly_degree) if poly_degree is not None else np.zeros((n, 0))
    npoly = basis.shape[1]
    free = [x for x in range(n) if x not in set(X)]
    # h = phi on X minus polynomial; free elsewhere
    # parametrise: h = E phi + S u - B c where S selects free sites, B is the polynomial on X
    S = np.zeros((n, len(free)))
    for j, x in enumerate(free):
        S[x, j] = 1.0
    P = np.zeros((n, npoly))
    for i, x in enumerate(X):
        P[x] = basis[i]
    base = np.zeros(n, dtype=complex)
    base[X] = phi_values[X]
    M = np.hstack([S, -P])  # real linear map of the free real parameters
    nv = M.shape[1]
    if real:
        dirs = [(1.0, 0.0), (-1.0, 0.0)]
        factor = 1.0
    else:
        ang = 2 * math.pi * np.arange(K) / K
        dirs = list(zip(np.cos(ang), np.sin(ang)))
        factor = math.cos(math.pi / K)
    A_rows = []
    b_rows = []
    for D, winv in ops:
        DM = D @ M
        Db = D @ base
        for ck, sk in dirs:
            # Re(e^{-i theta} (D h)) * winv <= t, h = base + M (a + i b)
            if real:
                A_rows.append(np.hstack([ck * winv * DM, -np.ones((n, 1))]))
            else:
                A_rows.append(np.hstack([ck * winv * DM, sk * winv * DM, -np.ones((n, 1))]))
            b_rows.append(-winv * (ck * Db.real + sk * Db.imag))
    A = np.vstack(A_rows)
    b = np.concatenate(b_rows)
    nx = nv if real else 2 * nv
    cost = np.zeros(nx + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * nx + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    t = float(res.fun)
    if real:
        return t, t
    return t, t / factor


def _poly_basis(torus: Torus, X, degree: int) -> np.ndarray:
    """Monomials of total degree <= degree in coordinates unwrapped relative to X's first site."""
    coords = _unwrapped_coords(torus, X)
    exps = [e for k in range(degree + 1) for e in _compositions(k, torus.d)]
    return np.array([[math.prod(c[i] ** e[i] for i in range(torus.d)) for e in exps] for c in coords], dtype=float)


def _compositions(k, d):
    if d == 1:
        yield (k,)
        return
    for i in range(k + 1):
        for rest in _compositions(k - i, d - 1):
            yield (i,) + rest


def _unwrapped_coords(torus: Torus, X) -> list[tuple[int, ...]]:
    """Coordinates of X in Z^d; X must miss at least one residue along every axis."""
    pts = [torus.coords(x) for x in X]
    out = [list(p) for p in pts]
    L = torus.period
    for axis in range(torus.d):
        vals = sorted({p[axis] for p in pts})
        if len(vals) == L:
            raise ValueError("set wraps around the torus; polynomial norm undefined")
        gap, i = max(((vals[(i + 1) % len(vals)] - vals[i]) % L or L, i) for i in range(len(vals)))
        start = vals[(i + 1) % len(vals)]
        for p in out:
            p[axis] = (p[axis] - start) % L
    return [tuple(p) for p in out]
