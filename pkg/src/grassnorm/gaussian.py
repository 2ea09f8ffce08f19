"""Gaussian expectations, the super-Laplacian, heat semigroup and the doubling map theta.

Conventions. A complex boson species with covariance C has E phibar_k phi_l = C[k][l]
and E phi phi = E phibar phibar = 0. A conjugate fermion pair species with covariance C
has action S = sum_kl A[k][l] psi_k psibar_l with A = C^-1, normalisation det C, and
E psibar_k psi_l = C[k][l]. The assembled fermion block used by the Laplacian is
fixed so that E psi_u psi_v = -Cf[u, v]; it equals minus the inverse of the
antisymmetric action matrix (see `CovariancePair.fermion_entries`).
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .algebra import (
    FieldIndex,
    Layout,
    NElement,
    is_primed,
    permutation_sign,
    primed,
    substitute,
    taylor_exponential,
    unprimed,
)
from .lattice import Torus

# ---------------------------------------------------------------------------
# small exact linear algebra (works for Fraction, int, float, complex entries)


def as_matrix(rows) -> tuple[tuple, ...]:
    if isinstance(rows, np.ndarray):
        rows = rows.tolist()
    return tuple(tuple(r) for r in rows)


def is_exact(M) -> bool:
    return all(isinstance(v, (int, Fraction)) for row in M for v in row)


def determinant(M) -> Fraction | float | complex:
    """Gaussian elimination; exact for rational entries."""
    n = len(M)
    if n == 0:
        return 1
    a = [list(r) for r in M]
    exact = is_exact(M)
    if exact:
        a = [[Fraction(v) for v in r] for r in a]
    det = Fraction(1) if exact else 1.0
    for col in range(n):
        if exact:
            piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        else:
            piv = max(range(col, n), key=lambda r: abs(a[r][col]))
            if a[piv][col] == 0:
                piv = None
        if piv is None:
            return 0 * det
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            det = -det
        det *= a[col][col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            if f != 0:
                for c in range(col, n):
                    a[r][c] -= f * a[col][c]
    return det


def inverse(M) -> tuple[tuple, ...]:
    n = len(M)
    if not is_exact(M):
        return as_matrix(np.linalg.inv(np.array(M, dtype=complex if _has_complex(M) else float)))
    a = [[Fraction(v) for v in r] + [Fraction(int(i == j)) for j in range(n)] for i, r in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("singular matrix")
        a[col], a[piv] = a[piv], a[col]
        p = a[col][col]
        a[col] = [v / p for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return tuple(tuple(r[n:]) for r in a)


def _has_complex(M) -> bool:
    return any(isinstance(v, complex) for row in M for v in row)


def is_symmetric(M, rtol: float = 1e-12) -> bool:
    n = len(M)
    if any(len(r) != n for r in M):
        return False
    exact = is_exact(M)
    scale = max((abs(v) for r in M for v in r), default=0)
    for i in range(n):
        for j in range(i + 1, n):
            if exact:
                if M[i][j] != M[j][i]:
                    return False
            elif abs(M[i][j] - M[j][i]) > rtol * scale:
                return False
    return True


def is_positive_definite(M) -> bool:
    if is_exact(M):
        return all(determinant([r[:k] for r in M[:k]]) > 0 for k in range(1, len(M) + 1))
    return bool(np.all(np.linalg.eigvalsh(np.array(M, dtype=float)) > 0))


def matrix_add(A, B):
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(A, B))


def matrix_scale(A, s):
    return tuple(tuple(s * x for x in r) for r in A)


# ---------------------------------------------------------------------------
# covariance generators


def identity_covariance(n: int):
    return tuple(tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n))


def exp_decay_covariance(n: int, kappa, torus: Torus | None = None):
    """kappa^{|x-y|} with the (periodic, when a torus is given) l1 distance."""
    def dist(x, y):
        if torus is None:
            return abs(x - y)
        total = 0
        for a, b in zip(torus.coords(x), torus.coords(y)):
            d = abs(a - b)
            total += min(d, torus.period - d)
        return total

    return tuple(tuple(kappa ** dist(x, y) for y in range(n)) for x in range(n))


# ---------------------------------------------------------------------------


class CovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class CovariancePair:
    """Boson and fermion covariance matrices keyed by the species they integrate.

    Boson matrices are n x n over sites for complex species and (c n) x (c n) over
    (component, site) for real species with c components. Fermion matrices are n x n
    over the sites of a conjugate pair species. ``external`` lists (species, site)
    pairs that take no part in the integration (their rows and columns are zero).
    """

    boson: Mapping[str, tuple] = field(default_factory=dict)
    fermion: Mapping[str, tuple] = field(default_factory=dict)
    external: frozenset = frozenset()
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "boson", {k: as_matrix(v) for k, v in self.boson.items()})
        object.__setattr__(self, "fermion", {k: as_matrix(v) for k, v in self.fermion.items()})
        object.__setattr__(self, "external", frozenset(self.external))
        if not self.validate:
            return
        for name, C in self.boson.items():
            if not is_symmetric(C):
                raise CovarianceError(f"boson covariance for {name!r} is not symmetric")
            if not is_positive_definite(C):
                raise CovarianceError(f"boson covariance for {name!r} is not positive definite")
        for name, C in self.fermion.items():
            if not is_symmetric(C):
                raise CovarianceError(f"fermion covariance for {name!r} is not symmetric")
            if determinant(C) == 0:
                raise CovarianceError(f"fermion covariance for {name!r} is singular")

    @classmethod
    def supersymmetric(cls, C, boson: str = "phi", fermion: str = "psi") -> "CovariancePair":
        return cls({boson: C}, {fermion: C})

    def is_supersymmetric(self) -> bool:
        return len(self.boson) == len(self.fermion) and sorted(self.boson.values()) == sorted(self.fermion.values())

    def species(self) -> set[str]:
        return set(self.boson) | set(self.fermion)

    def renamed(self, fn) -> "CovariancePair":
        return CovariancePair(
            {fn(k): v for k, v in self.boson.items()},
            {fn(k): v for k, v in self.fermion.items()},
            frozenset((fn(s), x) for s, x in self.external),
            validate=False,
        )

    def primed(self) -> "CovariancePair":
        return self.renamed(primed)

    def unprimed(self) -> "CovariancePair":
        return self.renamed(unprimed)

    def scaled(self, t) -> "CovariancePair":
        return CovariancePair(
            {k: matrix_scale(v, t) for k, v in self.boson.items()},
            {k: matrix_scale(v, t) for k, v in self.fermion.items()},
            self.external,
            validate=False,
        )

    def __add__(self, other: "CovariancePair") -> "CovariancePair":
        if set(self.boson) != set(other.boson) or set(self.fermion) != set(other.fermion):
            raise CovarianceError("covariances act on different species")
        return CovariancePair(
            {k: matrix_add(v, other.boson[k]) for k, v in self.boson.items()},
            {k: matrix_add(v, other.fermion[k]) for k, v in self.fermion.items()},
            self.external | other.external,
        )

    def _live(self, species: str, site: int) -> bool:
        return (species, site) not in self.external

    def boson_entries(self, layout: Layout) -> dict[tuple[FieldIndex, FieldIndex], object]:
        """Weights K[a, b] of the boson Laplacian sum_ab K[a, b] d_a d_b."""
        out = {}
        n = layout.n_sites
        for name, C in self.boson.items():
            sp = layout.by_name[name]
            if sp.complex:
                for k in range(n):
                    for l in range(n):
                        c = C[k][l]
                        if c == 0 or not (self._live(name, k) and self._live(name, l)):
                            continue
                        out[(FieldIndex(name, 1, k), FieldIndex(name, 0, l))] = c
                        out[(FieldIndex(name, 0, l), FieldIndex(name, 1, k))] = c
            else:
                for i in range(sp.components * n):
                    for j in range(sp.components * n):
                        c = C[i][j]
                        a, b = divmod(i, n), divmod(j, n)
                        if c == 0 or not (self._live(name, a[1]) and self._live(name, b[1])):
                            continue
                        out[(FieldIndex(name, a[0], a[1]), FieldIndex(name, b[0], b[1]))] = c
        return out

    def fermion_entries(self, layout: Layout) -> dict[tuple[FieldIndex, FieldIndex], object]:
        """Assembled fermion block: Cf[psibar_k, psi_l] = -C[k][l], Cf[psi_k, psibar_l] = C[l][k].

        With this sign E psibar_k psi_l = +C[k][l] through exp(Laplacian / 2), in
        agreement with direct Grassmann integration.
        """
        out = {}
        n = layout.n_sites
        for name, C in self.fermion.items():
            for k in range(n):
                for l in range(n):
                    c = C[k][l]
                    if c == 0 or not (self._live(name, k) and self._live(name, l)):
                        continue
                    out[(FieldIndex(name, 1, k), FieldIndex(name, 0, l))] = -c
                    out[(FieldIndex(name, 0, l), FieldIndex(name, 1, k))] = c
        return out

    def action_inverse_entries(self, layout: Layout) -> dict:
        """Inverse of the antisymmetric fermion action matrix; the kernel of integration by parts."""
        return {k: -v for k, v in self.fermion_entries(layout).items()}

    def entries(self, layout: Layout) -> dict:
        out = dict(self.boson_entries(layout))
        out.update(self.fermion_entries(layout))
        return out


# ---------------------------------------------------------------------------
# fermionic integration


def grassmann_integral(F: NElement, order: list[FieldIndex]) -> NElement:
    """Top-coefficient extraction: the coefficient G of G * psi^order, for G free of `order`.

    `order` must list every generator of the species it mentions exactly once.
    """
    lay = F.layout
    species = {u.species for u in order}
    full = {u for u in lay.fermion_indices if u.species in species}
    if len(set(order)) != len(order) or set(order) != full:
        raise ValueError("integration order must enumerate every generator of the integrated species once")
    oset = set(order)
    terms: dict = defaultdict(int)
    for (f, b), c in F.terms.items():
        if not oset.issubset(f):
            continue
        rest = tuple(u for u in f if u not in oset)
        target = list(rest) + list(order)
        sign = permutation_sign([lay.key(u) for u in target])
        terms[(rest, b)] += sign * c
    return NElement(lay, terms, F.truncation)


def pair_order(name: str, n: int) -> list[FieldIndex]:
    """psibar_0, psi_0, psibar_1, psi_1, ..."""
    out = []
    for k in range(n):
        out.append(FieldIndex(name, 1, k))
        out.append(FieldIndex(name, 0, k))
    return out


def fermion_expectation(F: NElement, C: CovariancePair, method: str = "determinant") -> NElement:
    """Integrate the fermion species of C. Two independent routes must agree."""
    out = F
    for name, M in C.fermion.items():
        if method == "determinant":
            out = _fermion_expectation_det(out, name, M, C)
        elif method == "grassmann":
            out = _fermion_expectation_grassmann(out, name, M, C)
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def _fermion_expectation_det(F, name, M, C):
    lay = F.layout
    terms: dict = defaultdict(int)
    cache: dict = {}
    for (f, b), c in F.terms.items():
        # external generators are not integrated and stay in `rest`
        ints = [u for u in f if u.species == name and C._live(name, u.site)]
        bars = sorted(u.site for u in ints if u.comp == 1)
        plain = sorted(u.site for u in ints if u.comp == 0)
        if len(bars) != len(plain):
            continue
        iset = set(ints)
        rest = tuple(u for u in f if u not in iset)
        paired = []
        for k, l in zip(bars, plain):
            paired += [FieldIndex(name, 1, k), FieldIndex(name, 0, l)]
        sign = permutation_sign([lay.key(u) for u in list(rest) + paired])
        key = (tuple(bars), tuple(plain))
        if key not in cache:
            cache[key] = determinant([[M[k][l] for l in plain] for k in bars])
        J = cache[key]
        if J != 0:
            terms[(rest, b)] += sign * c * J
    return NElement(lay, terms, F.truncation)


def _fermion_expectation_grassmann(F, name, M, C):
    lay = F.layout
    n = lay.n_sites
    live = [k for k in range(n) if C._live(name, k)]
    sub = tuple(tuple(M[k][l] for l in live) for k in live)
    A = inverse(sub)
    S = NElement.zero(lay)
    for i, k in enumerate(live):
        for j, l in enumerate(live):
            if A[i][j] != 0:
                S = S + NElement.monomial(lay, [FieldIndex(name, 0, k), FieldIndex(name, 1, l)], A[i][j])
    weight = taylor_exponential(-S)
    order = []
    for k in live:
        order += [FieldIndex(name, 1, k), FieldIndex(name, 0, k)]
    # external generators of this species are not integrated; hide them from the order check
    G = weight * F
    oset = set(order)
    terms: dict = defaultdict(int)
    for (f, b), c in G.terms.items():
        if not oset.issubset(f):
            continue
        rest = tuple(u for u in f if u not in oset)
        sign = permutation_sign([lay.key(u) for u in list(rest) + order])
        terms[(rest, b)] += sign * c
    return NElement(lay, terms, F.truncation).scale(determinant(sub))


# ---------------------------------------------------------------------------
# Laplacian, heat semigroup, bosonic and combined expectations


def laplacian(F: NElement, C: CovariancePair, part: str = "both") -> NElement:
    """sum_ab K[a,b] d_a d_b F + sum_uv Cf[u,v] i_u i_v F over the species of C."""
    lay = F.layout
    out = NElement.zero(lay)
    if part in ("both", "boson"):
        inner: dict = {}
        for (a, b), w in C.boson_entries(lay).items():
            if b not in inner:
                inner[b] = F.boson_derivative(b)
            if inner[b].is_zero():
                continue
            out = out + inner[b].boson_derivative(a).scale(w)
    if part in ("both", "fermion"):
        inner = {}
        for (u, v), w in C.fermion_entries(lay).items():
            if v not in inner:
                inner[v] = F.fermion_derivative(v)
            if inner[v].is_zero():
                continue
            out = out + inner[v].fermion_derivative(u).scale(w)
    return NElement(lay, out.terms, F.truncation)


def heat_semigroup(F: NElement, C: CovariancePair, t=1, part: str = "both") -> NElement:
    """exp(t Laplacian / 2) F; the series stops because the Laplacian lowers degree by 2."""
    if F.truncation is not None:
        raise ValueError("heat semigroup needs an exact polynomial")
    out = F
    term = F
    n = 0
    while True:
        n += 1
        term = laplacian(term, C, part).scale(Fraction(1, 2 * n) * t if isinstance(t, (int, Fraction)) else t / (2 * n))
        if term.is_zero():
            return out
        out = out + term


def boson_expectation(F: NElement, C: CovariancePair) -> NElement:
    """Apply exp(Laplacian_b / 2) and then set the integrated boson fields to zero."""
    if not C.boson:
        return F
    return heat_semigroup(F, C, 1, part="boson").set_zero(C.boson)


def combined_expectation(F: NElement, C: CovariancePair, method: str = "determinant") -> NElement:
    return boson_expectation(fermion_expectation(F, C, method), C)


# ---------------------------------------------------------------------------
# theta and progressive integration


def theta(F: NElement, t=1, external: Iterable[tuple[str, int]] = ()) -> NElement:
    """phi -> phi + t phi', psi -> psi + t psi' on the doubled layout; external sites keep primed part 0."""
    lay = F.layout
    target = lay.doubled()
    external = set(external)
    images = {}
    for u in lay.indices():
        img = NElement.generator(target, u)
        if (u.species, u.site) not in external and t != 0:
            img = img + NElement.generator(target, FieldIndex(primed(u.species), u.comp, u.site), t)
        images[u] = img
    return NElement(target, substitute(F, images, target).terms, F.truncation)


def restrict(F: NElement, layout: Layout) -> NElement:
    """Move an element to a sub-layout; fails if it uses species outside it."""
    missing = F.species_used() - set(layout.rank)
    if missing:
        raise ValueError(f"element still depends on {sorted(missing)}")
    return F.relayout(layout)


def expect_theta(F: NElement, C: CovariancePair, t=1, method: str = "determinant") -> NElement:
    """E_C theta F, returned on F's layout. C is keyed by the unprimed species names."""
    G = theta(F, t, C.external)
    E = combined_expectation(G, C.primed(), method)
    return restrict(E, F.layout)


def coefficient_residual(A: NElement, B: NElement) -> float:
    diff = A - B
    return max((abs(c) for c in diff.terms.values()), default=0)


def convolution_check(F: NElement, C1: CovariancePair, C2: CovariancePair):
    """Both sides of E_{C2} theta E_{C1} theta F = E_{C1+C2} theta F; returns (equal, residual)."""
    lhs = expect_theta(expect_theta(F, C1), C2)
    rhs = expect_theta(F, C1 + C2)
    res = coefficient_residual(lhs, rhs)
    return res == 0 or (not _exact(lhs, rhs) and res < 1e-10), res


def _exact(*els) -> bool:
    return all(isinstance(c, (int, Fraction)) for e in els for c in e.terms.values())


def factorisation_check(F1: NElement, F2: NElement, C: CovariancePair, X: set[int], Y: set[int]) -> bool:
    """E(F1 F2) = E(F1) E(F2) when F1 only sees integrated fields on X, F2 on Y, and C couples neither."""
    integrated = C.species()
    for F, S in ((F1, X), (F2, Y)):
        for u in F.variables():
            if u.species in integrated and u.site not in S:
                raise ValueError("element depends on integrated fields outside its set")
    for M in list(C.boson.values()) + list(C.fermion.values()):
        n = len(M)
        for x in X:
            for y in Y:
                if x < n and y < n and M[x][y] != 0:
                    raise ValueError("covariance couples the two sets")
    lhs = combined_expectation(F1 * F2, C)
    rhs = combined_expectation(F1, C) * combined_expectation(F2, C)
    return coefficient_residual(lhs, rhs) == 0
