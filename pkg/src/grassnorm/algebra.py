"""Fermion monomials over boson polynomials.

An element is stored as a flat map ``(fermion monomial, boson monomial) -> coefficient``.
Fermion monomials are strictly increasing tuples of field indices under the layout's
total order; boson monomials are sorted tuples of ``(index, exponent)`` pairs.
With this canonical form the coefficient attached to a fermion monomial ``y`` is
exactly ``F_y`` in the expansion ``F = sum_y (1/y!) F_y psi^y``.
"""

from __future__ import annotations

import cmath
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple

from .lattice import Torus


class FieldIndex(NamedTuple):
    species: str
    comp: int  # 0 = field, 1 = conjugate copy (complex species) or component number (real species)
    site: int


@dataclass(frozen=True)
class Species:
    """A boson or fermion species.

    Complex species have two components (the field and its conjugate copy) which are
    independent coordinates. Real species have ``components`` real components.
    """

    name: str
    fermion: bool = False
    complex: bool = True
    components: int = 2

    def __post_init__(self):
        if self.complex and self.components != 2:
            object.__setattr__(self, "components", 2)
        if self.fermion and not self.complex:
            raise ValueError("fermion species must come in conjugate pairs")
        if self.components < 1:
            raise ValueError("a species needs at least one component")


def boson(name: str = "phi") -> Species:
    return Species(name, fermion=False, complex=True)


def real_boson(name: str, components: int = 1) -> Species:
    return Species(name, fermion=False, complex=False, components=components)


def fermion(name: str = "psi") -> Species:
    return Species(name, fermion=True, complex=True)


def primed(name: str) -> str:
    return name + "'"


def unprimed(name: str) -> str:
    return name[:-1] if name.endswith("'") else name


def is_primed(name: str) -> bool:
    return name.endswith("'")


@dataclass(frozen=True)
class Layout:
    """Species on a common set of sites, bosons listed before fermions."""

    species: tuple[Species, ...]
    n_sites: int
    torus: Torus | None = None

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if self.torus is not None and self.torus.volume != self.n_sites:
            raise ValueError("n_sites disagrees with torus volume")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ValueError("duplicate species names")
        seen_fermion = False
        for s in self.species:
            if s.fermion:
                seen_fermion = True
            elif seen_fermion:
                raise ValueError("boson species must precede fermion species")

    @classmethod
    def on_torus(cls, species, torus: Torus) -> "Layout":
        return cls(tuple(species), torus.volume, torus)

    @cached_property
    def rank(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.species)}

    @cached_property
    def by_name(self) -> dict[str, Species]:
        return {s.name: s for s in self.species}

    def key(self, idx: FieldIndex) -> tuple[int, int, int]:
        return (self.rank[idx.species], idx.comp, idx.site)

    def is_fermion(self, idx: FieldIndex) -> bool:
        return self.by_name[idx.species].fermion

    def check(self, idx: FieldIndex) -> FieldIndex:
        sp = self.by_name.get(idx.species)
        if sp is None:
            raise KeyError(f"unknown species {idx.species!r}")
        if not 0 <= idx.comp < sp.components or not 0 <= idx.site < self.n_sites:
            raise KeyError(f"index out of range: {idx}")
        return idx

    def indices(self, species: str | None = None, fermions: bool | None = None) -> list[FieldIndex]:
        out = []
        for sp in self.species:
            if species is not None and sp.name != species:
                continue
            if fermions is not None and sp.fermion != fermions:
                continue
            for c in range(sp.components):
                out.extend(FieldIndex(sp.name, c, x) for x in range(self.n_sites))
        return out

    @property
    def boson_indices(self) -> list[FieldIndex]:
        return self.indices(fermions=False)

    @property
    def fermion_indices(self) -> list[FieldIndex]:
        return self.indices(fermions=True)

    def doubled(self) -> "Layout":
        """Layout with a primed copy placed immediately after each species."""
        out = []
        for s in self.species:
            out.append(s)
            out.append(Species(primed(s.name), s.fermion, s.complex, s.components))
        return Layout(tuple(out), self.n_sites, self.torus)

    def without(self, names: Iterable[str]) -> "Layout":
        names = set(names)
        return Layout(tuple(s for s in self.species if s.name not in names), self.n_sites, self.torus)

    def is_species_ordered(self, z: Iterable[FieldIndex]) -> bool:
        ranks = [self.rank[u.species] for u in z]
        return all(a <= b for a, b in zip(ranks, ranks[1:]))

    def species_sort(self, z: Iterable[FieldIndex]) -> tuple[tuple[FieldIndex, ...], int]:
        """Stable sort by species; sign is the parity of the fermion transpositions used."""
        z = list(z)
        order = sorted(range(len(z)), key=lambda i: self.rank[z[i].species])
        ferm = [i for i in order if self.is_fermion(z[i])]
        return tuple(z[i] for i in order), permutation_sign(ferm)

    def factorial(self, z: Iterable[FieldIndex]) -> int:
        """z! = product over species of (length of the species subsequence)!"""
        counts: dict[str, int] = defaultdict(int)
        for u in z:
            counts[u.species] += 1
        return math.prod(math.factorial(c) for c in counts.values())

    def concat(self, a, b) -> tuple[FieldIndex, ...]:
        """Species-by-species concatenation of two species-ordered sequences."""
        out = []
        for sp in self.species:
            out.extend(u for u in a if u.species == sp.name)
            out.extend(u for u in b if u.species == sp.name)
        return tuple(out)


def permutation_sign(perm) -> int:
    """Sign of a permutation given as a sequence of distinct comparable items."""
    perm = list(perm)
    sign = 1
    seen = [False] * len(perm)
    pos = {v: i for i, v in enumerate(sorted(perm))}
    target = [pos[v] for v in perm]
    for i in range(len(target)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = target[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def sort_fermions(layout: Layout, seq) -> tuple[tuple[FieldIndex, ...], int]:
    """Sort a fermion sequence into a canonical monomial; sign 0 on repeated index."""
    seq = tuple(seq)
    if len(set(seq)) != len(seq):
        return (), 0
    keys = [layout.key(u) for u in seq]
    return tuple(sorted(seq, key=layout.key)), permutation_sign(keys)


def merge_bosons(layout: Layout, a, b) -> tuple[tuple[FieldIndex, int], ...]:
    exps: dict[FieldIndex, int] = dict(a)
    for u, e in b:
        exps[u] = exps.get(u, 0) + e
    return tuple(sorted(exps.items(), key=lambda t: layout.key(t[0])))


def boson_degree(bmono) -> int:
    return sum(e for _, e in bmono)


Coeff = int | Fraction | float | complex


class NElement:
    """An element of the algebra: boson polynomials attached to fermion monomials.

    ``truncation`` is None for exact polynomials. Exponentials of elements with boson
    dependence are only known up to a finite boson degree; that degree is recorded
    here and products drop terms beyond it.
    """

    __slots__ = ("layout", "terms", "truncation")

    def __init__(self, layout: Layout, terms: Mapping | None = None, truncation: int | None = None):
        self.layout = layout
        self.truncation = truncation
        clean = {}
        for k, c in (terms or {}).items():
            if c != 0 and (truncation is None or boson_degree(k[1]) <= truncation):
                clean[k] = c
        self.terms: dict = clean

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, layout: Layout) -> "NElement":
        return cls(layout)

    @classmethod
    def constant(cls, layout: Layout, c: Coeff) -> "NElement":
        return cls(layout, {((), ()): c})

    @classmethod
    def generator(cls, layout: Layout, idx: FieldIndex, c: Coeff = 1) -> "NElement":
        layout.check(idx)
        if layout.is_fermion(idx):
            return cls(layout, {((idx,), ()): c})
        return cls(layout, {((), ((idx, 1),)): c})

    @classmethod
    def monomial(cls, layout: Layout, seq, c: Coeff = 1) -> "NElement":
        """Product of the generators in ``seq`` in the given order, times c."""
        out = cls.constant(layout, c)
        for u in seq:
            out = out * cls.generator(layout, u)
        return out

    # basic structure ----------------------------------------------------
    def copy_with(self, terms, truncation="keep") -> "NElement":
        return NElement(self.layout, terms, self.truncation if truncation == "keep" else truncation)

    def __repr__(self):
        if not self.terms:
            return "NElement(0)"
        parts = []
        for (f, b), c in sorted(self.terms.items(), key=lambda t: self._sort_key(t[0])):
            name = "".join(_fmt(u) + (f"^{e}" if e > 1 else "") for u, e in b) + "".join(_fmt(u) for u in f)
            parts.append(f"{c}*{name}" if name else f"{c}")
        return "NElement(" + " + ".join(parts) + ")"

    def _sort_key(self, key):
        f, b = key
        return (len(f) + boson_degree(b), [self.layout.key(u) for u in f], [(self.layout.key(u), e) for u, e in b])

    def __eq__(self, other):
        if isinstance(other, (int, float, complex, Fraction)):
            other = NElement.constant(self.layout, other)
        if not isinstance(other, NElement):
            return NotImplemented
        return self.layout == other.layout and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def is_zero(self) -> bool:
        return not self.terms

    def _coerce(self, other) -> "NElement":
        if isinstance(other, NElement):
            if other.layout != self.layout:
                raise LayoutError("elements live on different layouts")
            return other
        return NElement.constant(self.layout, other)

    def _joint_truncation(self, other: "NElement"):
        caps = [c for c in (self.truncation, other.truncation) if c is not None]
        return min(caps) if caps else None

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0) + c
        return NElement(self.layout, terms, self._joint_truncation(other))

    __radd__ = __add__

    def __neg__(self):
        return self.copy_with({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, c: Coeff) -> "NElement":
        return self.copy_with({k: c * v for k, v in self.terms.items()})

    def __mul__(self, other):
        if not isinstance(other, NElement):
            return self.scale(other)
        other = self._coerce(other)
        cap = self._joint_truncation(other)
        lay = self.layout
        out: dict = defaultdict(int)
        for (f1, b1), c1 in self.terms.items():
            d1 = boson_degree(b1)
            for (f2, b2), c2 in other.terms.items():
                if cap is not None and d1 + boson_degree(b2) > cap:
                    continue
                f, sign = sort_fermions(lay, f1 + f2)
                if sign == 0:
                    continue
                out[(f, merge_bosons(lay, b1, b2))] += sign * c1 * c2
        return NElement(lay, out, cap)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, n: int):
        out = NElement.constant(self.layout, 1)
        for _ in range(n):
            out = out * self
        return out

    # views --------------------------------------------------------------
    def fermion_terms(self) -> dict[tuple, dict]:
        out: dict = defaultdict(dict)
        for (f, b), c in self.terms.items():
            out[f][b] = c
        return dict(out)

    def degree(self) -> int:
        return max((len(f) + boson_degree(b) for f, b in self.terms), default=0)

    def boson_degree(self) -> int:
        return max((boson_degree(b) for _, b in self.terms), default=0)

    def constant_term(self) -> Coeff:
        return self.terms.get(((), ()), 0)

    def variables(self) -> set[FieldIndex]:
        out = set()
        for f, b in self.terms:
            out.update(f)
            out.update(u for u, _ in b)
        return out

    def species_used(self) -> set[str]:
        return {u.species for u in self.variables()}

    def is_even(self) -> bool:
        return all(len(f) % 2 == 0 for f, _ in self.terms)

    def map_coefficients(self, fn) -> "NElement":
        return self.copy_with({k: fn(c) for k, c in self.terms.items()})

    def relayout(self, layout: Layout) -> "NElement":
        """Re-express on another layout containing every species used here."""
        terms: dict = defaultdict(int)
        for (f, b), c in self.terms.items():
            for u in f:
                layout.check(u)
            for u, _ in b:
                layout.check(u)
            f2, sign = sort_fermions(layout, f)
            b2 = tuple(sorted(b, key=lambda t: layout.key(t[0])))
            terms[(f2, b2)] += sign * c
        return NElement(layout, terms, self.truncation)

    # derivatives ----------------------------------------------------------
    def boson_derivative(self, xs: Iterable[FieldIndex] | FieldIndex) -> "NElement":
        if isinstance(xs, FieldIndex):
            xs = [xs]
        out = self
        for x in xs:
            terms: dict = defaultdict(int)
            for (f, b), c in out.terms.items():
                exps = dict(b)
                e = exps.get(x, 0)
                if e == 0:
                    continue
                if e == 1:
                    del exps[x]
                else:
                    exps[x] = e - 1
                terms[(f, tuple(sorted(exps.items(), key=lambda t: self.layout.key(t[0]))))] += e * c
            out = out.copy_with(terms, None if out.truncation is None else max(out.truncation - 1, 0))
        return out

    def fermion_derivative(self, u: FieldIndex) -> "NElement":
        """The anti-derivation i_u: removes psi_u with sign (-1)^(number of factors before it)."""
        terms: dict = defaultdict(int)
        for (f, b), c in self.terms.items():
            if u not in f:
                continue
            p = f.index(u)
            terms[(f[:p] + f[p + 1:], b)] += (-1) ** p * c
        return self.copy_with(terms)

    # evaluation -----------------------------------------------------------
    def evaluate_bosons(self, phi: Mapping[FieldIndex, Coeff]) -> "NElement":
        """Set every boson variable to its value in phi (missing values are 0)."""
        terms: dict = defaultdict(int)
        for (f, b), c in self.terms.items():
            v = c
            for u, e in b:
                v = v * phi.get(u, 0) ** e
                if v == 0:
                    break
            terms[(f, ())] += v
        return NElement(self.layout, terms)

    def set_zero(self, species: Iterable[str]) -> "NElement":
        """Drop every term involving the given species (fields set to 0)."""
        species = set(species)
        terms = {
            (f, b): c
            for (f, b), c in self.terms.items()
            if not any(u.species in species for u in f) and not any(u.species in species for u, _ in b)
        }
        return self.copy_with(terms)

    def shift(self, phi: Mapping[FieldIndex, Coeff]) -> "NElement":
        """F(phi + xi) written as a polynomial in the same boson variables."""
        if self.truncation is not None and any(v != 0 for v in phi.values()):
            raise ValueError("cannot re-centre a truncated Taylor jet")
        lay = self.layout
        out: dict = defaultdict(int)
        for (f, b), c in self.terms.items():
            partial = {(): c}
            for u, e in b:
                a = phi.get(u, 0)
                nxt: dict = defaultdict(int)
                for bm, v in partial.items():
                    for k in range(e + 1):
                        coef = math.comb(e, k) * (a ** (e - k) if e - k else 1)
                        if coef == 0:
                            continue
                        nxt[bm + (((u, k),) if k else ())] += v * coef
                partial = nxt
            for bm, v in partial.items():
                out[(f, tuple(sorted(bm, key=lambda t: lay.key(t[0]))))] += v
        return NElement(lay, out)

    def coefficient(self, z, phi: Mapping[FieldIndex, Coeff] | None = None) -> Coeff:
        """F_z(phi) for a species-ordered sequence z: boson derivatives, then fermion extraction."""
        lay = self.layout
        xs = [u for u in z if not lay.is_fermion(u)]
        ys = [u for u in z if lay.is_fermion(u)]
        mono, sign = sort_fermions(lay, ys)
        if sign == 0:
            return 0
        need = defaultdict(int)
        for x in xs:
            need[x] += 1
        total = 0
        for (f, b), c in self.terms.items():
            if f != mono:
                continue
            exps = dict(b)
            v = c
            for x, k in need.items():
                e = exps.get(x, 0)
                if e < k:
                    v = 0
                    break
                v = v * math.perm(e, k)
            if v == 0:
                continue
            for u, e in exps.items():
                rest = e - need.get(u, 0)
                if rest:
                    v = v * (phi.get(u, 0) if phi else 0) ** rest
                    if v == 0:
                        break
            total += v
        return sign * total


class LayoutError(ValueError):
    pass


def _fmt(u: FieldIndex) -> str:
    bar = "~" if u.comp else ""
    return f"{u.species}{bar}[{u.site}]"


# --------------------------------------------------------------------------
# substitution and exponentials


def substitute(F: NElement, images: Mapping[FieldIndex, NElement], target: Layout) -> NElement:
    """Algebra homomorphism fixing scalars and sending each generator to its image.

    Generators without an image map to themselves (re-expressed on ``target``).
    Fermion images must be odd so the homomorphism is well defined.
    """
    cache: dict = {}

    def image(u: FieldIndex) -> NElement:
        if u not in cache:
            cache[u] = images[u] if u in images else NElement.generator(target, u)
        return cache[u]

    powers: dict = {}

    def power(u, e):
        if (u, e) not in powers:
            powers[(u, e)] = image(u) ** e
        return powers[(u, e)]

    out = NElement.zero(target)
    for (f, b), c in F.terms.items():
        term = NElement.constant(target, c)
        for u, e in b:
            term = term * power(u, e)
        for u in f:
            term = term * image(u)
        out = out + term
    return out


def taylor_exponential(P: NElement, boson_cap: int | None = None) -> NElement:
    """exp(P) for P with even fermion monomials.

    The constant term is exponentiated exactly; the rest is nilpotent once boson
    degree above ``boson_cap`` is discarded, so the series is finite. The cap is
    recorded as the result's truncation (None when P has no boson dependence).
    """
    if not P.is_even():
        raise ValueError("odd fermion monomials present; exponential is ambiguous")
    c = P.constant_term()
    N = P - c
    has_bosons = any(b for _, b in N.terms)
    if has_bosons and boson_cap is None:
        raise ValueError("boson-dependent exponent needs a boson degree cap")
    cap = boson_cap if has_bosons else None
    if P.truncation is not None:
        cap = P.truncation if cap is None else min(cap, P.truncation)
    N = NElement(P.layout, N.terms, cap)
    out = NElement(P.layout, {((), ()): 1}, cap)
    power = NElement(P.layout, {((), ()): 1}, cap)
    n = 0
    while True:
        n += 1
        power = (power * N).scale(Fraction(1, n))
        if power.is_zero():
            break
        out = out + power
    if c != 0:
        out = out.scale(_exp(c))
    return NElement(P.layout, out.terms, cap)


def _exp(c):
    if isinstance(c, (int, Fraction)):
        return math.exp(c)
    return cmath.exp(c)


# --------------------------------------------------------------------------
# field assignments


def complex_field(layout: Layout, species: str, values) -> dict[FieldIndex, complex]:
    """phi_x = values[x] and the conjugate copy set to conj(values[x])."""
    out = {}
    for x, v in enumerate(values):
        v = complex(v)
        out[FieldIndex(species, 0, x)] = v
        out[FieldIndex(species, 1, x)] = v.conjugate()
    return out


def real_field(layout: Layout, species: str, values) -> dict[FieldIndex, float]:
    """values[c][x] for component c of a real species (or a flat list for one component)."""
    sp = layout.by_name[species]
    rows = values if sp.components > 1 else [values]
    return {FieldIndex(species, c, x): v for c, row in enumerate(rows) for x, v in enumerate(row)}


# --------------------------------------------------------------------------
# abstract product through coefficient maps


def star_coefficient(F1: NElement, F2: NElement, z, phi=None) -> Coeff:
    """(F1 * F2)_z as a sum over complementary subsequences of z with interleaving signs."""
    lay = F1.layout
    z = tuple(z)
    n = len(z)
    total = 0
    for r in range(n + 1):
        for left in itertools.combinations(range(n), r):
            lset = set(left)
            right = [i for i in range(n) if i not in lset]
            a = F1.coefficient([z[i] for i in left], phi)
            if a == 0:
                continue
            b = F2.coefficient([z[i] for i in right], phi)
            if b == 0:
                continue
            ferm = [i for i in list(left) + right if lay.is_fermion(z[i])]
            total += permutation_sign(ferm) * a * b
    return total


# --------------------------------------------------------------------------
# serialization


def to_records(F: NElement) -> list[dict]:
    """Canonical, sorted list of plain records; coefficients as exact strings when rational."""
    recs = []
    for (f, b), c in sorted(F.terms.items(), key=lambda t: F._sort_key(t[0])):
        re, im = (c.real, c.imag) if isinstance(c, complex) else (c, 0)
        recs.append(
            {
                "fermions": [list(u) for u in f],
                "bosons": [[list(u), e] for u, e in b],
                "re": _num_str(re),
                "im": _num_str(im),
            }
        )
    return recs


def from_records(layout: Layout, records: Iterable[dict], truncation: int | None = None) -> NElement:
    terms: dict = defaultdict(int)
    for rec in records:
        f = [layout.check(FieldIndex(str(s), int(c), int(x))) for s, c, x in rec.get("fermions", [])]
        b = [(layout.check(FieldIndex(str(s), int(c), int(x))), int(e)) for (s, c, x), e in rec.get("bosons", [])]
        mono, sign = sort_fermions(layout, f)
        if sign == 0:
            continue
        bm = merge_bosons(layout, (), b)
        re = _parse_num(rec.get("re", "0"))
        im = _parse_num(rec.get("im", "0"))
        c = re if im == 0 else complex(re, im)
        terms[(mono, bm)] += sign * c
    return NElement(layout, terms, truncation)


def _num_str(x) -> str:
    if isinstance(x, (int, Fraction)):
        return str(x)
    return repr(float(x))


def _parse_num(s):
    if isinstance(s, (int, float)):
        return s
    s = str(s).strip()
    try:
        return Fraction(s)
    except ValueError:
        return float(s)
