"""Subgroups, series, abelian invariants and quotients of pc groups.

Subgroups are stored as induced generating sequences: a list of elements
with strictly increasing leading indices, each with leading exponent 1,
kept in reduced echelon form (every lead has zero entries at the positions
of the other leads).  Sifting an element against such a sequence zeroes its
lead coordinates by left multiplication; membership, coordinates, canonical
coset representatives and transversals all come from that.  The chain
subgroups G_i = <g_i, ..., g_n> are normal here, so sifting never touches
coordinates below the current position and the echelon form is canonical:
two subgroups are equal iff their sequences are byte-identical.

Abelian type invariants are returned as descending tuples of 3-powers,
e.g. (9, 3), computed from integer relation matrices via Smith normal form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import (
    AbelianizationTypeError,
    BudgetError,
    InputError,
    NotNormalError,
)
from . import pcgroup
from .pcgroup import PcPresentation, identity, inverse, multiply, power

__all__ = [
    "Subgroup",
    "SeriesData",
    "StandardLattice",
    "subgroup_closure",
    "trivial_subgroup",
    "full_group",
    "normal_closure",
    "derived_subgroup",
    "lower_central_series",
    "exponent_p_central_series",
    "p_class",
    "group_series",
    "frattini_subgroup",
    "smith_normal_form",
    "abelian_quotient_invariants",
    "subgroup_ati",
    "quotient_presentation",
    "quotient_with_map",
    "standard_subgroup_lattice",
    "right_transversal",
    "format_ati",
    "parse_ati",
    "ati_dominates",
]

P = 3


# ---------------------------------------------------------------------------
# subgroups

@dataclass(frozen=True, eq=False)
class Subgroup:
    """Subgroup of a pc group in reduced echelon form."""

    pres: PcPresentation
    igs: tuple  # elements with ascending leads, lead exponent 1, reduced

    def __post_init__(self):
        object.__setattr__(
            self, "leads", tuple(_lead(u) for u in self.igs)
        )

    @property
    def order(self):
        return P ** len(self.igs)

    @property
    def index(self):
        return P ** (self.pres.ngens - len(self.igs))

    def key(self):
        return self.igs

    def __eq__(self, other):
        return isinstance(other, Subgroup) and self.igs == other.igs \
            and self.pres.pc_key() == other.pres.pc_key()

    def __hash__(self):
        return hash(self.igs)

    def contains(self, u):
        return not any(self.reduce(u))

    def contains_subgroup(self, other):
        return all(self.contains(u) for u in other.igs)

    def reduce(self, u):
        """Canonical representative of the coset (self)u."""
        pres = self.pres
        for pos, lead in zip(self.leads, self.igs):
            c = u[pos]
            if c:
                u = multiply(power(lead, -c, pres), u, pres)
        return u

    def express(self, u):
        """Coordinates of u over the igs; raises if u is not a member."""
        pres = self.pres
        coords = []
        for pos, lead in zip(self.leads, self.igs):
            c = u[pos]
            coords.append(c)
            if c:
                u = multiply(power(lead, -c, pres), u, pres)
        if any(u):
            raise InputError("element is not in the subgroup")
        return tuple(coords)

    def elements(self, max_size=P ** 12):
        if self.order > max_size:
            raise BudgetError("subgroup too large to enumerate")
        pres = self.pres
        out = []
        for exps in itertools.product(range(P), repeat=len(self.igs)):
            u = identity(pres)
            for lead, e in zip(self.igs, exps):
                if e:
                    u = multiply(u, power(lead, e, pres), pres)
            out.append(u)
        return out

    def is_normal(self):
        pres = self.pres
        n = pres.ngens
        for lead in self.igs:
            for j in range(n):
                g = _gen(n, j)
                if not self.contains(pcgroup.conjugate(lead, g, pres)):
                    return False
        return True

    def __repr__(self):
        return f"Subgroup(order=3^{len(self.igs)} of {self.pres.name})"


def _lead(u):
    for i, e in enumerate(u):
        if e:
            return i
    raise InputError("identity element has no lead")


def _gen(n, i, e=1):
    v = bytearray(n)
    v[i] = e
    return bytes(v)


class _Echelon:
    """Mutable echelon accumulator used while closing subgroups."""

    def __init__(self, pres):
        self.pres = pres
        self.by_pos = {}

    def sift(self, u):
        pres = self.pres
        for pos in sorted(self.by_pos):
            c = u[pos]
            if c:
                u = multiply(power(self.by_pos[pos], -c, pres), u, pres)
        return u

    def add(self, u):
        """Sift u and insert the residue as a new lead. True if inserted."""
        u = self.sift(u)
        if not any(u):
            return False
        pres = self.pres
        pos = _lead(u)
        if u[pos] == 2:
            u = multiply(u, u, pres)
        assert u[pos] == 1
        self.by_pos[pos] = u
        return True

    def finish(self):
        pres = self.pres
        positions = sorted(self.by_pos)
        leads = [self.by_pos[p] for p in positions]
        # reduce to canonical form: clear lead coordinates inside each lead
        for a in range(len(leads)):
            changed = True
            while changed:
                changed = False
                for b in range(a + 1, len(leads)):
                    c = leads[a][positions[b]]
                    if c:
                        leads[a] = multiply(
                            power(leads[b], -c, pres), leads[a], pres
                        )
                        changed = True
        return Subgroup(pres=pres, igs=tuple(leads))


def subgroup_closure(gens, pres):
    """Subgroup generated by the given elements."""
    ech = _Echelon(pres)
    for g in gens:
        if any(g):
            ech.add(g)
    changed = True
    while changed:
        changed = False
        leads = list(ech.by_pos.values())
        for a in leads:
            if ech.add(pcgroup.power(a, P, pres)):
                changed = True
        leads = list(ech.by_pos.values())
        for a in leads:
            for b in leads:
                if ech.add(multiply(a, b, pres)):
                    changed = True
    return ech.finish()


def trivial_subgroup(pres):
    return Subgroup(pres=pres, igs=())


def full_group(pres):
    n = pres.ngens
    return subgroup_closure([_gen(n, i) for i in range(n)], pres)


def normal_closure(gens, pres):
    """Smallest normal subgroup containing the given elements."""
    ech = _Echelon(pres)
    n = pres.ngens
    for g in gens:
        if any(g):
            ech.add(g)
    changed = True
    while changed:
        changed = False
        leads = list(ech.by_pos.values())
        for a in leads:
            if ech.add(pcgroup.power(a, P, pres)):
                changed = True
            for j in range(n):
                if ech.add(pcgroup.conjugate(a, _gen(n, j), pres)):
                    changed = True
        leads = list(ech.by_pos.values())
        for a in leads:
            for b in leads:
                if ech.add(multiply(a, b, pres)):
                    changed = True
    return ech.finish()


def derived_subgroup(pres):
    n = pres.ngens
    comms = [
        pcgroup.commutator(_gen(n, j), _gen(n, i), pres)
        for j in range(n)
        for i in range(j)
    ]
    return normal_closure(comms, pres)


def _commutator_subgroup(A, B, pres):
    gens = [
        pcgroup.commutator(a, b, pres) for a in A.igs for b in B.igs
    ]
    return normal_closure(gens, pres)


def lower_central_series(pres):
    """gamma_1 = G, gamma_{k+1} = [gamma_k, G], down to the identity."""
    G = full_group(pres)
    series = [G]
    while series[-1].igs:
        nxt = _commutator_subgroup(series[-1], G, pres)
        if len(nxt.igs) >= len(series[-1].igs):
            raise InputError("lower central series does not descend")
        series.append(nxt)
    return tuple(series)


def exponent_p_central_series(pres):
    """P_0 = G, P_{k+1} = [P_k, G] P_k^3."""
    G = full_group(pres)
    series = [G]
    while series[-1].igs:
        cur = series[-1]
        gens = [
            pcgroup.commutator(a, b, pres) for a in cur.igs for b in G.igs
        ] + [pcgroup.power(a, P, pres) for a in cur.igs]
        nxt = normal_closure(gens, pres)
        if len(nxt.igs) >= len(cur.igs):
            raise InputError("exponent-3 central series does not descend")
        series.append(nxt)
    return tuple(series)


def p_class(pres):
    return len(exponent_p_central_series(pres)) - 1


def frattini_subgroup(pres):
    return exponent_p_central_series(pres)[1] if pres.ngens else trivial_subgroup(pres)


@dataclass(frozen=True)
class SeriesData:
    lower_central: tuple
    nilpotency_class: int
    coclass: int
    derived_length: int

    @property
    def metabelian(self):
        return self.derived_length <= 2


def group_series(pres):
    lcs = lower_central_series(pres)
    cls = len(lcs) - 1
    # derived series
    length = 0
    cur = full_group(pres)
    while cur.igs:
        sub = _commutator_subgroup(cur, cur, pres)
        length += 1
        if len(sub.igs) >= len(cur.igs):
            raise InputError("derived series does not descend")
        cur = sub
    return SeriesData(
        lower_central=lcs,
        nilpotency_class=cls,
        coclass=pres.ngens - cls,
        derived_length=length,
    )


def right_transversal(H, max_size=P ** 10):
    """Canonical representatives of the cosets Hg, in lexicographic order."""
    pres = H.pres
    n = pres.ngens
    if H.index > max_size:
        raise BudgetError("transversal too large")
    free = [i for i in range(n) if i not in H.leads]
    reps = []
    for exps in itertools.product(range(P), repeat=len(free)):
        v = bytearray(n)
        for i, e in zip(free, exps):
            v[i] = e
        reps.append(bytes(v))
    return reps


# ---------------------------------------------------------------------------
# Smith normal form and abelian invariants

def smith_normal_form(mat):
    """Elementary divisors of an integer matrix, ascending, d1 | d2 | ...

    Returns one entry per column; columns beyond the rank give 0.
    """
    if not mat:
        return []
    A = [list(map(int, row)) for row in mat]
    rows, cols = len(A), len(A[0])
    divisors = []
    t = 0
    while t < min(rows, cols):
        piv = None
        for i in range(t, rows):
            for j in range(t, cols):
                if A[i][j] and (piv is None or abs(A[i][j]) < abs(A[piv[0]][piv[1]])):
                    piv = (i, j)
        if piv is None:
            break
        i0, j0 = piv
        A[t], A[i0] = A[i0], A[t]
        for row in A:
            row[t], row[j0] = row[j0], row[t]
        while True:
            # reduce the pivot column; a remainder becomes the smaller pivot
            moved = False
            for i in range(t + 1, rows):
                if A[i][t]:
                    q = A[i][t] // A[t][t]
                    for j in range(t, cols):
                        A[i][j] -= q * A[t][j]
                    if A[i][t]:
                        A[t], A[i] = A[i], A[t]
                        moved = True
                        break
            if moved:
                continue
            for j in range(t + 1, cols):
                if A[t][j]:
                    q = A[t][j] // A[t][t]
                    for row in A:
                        row[j] -= q * row[t]
                    if A[t][j]:
                        for row in A:
                            row[t], row[j] = row[j], row[t]
                        moved = True
                        break
            if moved:
                continue
            # row and column are clear; enforce divisibility of the block
            bad = None
            for i in range(t + 1, rows):
                for j in range(t + 1, cols):
                    if A[i][j] % A[t][t]:
                        bad = i
                        break
                if bad is not None:
                    break
            if bad is None:
                break
            for j in range(t, cols):
                A[t][j] += A[bad][j]
        divisors.append(abs(A[t][t]))
        t += 1
    divisors += [0] * (cols - len(divisors))
    return divisors


def _abelianized_rows(pres):
    n = pres.ngens
    rows = []
    for i in range(n):
        row = [0] * n
        row[i] = P
        for m, e in enumerate(pres.power[i]):
            row[m] -= e
        rows.append(row)
    for j in range(n):
        for i in range(j):
            c = pres.comm[j][i]
            if any(c):
                rows.append([int(e) for e in c])
    return rows


def _invariants_from_rows(rows, ncols):
    if ncols == 0:
        return ()
    if not rows:
        rows = [[0] * ncols]
    divs = smith_normal_form(rows)
    out = []
    for d in divs:
        if d == 0:
            raise InputError("abelian quotient is infinite; relation matrix deficient")
        if d > 1:
            out.append(d)
    for d in out:
        q = d
        while q % P == 0:
            q //= P
        if q != 1:
            raise InputError(f"unexpected invariant {d} in a 3-group")
    return tuple(sorted(out, reverse=True))


def abelian_quotient_invariants(pres, N=None):
    """Invariants of the abelianization of G/N, descending, e.g. (9, 3)."""
    n = pres.ngens
    if N is not None and N.igs:
        if not N.is_normal():
            raise NotNormalError("quotient by a non-normal subgroup")
        extra = [[int(e) for e in lead] for lead in N.igs]
    else:
        extra = []
    return _invariants_from_rows(_abelianized_rows(pres) + extra, n)


def subgroup_ati(H):
    """Abelian type invariants of H/H' from its own pc structure."""
    k = len(H.igs)
    if k == 0:
        return ()
    pres = H.pres
    rows = []
    for a in range(k):
        cubed = pcgroup.power(H.igs[a], P, pres)
        row = [0] * k
        row[a] = P
        for m, e in enumerate(H.express(cubed)):
            row[m] -= e
        rows.append(row)
    for b in range(k):
        for a in range(b):
            c = pcgroup.commutator(H.igs[b], H.igs[a], pres)
            if any(c):
                rows.append(list(H.express(c)))
    return _invariants_from_rows(rows, k)


def format_ati(t):
    return "(" + ",".join(str(d) for d in t) + ")"


def parse_ati(text):
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise InputError(f"bad type invariants {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        return ()
    return tuple(int(p) for p in inner.split(","))


def ati_dominates(a, b):
    """True if a group of type b is a quotient of one of type a."""
    ea = sorted(a, reverse=True)
    eb = sorted(b, reverse=True)
    if len(eb) > len(ea):
        return False
    return all(x >= y for x, y in zip(ea, eb))


# ---------------------------------------------------------------------------
# quotients

def quotient_with_map(pres, N, name=None, defs=None):
    """Quotient presentation G/N plus the projection and section maps.

    The projection sends an element to the compressed coordinates of its
    canonical N-coset representative; the section embeds a quotient vector
    back on the retained coordinates.
    """
    if not N.is_normal():
        raise NotNormalError("quotient by a non-normal subgroup")
    n = pres.ngens
    retained = [i for i in range(n) if i not in N.leads]
    pos_of = {i: k for k, i in enumerate(retained)}

    def proj(u):
        rep = N.reduce(u)
        return bytes(rep[i] for i in retained)

    def sec(v):
        out = bytearray(n)
        for k, i in enumerate(retained):
            out[i] = v[k]
        return bytes(out)

    m = len(retained)
    powerq = []
    for i in retained:
        powerq.append(proj(pres.power[i]))
    commq = [[bytes(m)] * m for _ in range(m)]
    for jq, j in enumerate(retained):
        for iq, i in enumerate(retained[:jq]):
            commq[jq][iq] = proj(pres.comm[j][i])
    qdefs = None
    if defs is not None:
        qdefs = []
        for i in retained:
            d = defs[i]
            if d is None:
                qdefs.append(None)
            elif d[0] == "pow":
                qdefs.append(("pow", pos_of[d[1]]))
            else:
                qdefs.append(("comm", pos_of[d[1]], pos_of[d[2]]))
        qdefs = tuple(qdefs)
    Q = PcPresentation(
        name=name or pres.name + "_q",
        labels=tuple(pres.labels[i] for i in retained),
        power=tuple(powerq),
        comm=tuple(tuple(row) for row in commq),
        defs=qdefs,
    )
    report = pcgroup.check_consistency(Q)
    if not report.ok:
        raise InputError("quotient presentation is inconsistent; bug upstream")
    return Q, proj, sec


def quotient_presentation(pres, N, name=None):
    Q, _, _ = quotient_with_map(pres, N, name=name)
    return Q


# ---------------------------------------------------------------------------
# the standard subgroup lattice over a (9,3) commutator quotient

@dataclass(frozen=True)
class StandardLattice:
    """The four maximal and four index-9 subgroups over G' for type (9,3).

    maximal[i] and index9[i] hold H_{i+1,3} and H_{i+1,9}:
        H_{1,3} = <x, G'>    H_{1,9} = <y, G'>
        H_{2,3} = <xy, G'>   H_{2,9} = <x^3 y, G'>
        H_{3,3} = <xy^2, G'> H_{3,9} = <x^3 y^2, G'>
        H_{4,3} = <x^3,y,G'> H_{4,9} = <x^3, G'>
    H_{4,9} is the intersection of the maximal ones, i.e. the Frattini
    subgroup, and H_{4,3} is generated by the four index-9 ones.
    """

    x: bytes
    y: bytes
    maximal: tuple
    index9: tuple
    derived: Subgroup

    def name_of(self, H):
        for i, S in enumerate(self.maximal):
            if S == H:
                return f"H_{{{i + 1},3}}"
        for i, S in enumerate(self.index9):
            if S == H:
                return f"H_{{{i + 1},9}}"
        return None


def standard_subgroup_lattice(pres, x, y):
    der = derived_subgroup(pres)
    q = abelian_quotient_invariants(pres, der)
    if q != (9, 3):
        raise AbelianizationTypeError(
            f"commutator quotient has type {q}, not (9,3)"
        )
    mul = lambda a, b: multiply(a, b, pres)
    x3 = power(x, P, pres)
    yinv = inverse(y, pres)
    dg = list(der.igs)
    maximal = (
        subgroup_closure([x] + dg, pres),
        subgroup_closure([mul(x, y)] + dg, pres),
        subgroup_closure([mul(x, yinv)] + dg, pres),
        subgroup_closure([x3, y] + dg, pres),
    )
    index9 = (
        subgroup_closure([y] + dg, pres),
        subgroup_closure([mul(x3, y)] + dg, pres),
        subgroup_closure([mul(x3, yinv)] + dg, pres),
        subgroup_closure([x3] + dg, pres),
    )
    order = P ** pres.ngens
    seen = set()
    for H in maximal:
        if H.order * P != order:
            raise AbelianizationTypeError("maximal subgroup of wrong index")
        seen.add(H.key())
    for H in index9:
        if H.order * P * P != order:
            raise AbelianizationTypeError("index-9 subgroup of wrong index")
        seen.add(H.key())
    if len(seen) != 8:
        raise AbelianizationTypeError("lattice subgroups are not distinct")
    phi = frattini_subgroup(pres)
    H49 = index9[3]
    if phi != H49 or not all(H.contains_subgroup(H49) for H in maximal):
        raise AbelianizationTypeError(
            "x, y do not induce the standard lattice: "
            "<x^3, G'> must be the Frattini subgroup"
        )
    return StandardLattice(
        x=x, y=y, maximal=maximal, index9=index9, derived=der
    )
