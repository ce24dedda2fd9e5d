"""Artin transfers, transfer kernels and Artin patterns.

For a subgroup H of G containing the derived subgroup, the transfer
V : G/G' -> H/H' is computed from a right transversal (t_1, ..., t_m):
V(g G') is the class of  prod_i t_i g t_{sigma(i)}^(-1)  where t_i g lies
in the coset H t_{sigma(i)}.  The value is independent of the transversal
and of the ordering of the product modulo H'; it is represented by the
canonical H'-coset representative, so values compare byte-exactly.

The Artin pattern of a group with commutator quotient of type (9,3)
collects, over the standard subgroup lattice:

    kappa  digit i in 0..4 per maximal subgroup: which index-9 subgroup
           (1..4) is the transfer kernel, 0 when the kernel contains the
           whole subgroup H_{4,3} of exponent-3 classes
    tau    abelian type invariants of the four maximal subgroups
    kappa2 transfer kernels of the four index-9 subgroups, named by the
           lattice subgroup they equal ("G" for the full group)
    tau2   type invariants of the four index-9 subgroups

kappa is reported in canonical form: the numbering of the first three
maximal subgroups and of the first three index-9 subgroups is bookkeeping
(it depends on the generator pair), so the lexicographically least kappa,
with tau, tau2, kappa2 as tie breaks, over independent renumberings of the
two families is chosen; the fourth member of each family is characteristic
and stays fixed.  Renumbering the families independently is what makes the
two harmonically balanced digit patterns (1,2,3) and (1,3,2) equivalent.
The raw digits for the presentation's own canonical generators are kept
alongside.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass

from .errors import AbelianizationTypeError, BudgetError, InputError
from . import pcgroup, structure
from .pcgroup import identity, inverse, multiply, power
from .structure import (
    Subgroup,
    abelian_quotient_invariants,
    derived_subgroup,
    format_ati,
    parse_ati,
    quotient_with_map,
    right_transversal,
    standard_subgroup_lattice,
    subgroup_ati,
    subgroup_closure,
    trivial_subgroup,
)

__all__ = [
    "TransferMap",
    "ArtinPattern",
    "CapitulationClass",
    "canonical_generators",
    "artin_transfer",
    "transfer_kernel",
    "subgroup_derived",
    "artin_pattern",
    "classify_capitulation",
    "serialize_pattern",
    "parse_pattern",
]

P = 3


def subgroup_derived(H):
    """Derived subgroup of H, as a subgroup of the ambient group."""
    pres = H.pres
    ech = structure._Echelon(pres)
    for a in H.igs:
        for b in H.igs:
            c = pcgroup.commutator(a, b, pres)
            if any(c):
                ech.add(c)
    changed = True
    while changed:
        changed = False
        leads = list(ech.by_pos.values())
        for a in leads:
            if ech.add(pcgroup.power(a, P, pres)):
                changed = True
            for h in H.igs:
                if ech.add(pcgroup.conjugate(a, h, pres)):
                    changed = True
        leads = list(ech.by_pos.values())
        for a in leads:
            for b in leads:
                if ech.add(multiply(a, b, pres)):
                    changed = True
    return ech.finish()


def canonical_generators(pres):
    """Deterministic generator pair (x, y) for a (9,3) commutator quotient.

    x is the lexicographically least element of G whose image in G/G' has
    order 9; y the least element whose image has order 3 outside <image(x)>.
    The least element of a G'-coset is the zero-padded section of its image,
    so the scan runs inside the 27-element quotient.
    """
    der = derived_subgroup(pres)
    if abelian_quotient_invariants(pres, der) != (9, 3):
        raise AbelianizationTypeError(
            "canonical generators need a commutator quotient of type (9,3)"
        )
    Q, proj, sec = quotient_with_map(pres, der, name=pres.name + "_ab")
    xq = None
    for v in pcgroup.enumerate_elements(Q):
        if pcgroup.element_order(v, Q) == 9:
            xq = v
            break
    if xq is None:
        raise AbelianizationTypeError("no element of order 9 in G/G'")
    powers = set()
    v = identity(Q)
    for _ in range(9):
        powers.add(v)
        v = multiply(v, xq, Q)
    for v in pcgroup.enumerate_elements(Q):
        if pcgroup.element_order(v, Q) == 3 and v not in powers:
            return sec(xq), sec(v)
    raise AbelianizationTypeError("no complement generator found")


@dataclass(frozen=True, eq=False)
class TransferMap:
    """The transfer to H, evaluated via a fixed right transversal."""

    pres: object
    H: Subgroup
    Hder: Subgroup
    transversal: tuple

    def __call__(self, g):
        pres = self.pres
        H = self.H
        by_rep = getattr(self, "_by_rep", None)
        if by_rep is None:
            by_rep = {H.reduce(t): t for t in self.transversal}
            object.__setattr__(self, "_by_rep", by_rep)
        value = identity(pres)
        for t in self.transversal:
            tg = multiply(t, g, pres)
            target = by_rep[H.reduce(tg)]
            h = multiply(tg, inverse(target, pres), pres)
            if not H.contains(h):
                raise InputError("transversal is not a right transversal")
            value = multiply(value, h, pres)
        return self.Hder.reduce(value)


def artin_transfer(pres, H, transversal=None):
    """Transfer map to a subgroup H containing the derived subgroup."""
    der = derived_subgroup(pres)
    if not H.contains_subgroup(der):
        raise InputError("transfer target must contain the derived subgroup")
    if transversal is None:
        transversal = tuple(right_transversal(H))
    else:
        transversal = tuple(transversal)
        reps = {H.reduce(t) for t in transversal}
        if len(reps) != H.index or len(transversal) != H.index:
            raise InputError("not a right transversal of H")
    return TransferMap(
        pres=pres, H=H, Hder=subgroup_derived(H), transversal=transversal
    )


def transfer_kernel(pres, H, transfer=None):
    """Kernel of the transfer to H, as the preimage subgroup of G.

    The returned subgroup contains G'; its image in G/G' is the kernel of
    V : G/G' -> H/H'.
    """
    V = transfer or artin_transfer(pres, H)
    der = derived_subgroup(pres)
    if der.index > P ** 6:
        raise BudgetError("commutator quotient too large for kernel scan")
    gens = list(der.igs)
    for rep in right_transversal(der):
        if V.Hder.contains(V(rep)):
            gens.append(rep)
    return subgroup_closure(gens, pres)


# ---------------------------------------------------------------------------
# patterns

class CapitulationClass(enum.Enum):
    DISTINGUISHED = "Distinguished"
    HARMONIC1 = "HarmonicVariant1"
    HARMONIC2 = "HarmonicVariant2"
    TOTAL = "Total"
    OTHER = "Other"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ArtinPattern:
    """Two-layer Artin pattern over the standard (9,3) lattice.

    x, y are the generators the lattice was built from; kappa_raw and
    tau_raw use their numbering.  kappa, tau, kappa2, tau2 and the two
    kernel tuples use the canonical numbering (kernels_maximal[i] is the
    kernel of the transfer reported in slot i of kappa).
    """

    group_name: str
    order_exponent: int
    x: bytes
    y: bytes
    kappa: tuple
    tau: tuple
    kappa2: tuple
    tau2: tuple
    kappa_raw: tuple
    tau_raw: tuple
    kernels_maximal: tuple
    kernels_index9: tuple

    @property
    def classify(self):
        return classify_capitulation(self)


def _q_lattice(Q, xq, yq):
    """Lattice subgroups inside the commutator quotient Q, by position."""
    mul = lambda a, b: multiply(a, b, Q)
    x3 = power(xq, P, Q)
    yi = inverse(yq, Q)
    maximal = (
        subgroup_closure([xq], Q),
        subgroup_closure([mul(xq, yq)], Q),
        subgroup_closure([mul(xq, yi)], Q),
        subgroup_closure([x3, yq], Q),
    )
    index9 = (
        subgroup_closure([yq], Q),
        subgroup_closure([mul(x3, yq)], Q),
        subgroup_closure([mul(x3, yi)], Q),
        subgroup_closure([x3], Q),
    )
    return maximal, index9


def _digit(kernel_q, index9_q, omega_q):
    if kernel_q.contains_subgroup(omega_q):
        return 0
    for i, N in enumerate(index9_q):
        if kernel_q == N:
            return i + 1
    raise InputError(
        "transfer kernel is not a standard lattice subgroup; "
        "pattern digits are undefined for this group"
    )


def _kernel_symbol(K, pres, lat):
    if len(K.igs) == pres.ngens:
        return "G"
    name = lat.name_of(K)
    if name:
        return name
    if K == lat.derived:
        return "G'"
    return f"U(3^{len(K.igs)})"


def artin_pattern(pres, x=None, y=None, canonical=True):
    """Artin pattern of a group whose commutator quotient has type (9,3).

    With canonical=False the digits keep the numbering of the given (or
    lexicographically canonical) generators.
    """
    if x is None or y is None:
        x, y = canonical_generators(pres)
    lat = standard_subgroup_lattice(pres, x, y)
    der = lat.derived
    Q, proj, _ = quotient_with_map(pres, der, name=pres.name + "_ab")

    def q_subgroup(K):
        return subgroup_closure([proj(u) for u in K.igs], Q)

    # transfers and kernels, keyed by the lattice subgroup they belong to
    kernels = {}
    taus = {}
    for H in lat.maximal + lat.index9:
        K = transfer_kernel(pres, H)
        kernels[H.key()] = (K, q_subgroup(K))
        taus[H.key()] = subgroup_ati(H)

    xq, yq = proj(x), proj(y)
    lat_m, lat_i = _q_lattice(Q, xq, yq)

    kappa_raw = []
    tau_raw = []
    kappa2_raw = []
    tau2_raw = []
    kernels_m = []
    kernels_i = []
    for H in lat.maximal:
        kappa_raw.append(_digit(kernels[H.key()][1], lat_i, lat_m[3]))
        tau_raw.append(taus[H.key()])
        kernels_m.append(kernels[H.key()][0])
    for H in lat.index9:
        K = kernels[H.key()][0]
        kernels_i.append(K)
        kappa2_raw.append(_kernel_symbol(K, pres, lat))
        tau2_raw.append(taus[H.key()])
    kappa_raw = tuple(kappa_raw)
    tau_raw = tuple(tau_raw)
    kappa2_raw = tuple(kappa2_raw)
    tau2_raw = tuple(tau2_raw)

    best = None
    if canonical:
        perms = list(itertools.permutations(range(3)))
    else:
        perms = [(0, 1, 2)]
    for pm in perms:
        for pi in perms:
            # new slot s of each family holds old member pm[s] / pi[s]
            def rename(d):
                return pi.index(d - 1) + 1 if d in (1, 2, 3) else d

            def resym(sym):
                m = re.match(r"^H_\{([123]),([39])\}$", sym)
                if not m:
                    return sym
                k, layer = int(m.group(1)), m.group(2)
                new = pm.index(k - 1) + 1 if layer == "3" else pi.index(k - 1) + 1
                return f"H_{{{new},{layer}}}"

            cand = (
                tuple(rename(kappa_raw[s]) for s in pm) + (rename(kappa_raw[3]),),
                tuple(tau_raw[s] for s in pm) + (tau_raw[3],),
                tuple(tau2_raw[s] for s in pi) + (tau2_raw[3],),
                tuple(resym(kappa2_raw[s]) for s in pi) + (resym(kappa2_raw[3]),),
                pm,
                pi,
            )
            if best is None or cand[:4] < best[:4]:
                best = cand
    kappa, tau, tau2, kappa2, pm, pi = best
    return ArtinPattern(
        group_name=pres.name,
        order_exponent=pres.ngens,
        x=x,
        y=y,
        kappa=kappa,
        tau=tau,
        kappa2=kappa2,
        tau2=tau2,
        kappa_raw=kappa_raw,
        tau_raw=tau_raw,
        kernels_maximal=tuple(kernels_m[s] for s in pm) + (kernels_m[3],),
        kernels_index9=tuple(kernels_i[s] for s in pi) + (kernels_i[3],),
    )


def classify_capitulation(pattern):
    kappa = tuple(pattern.kappa)
    if kappa == (4, 4, 4, 4):
        return CapitulationClass.DISTINGUISHED
    if kappa == (0, 0, 0, 4):
        return CapitulationClass.TOTAL
    if kappa == (1, 2, 3, 4):
        t4 = tuple(pattern.tau[3])
        if t4 == (9, 3, 3):
            return CapitulationClass.HARMONIC1
        if t4 == (9, 9, 3):
            return CapitulationClass.HARMONIC2
    return CapitulationClass.OTHER


# ---------------------------------------------------------------------------
# serialization

def _format_digits(kappa):
    return "(" + ",".join(str(d) for d in kappa[:3]) + ";" + str(kappa[3]) + ")"


def _format_taus(tau):
    return "[" + ",".join(format_ati(t) for t in tau[:3]) + ";" + format_ati(tau[3]) + "]"


def serialize_pattern(pattern, layer2=False):
    """'kappa=(1,2,3;4) tau=[(27,3),(27,3),(27,3);(9,3,3)]', optionally with
    a second line for the deeper layer."""
    line = f"kappa={_format_digits(pattern.kappa)} tau={_format_taus(pattern.tau)}"
    if layer2:
        syms = "(" + ",".join(pattern.kappa2[:3]) + ";" + pattern.kappa2[3] + ")"
        line += f"\nkappa2={syms} tau2={_format_taus(pattern.tau2)}"
    return line


def _split_top(text, sep=","):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_pattern(text):
    """Parse the first line of serialize_pattern back into (kappa, tau)."""
    m = re.match(r"^\s*kappa=\(([^)]*)\)\s+tau=\[(.*)\]\s*$", text.strip().splitlines()[0])
    if not m:
        raise InputError(f"unparseable pattern {text!r}")
    digits = m.group(1).replace(";", ",").split(",")
    kappa = tuple(int(d) for d in digits)
    if len(kappa) != 4:
        raise InputError("kappa must have four digits")
    tau_text = m.group(2).replace(";", ",")
    tau = tuple(parse_ati(p) for p in _split_top(tau_text))
    if len(tau) != 4:
        raise InputError("tau must have four components")
    return kappa, tau
