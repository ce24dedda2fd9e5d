"""Descendant trees of finite 3-groups and class tower identification.

The generation step follows the standard tails method.  Every relation of
a consistent weighted presentation that is not the definition of a
generator receives a new central tail generator of order 3; the
consistency overlaps of the extended presentation yield linear equations
over F3 whose solution eliminates the dependent tails.  What survives is
the 3-covering group G*, the surviving tails span the 3-multiplicator M,
and the nucleus is the last nontrivial term P_c(G*) of the exponent-3
central series, where c is the 3-class of G.  Immediate descendants of
step size s are the quotients G*/U for allowable subgroups U < M (U
supplements the nucleus, codimension s), one representative per orbit of
the automorphism action on M.

Automorphism groups are found by exhaustive generator-image search for
orders up to 3^7 and are threaded down tree edges above that: the
restriction Aut(D) -> Aut(G) of a descendant D = G*/U has image exactly
the stabilizer of U and kernel the central maps g -> g z, so lifted
Schreier generators of the stabilizer together with inner and central
maps generate the descendant's automorphisms.  One consequence used for
pruning: the action image on the Frattini quotient only shrinks along
tree edges.
"""

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetError,
    ConsistencyError,
    InputError,
    AbelianizationTypeError,
)
from . import pcgroup
from .pcgroup import P, PcPresentation, check_consistency, consistency_failures
from . import structure
from .structure import (
    Subgroup,
    subgroup_closure,
    trivial_subgroup,
    exponent_p_central_series,
    p_class,
    group_series,
    abelian_quotient_invariants,
    quotient_with_map,
    ati_dominates,
    format_ati,
)
from . import transfer
from .transfer import artin_pattern, classify_capitulation, CapitulationClass
from . import vectable

MAX_COVER_GENS = 90
AUT_SCAN_CAP = P ** 7
MAX_MAT_CLOSURE = 20_000


# ---------------------------------------------------------------------------
# the 3-covering group

@dataclass(frozen=True)
class CoverData:
    """Cover presentation with multiplicator and nucleus bookkeeping."""

    base: PcPresentation
    cover: PcPresentation
    tail_positions: tuple      # generator indices of the multiplicator basis
    births: tuple              # defining relation of each tail, in base indices
    multiplicator: Subgroup
    nucleus: Subgroup
    multiplicator_rank: int
    nucleus_rank: int

    @property
    def allowable_steps(self):
        return tuple(range(1, self.nucleus_rank + 1))


def _nondef_relations(pres):
    """Relations that do not define a generator, in a fixed order."""
    defined = {pres.defs[m] for m in range(pres.ngens) if pres.defs[m]}
    rels = []
    for i in range(pres.ngens):
        if ("pow", i) not in defined:
            rels.append(("pow", i))
    for j in range(1, pres.ngens):
        for i in range(j):
            if ("comm", j, i) not in defined:
                rels.append(("comm", j, i))
    return rels


def _tail_label(pres, k):
    stem = "w"
    while any(lbl.startswith(stem) for lbl in pres.labels):
        stem += "w"
    return f"{stem}{k + 1}"


def _with_tails(pres):
    """Presentation with one fresh central tail on every non-def relation."""
    n = pres.ngens
    rels = _nondef_relations(pres)
    q = len(rels)
    if n + q > MAX_COVER_GENS:
        raise BudgetError(
            f"cover of {pres.name} needs {n + q} generators, cap {MAX_COVER_GENS}"
        )
    nn = n + q
    power = [bytearray(nn) for _ in range(nn)]
    comm = [[bytes(nn)] * nn for _ in range(nn)]
    for i in range(n):
        power[i][:n] = pres.power[i]
    for j in range(n):
        row = [bytes(nn)] * nn
        for i in range(j):
            v = bytearray(nn)
            v[:n] = pres.comm[j][i]
            row[i] = bytes(v)
        comm[j] = row
    for k, rel in enumerate(rels):
        if rel[0] == "pow":
            power[rel[1]][n + k] = 1
        else:
            _, j, i = rel
            v = bytearray(comm[j][i])
            v[n + k] = 1
            comm[j][i] = bytes(v)
    labels = pres.labels + tuple(_tail_label(pres, k) for k in range(q))
    defs = list(pres.defs) + [
        rel if rel[0] == "pow" else rel for rel in rels
    ]
    built = PcPresentation(
        name=f"{pres.name}*",
        labels=labels,
        power=tuple(bytes(v) for v in power),
        comm=tuple(tuple(row) for row in comm),
        defs=tuple(defs),
    )
    return built, rels


def _eliminate_tails(cover, n_base, rels, failures):
    """Quotient the tail block by the consistency failure relations."""
    nn = cover.ngens
    q = nn - n_base
    rows = []
    for kind, idx, lhs, rhs in failures:
        if lhs[:n_base] != rhs[:n_base]:
            raise ConsistencyError(
                f"{cover.name}: overlap {kind}{idx} fails outside the tail block"
            )
        row = [(rhs[n_base + t] - lhs[n_base + t]) % P for t in range(q)]
        if any(row):
            rows.append(row)
    red = vectable.rref_single(rows)
    pivots = []
    for r in red:
        for c in range(q):
            if r[c]:
                pivots.append((c, r))
                break
    dead = {c for c, _ in pivots}
    alive = [c for c in range(q) if c not in dead]
    # dead tail -> combination of surviving tails
    subst = {}
    for c, r in pivots:
        subst[c] = {f: (-r[f]) % P for f in alive if r[f]}

    def reduce_vec(v):
        out = bytearray(n_base + len(alive))
        out[:n_base] = v[:n_base]
        acc = [0] * q
        for t in range(q):
            e = v[n_base + t]
            if not e:
                continue
            if t in dead:
                for f, cf in subst[t].items():
                    acc[f] = (acc[f] + e * cf) % P
            else:
                acc[t] = (acc[t] + e) % P
        for k, f in enumerate(alive):
            out[n_base + k] = acc[f]
        return bytes(out)

    keep = list(range(n_base)) + [n_base + f for f in alive]
    labels = tuple(cover.labels[i] for i in keep)
    power = tuple(reduce_vec(cover.power[i]) for i in keep)
    comm = []
    for j in keep:
        row = []
        for i in keep[: keep.index(j)]:
            row.append(reduce_vec(cover.comm[j][i]))
        row += [bytes(len(keep))] * (len(keep) - len(row))
        comm.append(tuple(row))
    defs = tuple(cover.defs[i] for i in keep)
    reduced = PcPresentation(
        name=cover.name,
        labels=labels,
        power=power,
        comm=tuple(comm),
        defs=defs,
    )
    alive_rels = [rels[f] for f in alive]
    return reduced, alive_rels


_COVER_CACHE = {}


def p_cover(pres):
    """3-covering group with multiplicator and nucleus data."""
    cached = _COVER_CACHE.get(id(pres))
    if cached is not None:
        return cached
    if pres.ngens == 0:
        triv = trivial_subgroup(pres)
        data = CoverData(pres, pres, (), (), triv, triv, 0, 0)
        _COVER_CACHE[id(pres)] = data
        return data
    cover, rels = _with_tails(pres)
    for _ in range(4):
        failures = consistency_failures(cover)
        if not failures:
            break
        cover, rels = _eliminate_tails(cover, pres.ngens, rels, failures)
    else:
        raise ConsistencyError(f"cover of {pres.name} did not stabilize")
    n = pres.ngens
    tails = tuple(range(n, cover.ngens))
    m = len(tails)
    tail_elts = []
    for t in tails:
        v = bytearray(cover.ngens)
        v[t] = 1
        tail_elts.append(bytes(v))
    mult = subgroup_closure(tail_elts, cover)
    if len(mult.igs) != m:
        raise ConsistencyError(f"multiplicator of {pres.name} is not free on tails")
    c = p_class(pres)
    series = exponent_p_central_series(cover)
    nucleus = series[c] if c < len(series) else trivial_subgroup(cover)
    for v in nucleus.igs:
        if any(v[:n]):
            raise ConsistencyError(f"nucleus of {pres.name} leaves the tail block")
    data = CoverData(
        base=pres,
        cover=cover,
        tail_positions=tails,
        births=tuple(rels),
        multiplicator=mult,
        nucleus=nucleus,
        multiplicator_rank=m,
        nucleus_rank=len(nucleus.igs),
    )
    _COVER_CACHE[id(pres)] = data
    return data


def relation_rank(pres):
    """d2 = dim H^2(G, F3), the rank of the 3-multiplicator of the cover."""
    return p_cover(pres).multiplicator_rank


# ---------------------------------------------------------------------------
# automorphism maps

@dataclass(frozen=True)
class AutMap:
    """Automorphism given by the images of all pc generators."""

    pres: PcPresentation
    images: tuple

    def __call__(self, vec):
        out = pcgroup.identity(self.pres)
        for i, e in enumerate(vec):
            for _ in range(e):
                out = pcgroup.multiply(out, self.images[i], self.pres)
        return out

    def compose(self, other):
        """self after other."""
        return AutMap(self.pres, tuple(self(v) for v in other.images))

    def is_identity(self):
        n = self.pres.ngens
        return all(
            self.images[i] == _gen_vec(n, i) for i in range(n)
        )

    def order(self, cap=200_000):
        k = 1
        cur = self
        while not cur.is_identity():
            cur = cur.compose(self)
            k += 1
            if k > cap:
                raise BudgetError("automorphism order exceeds cap")
        return k

    def inverse(self):
        k = self.order()
        out = identity_map(self.pres)
        for _ in range(k - 1):
            out = out.compose(self)
        return out


def _gen_vec(n, i, e=1):
    v = bytearray(n)
    v[i] = e
    return bytes(v)


def identity_map(pres):
    n = pres.ngens
    return AutMap(pres, tuple(_gen_vec(n, i) for i in range(n)))


def extend_minimal_images(pres, seed):
    """Full image list from images of the minimal generators.

    seed maps minimal generator index to an element vector; defined
    generators follow from their defining relations.
    """
    images = [None] * pres.ngens
    for m, v in seed.items():
        images[m] = bytes(v)
    for m in range(pres.ngens):
        if images[m] is not None:
            continue
        d = pres.defs[m]
        if d[0] == "pow":
            rel = pres.power[d[1]]
        else:
            rel = pres.comm[d[1]][d[2]]
        if rel[m] != 1 or any(rel[m + 1:]):
            raise InputError(
                f"definition of {pres.labels[m]} is not in solvable position"
            )
        head = pcgroup.identity(pres)
        for i in range(m):
            for _ in range(rel[i]):
                head = pcgroup.multiply(head, images[i], pres)
        if d[0] == "pow":
            body = pcgroup.power(images[d[1]], P, pres)
        else:
            body = pcgroup.commutator(images[d[1]], images[d[2]], pres)
        images[m] = pcgroup.multiply(pcgroup.inverse(head, pres), body, pres)
    return tuple(images)


def is_automorphism(pres, images):
    """Relation check plus invertibility on the Frattini quotient."""
    n = pres.ngens
    mins = pres.minimal_gens
    rows = [[images[m][k] % P for k in mins] for m in mins]
    if len(vectable.rref_single(rows)) != len(mins):
        return False

    def word(v):
        out = pcgroup.identity(pres)
        for i, e in enumerate(v):
            for _ in range(e):
                out = pcgroup.multiply(out, images[i], pres)
        return out

    for i in range(n):
        if pcgroup.power(images[i], P, pres) != word(pres.power[i]):
            return False
    for j in range(1, n):
        for i in range(j):
            if pcgroup.commutator(images[j], images[i], pres) != word(
                pres.comm[j][i]
            ):
                return False
    return True


@dataclass(frozen=True)
class AutBasis:
    """Generating set of the automorphism group of one presentation."""

    pres: PcPresentation
    maps: tuple
    exact: bool
    source: str
    size: int = None  # full group order when the scan produced it


def automorphism_generators(pres, cap=AUT_SCAN_CAP):
    """Exhaustive scan producing a small verified generating set."""
    if P ** pres.ngens > cap:
        raise BudgetError(
            f"automorphism scan for order 3^{pres.ngens} exceeds cap"
        )
    tab, seeds = vectable.automorphism_seeds(pres)
    chosen = vectable.generating_subset(tab, pres, seeds)
    mins = pres.minimal_gens
    maps = []
    for k in chosen:
        seed = {m: tab.vec_of(int(s)) for m, s in zip(mins, seeds[k])}
        maps.append(AutMap(pres, extend_minimal_images(pres, seed)))
    return AutBasis(pres, tuple(maps), exact=True, source="scan", size=len(seeds))


# ---------------------------------------------------------------------------
# action of automorphisms on the multiplicator and the Frattini quotient

def _embed(vec, nn):
    out = bytearray(nn)
    out[: len(vec)] = vec
    return bytes(out)


def _cover_lift_images(cover_data, amap):
    """Images of every cover generator under the lift of ``amap``.

    Only the minimal generators of the base are freely lifted (with zero
    tail part); every defined generator — including the tails, whose
    definitions are their birth relations — is then forced by the
    definition chain.  Lifting defined generators independently would be
    wrong: their cover images can differ from the embedded base images by
    a central tail factor.
    """
    cov = cover_data.cover
    nn = cov.ngens
    mins = cover_data.base.minimal_gens
    assert cov.minimal_gens == mins
    seed = {m: _embed(amap.images[m], nn) for m in mins}
    return extend_minimal_images(cov, seed)


def _matrix_from_lift(cover_data, lifted, who):
    """Multiplicator action rows read off a lifted image family."""
    n = cover_data.base.ngens
    rows = []
    for pos in cover_data.tail_positions:
        img = lifted[pos]
        if any(img[:n]):
            raise ConsistencyError(
                f"{cover_data.cover.name}: tail image of {who} leaves the multiplicator"
            )
        rows.append(tuple(img[pp] for pp in cover_data.tail_positions))
    return tuple(rows)


def multiplicator_matrix(cover_data, amap):
    """Row matrix of the induced action on the multiplicator basis."""
    lifted = _cover_lift_images(cover_data, amap)
    return _matrix_from_lift(cover_data, lifted, amap.pres.name)


def frattini_matrix(pres, amap):
    """Induced 2x2 (or d x d) matrix on the Frattini quotient."""
    mins = pres.minimal_gens
    return tuple(
        tuple(amap.images[m][k] % P for k in mins) for m in mins
    )


def _mat_mul(a, b):
    n = len(a)
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(n)) % P for j in range(n))
        for i in range(n)
    )


def _mat_identity(n):
    return tuple(tuple(1 if i == j else 0 for j in range(n)) for i in range(n))


def _mat_inverse(a):
    n = len(a)
    aug = [list(a[i]) + [1 if j == i else 0 for j in range(n)] for i in range(n)]
    red = vectable.rref_single(aug)
    if len(red) != n or any(red[i][i] != 1 for i in range(n)):
        raise InputError("matrix not invertible mod 3")
    return tuple(tuple(red[i][n:]) for i in range(n))


def _mat_order(a):
    n = len(a)
    ident = _mat_identity(n)
    cur = a
    k = 1
    while cur != ident:
        cur = _mat_mul(cur, a)
        k += 1
        if k > 10_000:
            raise InputError("matrix order runaway")
    return k


def close_matrix_group(gens):
    """dict matrix -> word (generator index list) for the generated group."""
    ident = _mat_identity(len(gens[0])) if gens else ()
    seen = {ident: ()}
    frontier = [ident]
    while frontier:
        nxt = []
        for m in frontier:
            for gi, g in enumerate(gens):
                prod = _mat_mul(m, g)
                if prod not in seen:
                    seen[prod] = seen[m] + (gi,)
                    nxt.append(prod)
        frontier = nxt
    return seen


_MINUS_I = ((2, 0), (0, 2))


@dataclass(frozen=True)
class ActionReport:
    """Largest of S3 / C3 / C2 / trivial acting through automorphisms."""

    klass: str
    image_order: int = 0
    minus_identity: bool = False
    witnesses: dict = field(default_factory=dict)
    strict: bool = False
    exact: bool = True

    def verify(self):
        """Re-check any materialized witnesses (vacuously true when empty)."""
        if self.klass in ("inconclusive", "1") or self.strict:
            return True
        sig = self.witnesses.get("sigma")
        tau = self.witnesses.get("tau")
        if sig is not None:
            if not is_automorphism(sig.pres, sig.images) or sig.order() != 3:
                return False
        if tau is not None:
            if not is_automorphism(tau.pres, tau.images) or tau.order() != 2:
                return False
        if sig is not None and tau is not None:
            lhs = tau.compose(sig).compose(tau)
            rhs = sig.compose(sig)
            if lhs.images != rhs.images:
                return False
        return True


def _action_from_words(pres, basis, mats):
    """Classify the Frattini-quotient image and materialize witnesses."""
    image = close_matrix_group(mats) if mats else {(_mat_identity(2)): ()}
    order3 = [m for m in image if _mat_order(m) == 3]
    order2 = [m for m in image if _mat_order(m) == 2]

    def materialize(word):
        out = identity_map(pres)
        for gi in word:
            out = basis.maps[gi].compose(out)
        return out

    s3_pairs = [
        (s, t)
        for s in order3
        for t in order2
        if _mat_mul(_mat_mul(t, s), t) == _mat_inverse(s)
    ]
    if s3_pairs:
        klass = "S3"
    elif order3:
        klass = "C3"
    elif order2:
        klass = "C2"
    else:
        klass = "1"
    # witnesses are best effort: the matrix image determines the class, but
    # a matrix of order 3 need not be realized by a map of order exactly 3
    witnesses = {}
    if klass == "S3":
        for s, t in s3_pairs:
            sig = materialize(image[s])
            tau = materialize(image[t])
            if (
                sig.order() == 3
                and tau.order() == 2
                and tau.compose(sig).compose(tau).images
                == sig.compose(sig).images
            ):
                witnesses = {"sigma": sig, "tau": tau}
                break
    elif klass == "C3":
        for s in order3:
            sig = materialize(image[s])
            if sig.order() == 3:
                witnesses = {"sigma": sig}
                break
    elif klass == "C2":
        for t in order2:
            tau = materialize(image[t])
            if tau.order() == 2:
                witnesses = {"tau": tau}
                break
    return ActionReport(
        klass=klass,
        image_order=len(image),
        minus_identity=_MINUS_I in image,
        witnesses=witnesses,
        exact=basis.exact,
    )


def s3_action_check(pres, basis=None, strict=False, cap=AUT_SCAN_CAP):
    """Largest of S3/C3/C2/1 in the automorphism action on G/Phi(G).

    With strict=True the check is read off the full automorphism group of
    the Frattini quotient itself, which for generator rank 2 always
    realizes S3; the default inspects Aut(G).
    """
    if strict:
        d = len(pres.minimal_gens)
        return ActionReport(
            klass="S3" if d >= 2 else ("C2" if d == 1 else "1"),
            image_order=48 if d >= 2 else (2 if d == 1 else 1),
            minus_identity=d >= 1,
            strict=True,
        )
    if basis is None:
        try:
            basis = automorphism_generators(pres, cap=cap)
        except BudgetError:
            return ActionReport(klass="inconclusive", exact=False)
    mats = [frattini_matrix(pres, m) for m in basis.maps]
    if not mats:
        return ActionReport(klass="1", image_order=1, exact=basis.exact)
    return _action_from_words(pres, basis, mats)


# ---------------------------------------------------------------------------
# allowable subspaces, enumerated in the dual

MAX_SUBSPACES = 2_000_000


def _gauss_subspace_bases(nu, s):
    """Reduced row bases of every s-dimensional subspace of F3^nu."""
    out = []
    for pivots in itertools.combinations(range(nu), s):
        free = [
            (r, c)
            for r in range(s)
            for c in range(pivots[r] + 1, nu)
            if c not in pivots
        ]
        base = np.zeros((s, nu), dtype=np.uint8)
        for r, c in enumerate(pivots):
            base[r, c] = 1
        count = P ** len(free)
        block = np.repeat(base[None], count, axis=0)
        if free:
            digits = (
                np.arange(count)[:, None] // (P ** np.arange(len(free)))[None, :]
            ) % P
            for idx, (r, c) in enumerate(free):
                block[:, r, c] = digits[:, idx]
        out.append(block)
    if not out:
        return np.zeros((0, s, nu), dtype=np.uint8)
    return np.concatenate(out, axis=0)


def _allowable_dual_stack(cover_data, s):
    """Canonical dual bases of the allowable subspaces of codimension s.

    A subgroup U < M is allowable when it supplements the nucleus; its
    annihilator W is an s-dimensional space of functionals meeting the
    annihilator of the nucleus trivially, i.e. a graph over a complement.
    """
    q = cover_data.multiplicator_rank
    nu = cover_data.nucleus_rank
    if not 1 <= s <= nu:
        return np.zeros((0, s, q), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    tails = cover_data.tail_positions
    nrows = [[v[t] % P for t in tails] for v in cover_data.nucleus.igs]
    nperp = vectable.nullspace(nrows, q)
    nperp = np.array(nperp, dtype=np.uint8).reshape(len(nperp), q)
    red = vectable.rref_single(nrows)
    lead_cols = [next(c for c in range(q) if row[c]) for row in red]
    comp = np.zeros((nu, q), dtype=np.uint8)
    for r, c in enumerate(lead_cols):
        comp[r, c] = 1
    vparts = _gauss_subspace_bases(nu, s)
    kfree = q - nu
    kcount = P ** (s * kfree)
    if len(vparts) * kcount > MAX_SUBSPACES:
        raise BudgetError(
            f"{len(vparts) * kcount} candidate subspaces exceed the enumeration cap"
        )
    base = (vparts.astype(np.int16) @ comp.astype(np.int16)) % P  # (BV, s, q)
    if kfree == 0 or kcount == 1:
        stack = base.astype(np.uint8)
    else:
        digits = (
            np.arange(kcount)[:, None] // (P ** np.arange(s * kfree))[None, :]
        ) % P
        kmats = digits.reshape(kcount, s, kfree).astype(np.int16)
        karr = (kmats @ nperp.astype(np.int16)) % P  # (kcount, s, q)
        stack = (base[:, None, :, :] + karr[None, :, :, :]) % P
        stack = stack.reshape(len(base) * kcount, s, q).astype(np.uint8)
    canon = vectable.rref_batch(stack)
    keys = vectable.pack_rows(canon)
    if len(np.unique(keys)) != len(keys):
        raise ConsistencyError("dual subspace enumeration produced duplicates")
    return canon, keys


# ---------------------------------------------------------------------------
# orbits of the automorphism action on the allowable subspaces

def _key_lookup(keys):
    order = np.argsort(keys)
    skeys = keys[order]

    def lookup(vals):
        pos = np.searchsorted(skeys, vals)
        if np.any(pos >= len(skeys)) or np.any(skeys[pos] != vals):
            raise ConsistencyError("automorphism image is not an allowable subspace")
        return order[pos]

    return lookup


def _apply_gen(stack, rows, tmat):
    sub = vectable.mat_apply(stack[rows], np.asarray(tmat, dtype=np.uint8))
    return vectable.pack_rows(vectable.rref_batch(sub))


def _orbit_split(stack, keys, tmats):
    lookup = _key_lookup(keys)
    B = len(keys)
    oid = np.full(B, -1, dtype=np.int64)
    orbits = []
    for start in range(B):
        if oid[start] >= 0:
            continue
        cur = len(orbits)
        oid[start] = cur
        members = [np.array([start], dtype=np.int64)]
        frontier = np.array([start], dtype=np.int64)
        while frontier.size:
            fresh_parts = []
            for tmat in tmats:
                tgt = lookup(_apply_gen(stack, frontier, tmat))
                tgt = np.unique(tgt[oid[tgt] < 0])
                tgt = tgt[oid[tgt] < 0]
                if tgt.size:
                    oid[tgt] = cur
                    fresh_parts.append(tgt)
            frontier = (
                np.unique(np.concatenate(fresh_parts))
                if fresh_parts
                else np.empty(0, dtype=np.int64)
            )
            if frontier.size:
                members.append(frontier)
        orbits.append(np.concatenate(members))
    return orbits, lookup


def _orbit_schreier(stack, keys, members, tmats, amats, ainvs, lookup):
    """Min-key representative plus deduplicated stabilizer generator words.

    Returns (rep_position, [(matrix, word), ...]) where each word is a
    tuple of (generator_index, sign) letters and matrix is the generator's
    action on the multiplicator.
    """
    q = stack.shape[2]
    m = len(members)
    k = len(tmats)
    rep = int(members[int(np.argmin(keys[members]))])
    g2l = {int(p): i for i, p in enumerate(members)}
    parent = np.full(m, -1, dtype=np.int64)
    pgen = np.full(m, -1, dtype=np.int64)
    visited = np.zeros(m, dtype=bool)
    path = np.zeros((m, q, q), dtype=np.int16)
    ipath = np.zeros((m, q, q), dtype=np.int16)
    lrep = g2l[rep]
    ident = np.asarray(_mat_identity(q), dtype=np.int16)
    path[lrep] = ident
    ipath[lrep] = ident
    visited[lrep] = True
    img_table = np.full((m, k), -1, dtype=np.int64)
    amats16 = [np.asarray(a, dtype=np.int16) for a in amats]
    ainvs16 = [np.asarray(a, dtype=np.int16) for a in ainvs]
    frontier = np.array([lrep], dtype=np.int64)
    while frontier.size:
        nxt = []
        for gi, tmat in enumerate(tmats):
            tgt_global = lookup(_apply_gen(stack, members[frontier], tmat))
            tgt_local = np.array([g2l[int(t)] for t in tgt_global], dtype=np.int64)
            img_table[frontier, gi] = tgt_local
            fresh_mask = ~visited[tgt_local]
            if fresh_mask.any():
                cand = tgt_local[fresh_mask]
                srcs = frontier[fresh_mask]
                uniq, first = np.unique(cand, return_index=True)
                src = srcs[first]
                visited[uniq] = True
                parent[uniq] = src
                pgen[uniq] = gi
                path[uniq] = np.matmul(path[src], amats16[gi]) % P
                ipath[uniq] = np.matmul(ainvs16[gi], ipath[src]) % P
                nxt.append(uniq)
        frontier = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
    if not visited.all():
        raise ConsistencyError("orbit traversal missed members")

    def word_to(local):
        letters = []
        while local != lrep:
            letters.append((int(pgen[local]), 1))
            local = int(parent[local])
        letters.reverse()
        return letters

    seen = {}
    for gi in range(k):
        smats = np.matmul(np.matmul(path, amats16[gi]) % P, ipath[img_table[:, gi]]) % P
        flat = smats.reshape(m, q * q).astype(np.uint8)
        uniq, first = np.unique(flat, axis=0, return_index=True)
        for row, pos in zip(uniq, first):
            tup = tuple(tuple(int(v) for v in row[r * q : (r + 1) * q]) for r in range(q))
            if tup not in seen:
                seen[tup] = (int(pos), gi)
    ident_t = _mat_identity(q)
    out = []
    for mat, (pos, gi) in seen.items():
        if mat == ident_t:
            continue
        word = (
            word_to(pos)
            + [(gi, 1)]
            + [(letter, -sgn) for letter, sgn in reversed(word_to(int(img_table[pos, gi])))]
        )
        out.append((mat, tuple(word)))
    return rep, out


# ---------------------------------------------------------------------------
# threading automorphisms down one generation step

def _aut_inverse(amap):
    """Inverse map found by cycling each minimal generator."""
    pres = amap.pres
    n = pres.ngens
    seed = {}
    for m in pres.minimal_gens:
        target = _gen_vec(n, m)
        prev = target
        cur = amap(target)
        steps = 1
        while cur != target:
            prev = cur
            cur = amap(cur)
            steps += 1
            if steps > 100_000:
                raise BudgetError("automorphism inverse cycling exceeded cap")
        seed[m] = prev
    return AutMap(pres, extend_minimal_images(pres, seed))


def _materialize_word(basis, word, inv_cache):
    out = identity_map(basis.pres)
    for gi, sgn in word:
        if sgn < 0:
            if gi not in inv_cache:
                inv_cache[gi] = _aut_inverse(basis.maps[gi])
            step = inv_cache[gi]
        else:
            step = basis.maps[gi]
        out = step.compose(out)
    return out


class _TrivialActionReducer:
    """Exact generating-set reduction, modulo inner automorphisms, for
    automorphisms acting trivially on the multiplicator.

    Stabilizer words harvested from a subspace orbit generate the
    stabilizer of the subspace only modulo this kernel, so kernel
    generators have to ride along for threaded bases to stay generating —
    but the raw Schreier harvest enumerates kernel *elements*, most of
    them inner, and feeding them all to the next generation makes the
    bases grow exponentially.  This reducer keeps only generators, in two
    stages:

    Stage 1 — action on the Frattini quotient.  A candidate whose induced
    matrix enlarges the matrix subgroup seen so far is kept (with a
    representative map stored per subgroup element); otherwise it is
    divided by the stored representative, leaving a map that is trivial
    on the Frattini quotient.

    Stage 2 — maps trivial on both the multiplicator and the Frattini
    quotient are unipotent along the weight filtration of the pc basis:
    on the lowest weight layer where such a map moves a minimal
    generator, composition adds difference vectors.  One echelon table
    per layer, preseeded with the inner automorphisms' difference
    vectors, reduces candidates layer by layer; a candidate that dies
    lies in <kept, Inn> and is dropped, anything else becomes a pivot and
    is kept.  Inner generators are seeded as pivots but never emitted,
    which is sound because descendants re-add their own inner maps and
    central layer maps.
    """

    def __init__(self, pres):
        self.pres = pres
        n = pres.ngens
        self.mins = tuple(pres.minimal_gens)
        minset = set(self.mins)
        self.weights = pres.weights
        self.layer_positions = {}
        for pos, w in enumerate(self.weights):
            if pos in minset:
                continue
            self.layer_positions.setdefault(w, []).append(pos)
        self.tables = {}
        self.kept = []
        ident2 = tuple(
            tuple(int(i == j) for j in range(len(self.mins)))
            for i in range(len(self.mins))
        )
        self._id2 = ident2
        self._fratt = {ident2: identity_map(pres)}
        self._fratt_gens = []
        self._inv_cache = {}
        for g in range(n):
            gv = _gen_vec(n, g)
            images = tuple(
                pcgroup.conjugate(_gen_vec(n, i), gv, pres) for i in range(n)
            )
            self._reduce_unipotent(AutMap(pres, images), emit=False)

    def _inverse(self, amap):
        key = id(amap)
        if key not in self._inv_cache:
            self._inv_cache[key] = (amap, _aut_inverse(amap))
        return self._inv_cache[key][1]

    def _extend_frattini(self, amap, fmat):
        """Close the Frattini matrix subgroup over a new generator."""
        self._fratt_gens.append((fmat, amap))
        frontier = list(self._fratt.items())
        while frontier:
            nxt = []
            for m0, map0 in frontier:
                for gm, gmap in self._fratt_gens:
                    prod = _mat_mul(m0, gm)
                    if prod not in self._fratt:
                        self._fratt[prod] = gmap.compose(map0)
                        nxt.append((prod, self._fratt[prod]))
            frontier = nxt

    def reduce(self, amap, emit=True):
        """Absorb one candidate; return True when it was kept."""
        fmat = frattini_matrix(self.pres, amap)
        if fmat != self._id2:
            if fmat not in self._fratt:
                self._extend_frattini(amap, fmat)
                if emit:
                    self.kept.append(amap)
                return True
            rep = self._fratt[fmat]
            amap = amap.compose(self._inverse(rep))
        return self._reduce_unipotent(amap, emit=emit)

    def _delta(self, amap):
        """Lowest filtration layer moved, and the difference vector there."""
        pres = self.pres
        n = pres.ngens
        deltas = []
        top = None
        for i in self.mins:
            d = pcgroup.multiply(
                pcgroup.inverse(_gen_vec(n, i), pres), amap.images[i], pres
            )
            deltas.append(d)
            for pos, e in enumerate(d):
                if e and (top is None or self.weights[pos] < top):
                    top = self.weights[pos]
        if top is None:
            return None, None
        cols = self.layer_positions[top]
        vec = []
        for d in deltas:
            vec.extend(d[pos] % P for pos in cols)
        return top, vec

    def _reduce_unipotent(self, amap, emit):
        rounds = 0
        while True:
            rounds += 1
            if rounds > 4 * len(self.pres.weights) + 8:
                raise BudgetError("kernel reduction did not terminate")
            top, vec = self._delta(amap)
            if top is None:
                return False
            table = self.tables.setdefault(top, [])
            for pcol, row, rmap in table:
                c = vec[pcol]
                if not c:
                    continue
                inv = self._inverse(rmap)
                step = inv if c == 1 else inv.compose(inv)
                amap = amap.compose(step)
                vec = [(a - c * b) % P for a, b in zip(vec, row)]
            if not any(vec):
                continue
            pcol = next(j for j, a in enumerate(vec) if a)
            if vec[pcol] == 2:
                amap = amap.compose(amap)
                vec = [(2 * a) % P for a in vec]
            vec = tuple(vec)
            # keep the table fully reduced: clear the new pivot column from
            # the older rows (vector and map in lockstep), so one forward
            # sweep suffices for later candidates
            for idx, (opcol, orow, omap) in enumerate(table):
                c = orow[pcol]
                if not c:
                    continue
                inv = self._inverse(amap)
                step = inv if c == 1 else inv.compose(inv)
                table[idx] = (
                    opcol,
                    tuple((a - c * b) % P for a, b in zip(orow, vec)),
                    omap.compose(step),
                )
            table.append((pcol, vec, amap))
            table.sort(key=lambda r: r[0])
            if emit:
                self.kept.append(amap)
            return True


def _kernel_generators(red_maps, red_amats, pending, reducer):
    """Generators (mod inner) of the trivial-multiplicator-action kernel.

    Schreier's lemma applied to the map group acting on its own matrix
    image: one kernel element falls out of every non-tree edge of the
    Cayley graph over the matrix-distinct generators, plus the conjugates
    of the kernel generators themselves by the transversal.  Transversal
    maps and their inverses are maintained incrementally so each edge
    costs a bounded number of compositions; every harvested element goes
    through the reducer, which keeps only proper generators.
    """
    for k in pending:
        reducer.reduce(k)
    if not red_amats:
        return reducer.kept
    ident = _mat_identity(len(red_amats[0]))
    id_map = identity_map(reducer.pres)
    gen_inv = {}

    def geninv(gi):
        if gi not in gen_inv:
            gen_inv[gi] = _aut_inverse(red_maps[gi])
        return gen_inv[gi]

    kernel_gens = list(reducer.kept)
    tmap = {ident: id_map}
    imap = {ident: id_map}
    edges = []
    frontier = [ident]
    while frontier:
        nxt = []
        for m in frontier:
            for gi in range(len(red_amats)):
                prod = _mat_mul(m, red_amats[gi])
                if prod not in tmap:
                    tmap[prod] = red_maps[gi].compose(tmap[m])
                    imap[prod] = imap[m].compose(geninv(gi))
                    nxt.append(prod)
                    if len(tmap) > MAX_MAT_CLOSURE:
                        raise BudgetError(
                            f"matrix action closure exceeded {MAX_MAT_CLOSURE}"
                        )
                else:
                    edges.append((m, gi, prod))
        frontier = nxt
    for m, gi, prod in edges:
        k = imap[prod].compose(red_maps[gi].compose(tmap[m]))
        reducer.reduce(k)
    for k in kernel_gens:
        for m, t in tmap.items():
            if m == ident:
                continue
            reducer.reduce(imap[m].compose(k.compose(t)))
    return reducer.kept


def _light_automorphism_check(pres, images):
    """Frattini invertibility plus the minimal generators' power relations."""
    mins = pres.minimal_gens
    rows = [[images[m][k] % P for k in mins] for m in mins]
    if len(vectable.rref_single(rows)) != len(mins):
        return False

    def word(v):
        out = pcgroup.identity(pres)
        for i, e in enumerate(v):
            for _ in range(e):
                out = pcgroup.multiply(out, images[i], pres)
        return out

    for i in mins:
        if pcgroup.power(images[i], P, pres) != word(pres.power[i]):
            return False
    j = pres.ngens - 1
    for i in mins:
        if i < j and pcgroup.commutator(images[j], images[i], pres) != word(
            pres.comm[j][i]
        ):
            return False
    return True


@dataclass
class _Child:
    pres: PcPresentation
    step: int
    key: int
    basis: AutBasis
    xy: tuple
    pattern: object
    fp: tuple
    series: object
    orbit_size: int


def _transport_xy(xy, nn):
    if xy is None:
        return None
    return tuple(_embed(v, nn) for v in xy)


def _node_pattern(pres, xy):
    try:
        if xy is not None:
            return artin_pattern(pres, xy[0], xy[1])
        return artin_pattern(pres)
    except AbelianizationTypeError:
        return None
    except InputError:
        return None


def _descend(pres, cover_data, basis, step, xy=None, thorough=False):
    """One generation step: orbit representatives with threaded bases."""
    if step < 1:
        raise InputError(f"step size must be positive, got {step}")
    if step > cover_data.nucleus_rank:
        return []
    cov = cover_data.cover
    n = pres.ngens
    nn = cov.ngens
    q = cover_data.multiplicator_rank
    c = p_class(pres)
    stack, keys = _allowable_dual_stack(cover_data, step)
    if len(keys) == 0:
        return []
    amats_all = [multiplicator_matrix(cover_data, mp) for mp in basis.maps]
    idmat = _mat_identity(q)
    # one representative per distinct multiplicator action drives the
    # matrix-side work; duplicate and trivially-acting generators turn into
    # kernel elements, which the reducer shrinks to proper generators
    reducer = _TrivialActionReducer(pres)
    by_mat = {}
    red_maps = []
    red_amats = []
    pending = []
    rep_inv = {}
    for mp, am in zip(basis.maps, amats_all):
        if am == idmat:
            pending.append(mp)
            continue
        rep = by_mat.get(am)
        if rep is None:
            by_mat[am] = mp
            red_maps.append(mp)
            red_amats.append(am)
        else:
            key = id(rep)
            if key not in rep_inv:
                rep_inv[key] = _aut_inverse(rep)
            pending.append(mp.compose(rep_inv[key]))
    kmaps = _kernel_generators(red_maps, red_amats, pending, reducer)
    red_basis = AutBasis(
        pres, tuple(red_maps), exact=basis.exact, source=basis.source
    )
    amats = red_amats
    ainvs = [_mat_inverse(a) for a in amats]
    tmats = [tuple(zip(*ai)) for ai in ainvs]
    orbits, lookup = _orbit_split(stack, keys, tmats)
    inv_cache = {}
    # kernel generators act trivially on the multiplicator, hence stabilize
    # every allowable subspace; their cover lifts are subspace-independent
    klifts = []
    for kmap in kmaps:
        lifted = _cover_lift_images(cover_data, kmap)
        if _matrix_from_lift(cover_data, lifted, "kernel generator") != idmat:
            raise ConsistencyError(
                "kernel generator does not act trivially on the multiplicator"
            )
        klifts.append(lifted)
    children = []
    for members in orbits:
        rep, schreier = _orbit_schreier(
            stack, keys, members, tmats, amats, ainvs, lookup
        )
        urows = vectable.nullspace([list(r) for r in stack[rep]], q)
        uelts = []
        for row in urows:
            v = bytearray(nn)
            for f, t in enumerate(cover_data.tail_positions):
                v[t] = row[f] % P
            uelts.append(bytes(v))
        usub = subgroup_closure(uelts, cov)
        if len(usub.igs) != q - step:
            raise ConsistencyError("allowable subgroup has wrong rank")
        D, proj, _sec = quotient_with_map(
            cov, usub, name=f"{pres.name}?", defs=cov.defs
        )
        if D.ngens != n + step:
            raise ConsistencyError("descendant has wrong order")
        if p_class(D) != c + 1:
            raise ConsistencyError("descendant has wrong 3-class")
        retained = [i for i in range(nn) if i not in usub.leads]
        maps = []
        full_checked = False
        for mat, word in schreier:
            sigma = _materialize_word(red_basis, word, inv_cache)
            lifted = _cover_lift_images(cover_data, sigma)
            amat = _matrix_from_lift(cover_data, lifted, sigma.pres.name)
            if amat != mat:
                raise ConsistencyError(
                    "stabilizer word does not reproduce its matrix"
                )
            images = tuple(proj(lifted[i]) for i in retained)
            if thorough or not full_checked or D.ngens <= 8:
                ok = is_automorphism(D, images)
                full_checked = True
            else:
                ok = _light_automorphism_check(D, images)
            if not ok:
                raise ConsistencyError("lifted stabilizer map is not an automorphism")
            maps.append(AutMap(D, images))
        id_images = tuple(_gen_vec(D.ngens, i) for i in range(D.ngens))
        for lifted in klifts:
            images = tuple(proj(lifted[i]) for i in retained)
            if images == id_images:
                continue
            if not _light_automorphism_check(D, images):
                raise ConsistencyError("lifted kernel map is not an automorphism")
            maps.append(AutMap(D, images))
        nd = D.ngens
        for mgen in D.minimal_gens:
            g = _gen_vec(nd, mgen)
            images = tuple(pcgroup.conjugate(_gen_vec(nd, i), g, D) for i in range(nd))
            maps.append(AutMap(D, images))
        new_layer = list(range(n, nd))
        mins_d = D.minimal_gens
        for mgen in mins_d:
            for z in new_layer:
                seed = {mm: _gen_vec(nd, mm) for mm in mins_d}
                seed[mgen] = pcgroup.multiply(
                    _gen_vec(nd, mgen), _gen_vec(nd, z), D
                )
                images = extend_minimal_images(D, seed)
                if not is_automorphism(D, images):
                    raise ConsistencyError("central map is not an automorphism")
                maps.append(AutMap(D, images))
        seen_images = {id_images}
        uniq = []
        for mpp in maps:
            if mpp.images in seen_images:
                continue
            seen_images.add(mpp.images)
            uniq.append(mpp)
        child_basis = AutBasis(D, tuple(uniq), exact=basis.exact, source="threaded")
        xy_d = _transport_xy(xy, nn)
        if xy_d is not None:
            xy_d = tuple(proj(v) for v in xy_d)
        pat = _node_pattern(D, xy_d)
        fp, sd = _fingerprint_parts(D, pat)
        children.append(
            _Child(
                pres=D,
                step=step,
                key=int(keys[rep]),
                basis=child_basis,
                xy=xy_d,
                pattern=pat,
                fp=fp,
                series=sd,
                orbit_size=len(members),
            )
        )
    children.sort(key=lambda ch: (repr(ch.fp), ch.key))
    return children


def _rename(pres, name):
    object.__setattr__(pres, "name", name)
    return pres


def immediate_descendants(pres, step=1, basis=None, thorough=False):
    """Immediate descendants of the given step size, one per isomorphism class."""
    cd = p_cover(pres)
    if step < 1:
        raise InputError(f"step size must be positive, got {step}")
    if step > cd.nucleus_rank:
        return []
    if basis is None:
        basis = automorphism_generators(pres)
    kids = _descend(pres, cd, basis, step, xy=None, thorough=thorough)
    for k, ch in enumerate(kids, start=1):
        _rename(ch.pres, f"{pres.name}-#{step};{k}")
    return [ch.pres for ch in kids]


# ---------------------------------------------------------------------------
# fingerprints

def _fingerprint_parts(pres, pattern):
    sd = group_series(pres)
    der = structure.derived_subgroup(pres)
    ab = abelian_quotient_invariants(pres, der)
    fp = (
        pres.ngens,
        sd.nilpotency_class,
        sd.coclass,
        ab,
        pattern.tau if pattern else None,
        pattern.kappa if pattern else None,
        sd.derived_length,
    )
    return fp, sd


def fingerprint(pres, pattern=None, with_cover=False):
    """(order exponent, class, coclass, commutator-quotient type, tau, kappa,
    derived length, relation rank, nuclear rank); the last two are None
    unless with_cover is set, as covering a large group costs real time."""
    if pattern is None:
        pattern = _node_pattern(pres, None)
    fp, _ = _fingerprint_parts(pres, pattern)
    if with_cover:
        cd = p_cover(pres)
        return fp + (cd.multiplicator_rank, cd.nucleus_rank)
    return fp + (None, None)


def fingerprint_hash(fp):
    """Stable short hash over the cover-independent fingerprint prefix."""
    return hashlib.sha256(repr(fp[:7]).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# pattern monotonicity along tree edges

_PERMS3 = tuple(itertools.permutations(range(3)))


def _renumber_digit(digit, pi):
    if digit in (1, 2, 3):
        return pi[digit - 1] + 1
    return digit


def assert_edge_monotone(parent_pat, child_pat, edge):
    """Raw transfer data only sharpens down an edge: each tau slot of the
    child dominates the parent's, and a nonzero kernel digit is frozen."""
    for i in range(4):
        if not ati_dominates(child_pat.tau_raw[i], parent_pat.tau_raw[i]):
            raise ConsistencyError(
                f"tau slot {i + 1} shrank along {edge}: "
                f"{parent_pat.tau_raw[i]} -> {child_pat.tau_raw[i]}"
            )
        pk = parent_pat.kappa_raw[i]
        ck = child_pat.kappa_raw[i]
        if pk != 0 and ck != pk:
            raise ConsistencyError(
                f"kernel digit {i + 1} moved along {edge}: {pk} -> {ck}"
            )


def pattern_can_reach(pat, target_kappa, target_tau):
    """Conservative test: could some descendant of a group with this raw
    pattern have the given canonical pattern?  Never rejects a true
    ancestor; renumbering freedom is handled by trying all matchings."""
    if pat is None:
        return False
    for pm in _PERMS3:
        if not all(
            ati_dominates(target_tau[pm[i]], pat.tau_raw[i]) for i in range(3)
        ):
            continue
        if not ati_dominates(target_tau[3], pat.tau_raw[3]):
            continue
        for pi in _PERMS3:
            ok = True
            for i in range(3):
                ck = pat.kappa_raw[i]
                if ck and target_kappa[pm[i]] != _renumber_digit(ck, pi):
                    ok = False
                    break
            ck4 = pat.kappa_raw[3]
            if ok and ck4 and target_kappa[3] != _renumber_digit(ck4, pi):
                ok = False
            if ok:
                return True
    return False


def tau2_can_reach(pat, allowed):
    """Same idea one layer deeper, against a family of allowed targets."""
    if pat is None:
        return False
    for t2 in allowed:
        for pm in _PERMS3:
            if all(
                ati_dominates(t2[pm[i]], pat.tau2[i]) for i in range(3)
            ) and ati_dominates(t2[3], pat.tau2[3]):
                return True
    return False


def _tau2_matches(node_tau2, given):
    """Exact match up to renumbering of the first three slots."""
    return (
        sorted(tuple(t) for t in node_tau2[:3]) == sorted(tuple(t) for t in given[:3])
        and tuple(node_tau2[3]) == tuple(given[3])
    )


# ---------------------------------------------------------------------------
# descendant trees

@dataclass
class TreeNode:
    name: str
    parent: str
    step: int
    order_exponent: int
    fingerprint: tuple
    fp_hash: str
    kappa: tuple
    tau: tuple
    action: ActionReport
    metabelian: bool
    mainline: bool
    paper_id: str = None
    children: list = field(default_factory=list)
    pruned: bool = False
    pres: PcPresentation = field(default=None, repr=False)
    pattern: object = field(default=None, repr=False)
    basis: AutBasis = field(default=None, repr=False)
    xy: tuple = field(default=None, repr=False)
    d2: int = None
    nu: int = None


@dataclass
class DescendantTree:
    root: str
    nodes: dict
    max_order_exponent: int
    pruned: bool

    def __iter__(self):
        return iter(self.nodes.values())

    def levels(self):
        """Node names per order exponent, in tree order."""
        out = {}
        for node in self.nodes.values():
            out.setdefault(node.order_exponent, []).append(node.name)
        return out


def _normalize_target(target):
    if target is None:
        return None
    if hasattr(target, "kappa") and hasattr(target, "tau"):
        return (tuple(target.kappa), tuple(tuple(t) for t in target.tau))
    kappa, tau = target
    return (tuple(kappa), tuple(tuple(t) for t in tau))


def build_tree(
    root,
    max_order_exponent,
    target=None,
    target2=None,
    require_action=None,
    max_nodes=600,
    paper_ids=None,
    root_basis=None,
    thorough=False,
    steps=None,
    stable_only=False,
):
    """Breadth-first descendant tree of the root.

    steps restricts the explored step sizes; None explores every allowable
    step.  Pass steps=(1,) for the unit-step tree, whose vertices all keep
    the root's coclass.

    stable_only keeps only descendants whose Artin pattern — kappa and tau
    in canonical form — equals the root's.  Pattern growth is monotone
    along tree edges, so a vertex with a changed pattern can never have a
    stable descendant and its whole subtree is cut.  This "stable pattern"
    subtree is the tree the survey diagrams draw.

    target (a pattern or a (kappa, tau) pair) switches on conservative
    pruning: subtrees that provably cannot contain a group with the target
    pattern are cut.  target2 is an optional family of second-layer tau
    values pruned against the same way.  require_action="S3" additionally
    cuts subtrees whose action on the two-generator quotient can no longer
    contain S3 (the image only shrinks down the tree).  Sibling numbering
    is assigned before pruning, so node names are stable across settings.
    """
    if require_action not in (None, "S3"):
        raise InputError(f"unsupported action requirement {require_action!r}")
    if steps is not None:
        steps = tuple(sorted(set(int(s) for s in steps)))
        if not steps or steps[0] < 1:
            raise InputError(f"step sizes must be positive, got {steps!r}")
    target = _normalize_target(target)
    if target2 is not None:
        target2 = tuple(tuple(tuple(t) for t in t2) for t2 in target2)
    basis = root_basis or automorphism_generators(root)
    xy = None
    pat = _node_pattern(root, None)
    if stable_only and pat is None:
        raise InputError(
            "stable_only needs a root whose Artin pattern is defined"
        )
    if pat is not None:
        xy = (pat.x, pat.y)
    fp, sd = _fingerprint_parts(root, pat)
    action = s3_action_check(root, basis=basis)
    nodes = {}
    root_node = TreeNode(
        name=root.name,
        parent=None,
        step=0,
        order_exponent=root.ngens,
        fingerprint=fp,
        fp_hash=fingerprint_hash(fp),
        kappa=pat.kappa if pat else None,
        tau=pat.tau if pat else None,
        action=action,
        metabelian=sd.metabelian,
        mainline=action.klass == "S3" and action.minus_identity,
        pres=root,
        pattern=pat,
        basis=basis,
        xy=xy,
    )
    nodes[root.name] = root_node
    queue = [root_node]
    while queue:
        node = queue.pop(0)
        if node.order_exponent >= max_order_exponent:
            continue
        cd = p_cover(node.pres)
        node.d2 = cd.multiplicator_rank
        node.nu = cd.nucleus_rank
        for s in cd.allowable_steps:
            if steps is not None and s not in steps:
                continue
            if node.order_exponent + s > max_order_exponent:
                continue
            kids = _descend(
                node.pres, cd, node.basis, s, xy=node.xy, thorough=thorough
            )
            for k, ch in enumerate(kids, start=1):
                name = f"{node.name}-#{s};{k}"
                _rename(ch.pres, name)
                if node.pattern is not None and ch.pattern is not None:
                    assert_edge_monotone(
                        node.pattern, ch.pattern, f"{node.name} -> {name}"
                    )
                ch_action = s3_action_check(ch.pres, basis=ch.basis)
                child_node = TreeNode(
                    name=name,
                    parent=node.name,
                    step=s,
                    order_exponent=ch.pres.ngens,
                    fingerprint=ch.fp,
                    fp_hash=fingerprint_hash(ch.fp),
                    kappa=ch.pattern.kappa if ch.pattern else None,
                    tau=ch.pattern.tau if ch.pattern else None,
                    action=ch_action,
                    metabelian=ch.series.metabelian,
                    mainline=ch_action.klass == "S3" and ch_action.minus_identity,
                    pres=ch.pres,
                    pattern=ch.pattern,
                    basis=ch.basis,
                    xy=ch.xy,
                )
                drop = False
                if stable_only and (
                    ch.pattern is None
                    or ch.pattern.kappa != pat.kappa
                    or ch.pattern.tau != pat.tau
                ):
                    drop = True
                if not drop and target is not None and not pattern_can_reach(
                    ch.pattern, target[0], target[1]
                ):
                    drop = True
                if not drop and target2 is not None and not tau2_can_reach(
                    ch.pattern, target2
                ):
                    drop = True
                if (
                    not drop
                    and require_action == "S3"
                    and ch_action.exact
                    and ch_action.klass not in ("S3", "inconclusive")
                ):
                    drop = True
                if drop:
                    node.pruned = True
                    continue
                node.children.append(name)
                nodes[name] = child_node
                if len(nodes) > max_nodes:
                    raise BudgetError(
                        f"descendant tree exceeded {max_nodes} nodes"
                    )
                queue.append(child_node)
    tree = DescendantTree(
        root=root.name,
        nodes=nodes,
        max_order_exponent=max_order_exponent,
        pruned=(
            target is not None
            or target2 is not None
            or require_action is not None
            or stable_only
        ),
    )
    if paper_ids:
        attach_paper_ids(tree, paper_ids)
    return tree


def parent_presentation(pres, name=None):
    """The unique parent in the generation hierarchy.

    The parent of a non-elementary p-group is its quotient by the last
    nontrivial term of the lower exponent-p central series; every group
    arises as an immediate descendant of its parent.
    """
    series = exponent_p_central_series(pres)
    if len(series) < 3:
        raise InputError(
            f"{pres.name}: elementary abelian groups have no parent"
        )
    last = series[-2]
    Q, _proj, _sec = quotient_with_map(
        pres, last, name=name or f"{pres.name}-parent"
    )
    return Q


def tree_census(tree):
    """Number of nodes per order exponent."""
    return {e: len(names) for e, names in tree.levels().items()}


# ---------------------------------------------------------------------------
# curated identifier mapping and DOT export

def load_paper_ids(source):
    """Parse an 'order identifier fingerprint-hash' mapping file.

    Returns {(order_exponent, fp_hash): label}; an identifier written as
    103|105 marks hash-equal groups sharing one line.
    """
    import os

    if isinstance(source, str) and "\n" not in source and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source
    out = {}
    for lno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"mapping line {lno}: expected 'order id hash'")
        order, ident, fph = parts
        val = int(order)
        exp = 0
        while val % P == 0:
            val //= P
            exp += 1
        if val != 1:
            raise InputError(f"mapping line {lno}: order {order} is not a power of 3")
        out[(exp, fph)] = f"({order},{ident})"
    return out


def attach_paper_ids(tree, mapping):
    for node in tree.nodes.values():
        node.paper_id = mapping.get((node.order_exponent, node.fp_hash))
    return tree


def emit_dot(tree, legend=True):
    """Graphviz source for the tree, stable across runs.

    Filled nodes carry an S3 action, boxes are non-metabelian, double
    peripheries mark the infinite mainline, edge labels give step sizes.
    """
    lines = ["digraph descendants {"]
    if legend:
        lines.append("  // filled = S3 action on the two-generator quotient")
        lines.append("  // box = not metabelian; doubled border = mainline")
        lines.append("  // edge label = generation step size")
    lines.append("  node [fontsize=10];")
    for node in tree.nodes.values():
        bits = [node.name]
        if node.paper_id:
            bits.append(node.paper_id)
        if node.kappa is not None:
            bits.append(
                "kappa=" + "".join(str(d) for d in node.kappa[:3])
                + ";" + str(node.kappa[3])
            )
        if node.tau is not None:
            bits.append("tau4=" + format_ati(node.tau[3]))
        bits.append(f"fp={node.fp_hash}")
        attrs = ['label="' + "\\n".join(bits) + '"']
        if node.action and node.action.klass == "S3":
            attrs.append("style=filled")
            attrs.append("fillcolor=lightgrey")
        if not node.metabelian:
            attrs.append("shape=box")
        if node.mainline:
            attrs.append("peripheries=2")
        lines.append(f'  "{node.name}" [{", ".join(attrs)}];')
    for node in tree.nodes.values():
        for child in node.children:
            step = tree.nodes[child].step
            lines.append(f'  "{node.name}" -> "{child}" [label="{step}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# identification of the group of the second 3-class field

# Rank bound for the relation rank of the full tower group over these
# complex base fields: d2 <= d + rank(units) + 1 = 2 + 2 + 1.
SHAFAREVICH_BOUND = (2, 5)
# The harmonically balanced routes force the sharper window 3 <= d2 <= 4.
HARMONIC_WINDOW = (3, 4)

_H2SYM = "H_{4,3}"


@dataclass(frozen=True)
class RouteSpec:
    roots: tuple          # catalog names of the tree roots to search
    anchor: str           # catalog name whose pattern is the search target
    max_exponent: int     # order bound 3^e for the candidate search
    kappa2: tuple = None  # required second-layer kernels, or None
    d2_window: tuple = SHAFAREVICH_BOUND


ROUTES = {
    CapitulationClass.DISTINGUISHED: RouteSpec(
        roots=("81_4", "81_3"), anchor="81_4", max_exponent=8
    ),
    CapitulationClass.HARMONIC1: RouteSpec(
        roots=("729_17", "729_20"),
        anchor="729_17",
        max_exponent=7,
        kappa2=("G", "G", "G", _H2SYM),
        d2_window=HARMONIC_WINDOW,
    ),
    CapitulationClass.HARMONIC2: RouteSpec(
        roots=("729_18", "729_21"),
        anchor="2187_180",
        max_exponent=8,
        kappa2=("G", "G", "G", _H2SYM),
        d2_window=HARMONIC_WINDOW,
    ),
    CapitulationClass.TOTAL: RouteSpec(
        roots=("729_9",), anchor="729_9", max_exponent=8, d2_window=(2, 7)
    ),
}


@dataclass(frozen=True)
class Candidate:
    name: str
    paper_id: str
    order_exponent: int
    kappa: tuple
    tau: tuple
    kappa2: tuple
    tau2: tuple
    d2: int
    action: str
    mainline: bool


@dataclass(frozen=True)
class IdentifyResult:
    capitulation: CapitulationClass
    candidates: tuple
    verdict: str
    pending: bool
    notes: tuple


_ROUTE_TREES = {}


def _default_groups():
    import os

    path = os.path.join(os.path.dirname(__file__), "data", "catalog.pc")
    return pcgroup.load_catalog(path)


def _default_paper_ids():
    import os

    path = os.path.join(os.path.dirname(__file__), "data", "paper_ids.txt")
    if os.path.exists(path):
        return load_paper_ids(path)
    return {}


def _route_trees(cls, groups=None, paper_ids=None):
    key = cls if groups is None else None
    if key is not None and key in _ROUTE_TREES:
        return _ROUTE_TREES[key]
    spec = ROUTES[cls]
    if groups is None:
        groups = _default_groups()
    if paper_ids is None:
        paper_ids = _default_paper_ids()
    anchor = groups[spec.anchor]
    target_pat = artin_pattern(anchor)
    trees = []
    for rname in spec.roots:
        root = groups[rname]
        trees.append(
            build_tree(
                root,
                spec.max_exponent,
                target=target_pat,
                require_action="S3",
                paper_ids=paper_ids,
            )
        )
    out = (target_pat, trees)
    if key is not None:
        _ROUTE_TREES[key] = out
    return out


def _as_capitulation(data):
    if isinstance(data, CapitulationClass):
        return data
    if hasattr(data, "kappa"):
        return classify_capitulation(data)
    if isinstance(data, str):
        for member in CapitulationClass:
            if data == member.name or data == member.value:
                return member
        raise InputError(f"unknown capitulation type {data!r}")
    raise InputError(f"cannot read a capitulation type from {data!r}")


def identify_tower_group(data, tau2=None, groups=None, paper_ids=None):
    """Candidates for the Galois group of the second Hilbert 3-class field.

    data is a capitulation type (or a pattern, which is classified first);
    tau2, when known from second-layer field arithmetic, is the 4-slot
    list of type invariants that narrows the candidate list.  The verdict
    reports the implied 3-tower length.
    """
    cls = _as_capitulation(data)
    if cls is CapitulationClass.OTHER:
        raise InputError(
            "no identification route for this capitulation type; "
            "only Distinguished, the two harmonic variants, and Total occur"
        )
    spec = ROUTES[cls]
    target_pat, trees = _route_trees(cls, groups=groups, paper_ids=paper_ids)
    tkappa = tuple(target_pat.kappa)
    ttau = tuple(tuple(t) for t in target_pat.tau)
    notes = []
    cands = []
    for tree in trees:
        for node in tree:
            pat = node.pattern
            if pat is None:
                continue
            if tuple(pat.kappa) != tkappa:
                continue
            if tuple(tuple(t) for t in pat.tau) != ttau:
                continue
            if not node.metabelian:
                continue
            if node.action.klass != "S3":
                continue
            if spec.kappa2 is not None and tuple(pat.kappa2) != spec.kappa2:
                continue
            if tau2 is not None and not _tau2_matches(pat.tau2, tau2):
                continue
            d2 = relation_rank(node.pres)
            lo, hi = spec.d2_window
            if not lo <= d2 <= hi:
                notes.append(
                    f"{node.name}: relation rank {d2} outside the expected "
                    f"window {lo}..{hi}"
                )
            cands.append(
                Candidate(
                    name=node.name,
                    paper_id=node.paper_id,
                    order_exponent=node.order_exponent,
                    kappa=tuple(pat.kappa),
                    tau=tuple(tuple(t) for t in pat.tau),
                    kappa2=tuple(pat.kappa2),
                    tau2=tuple(tuple(t) for t in pat.tau2),
                    d2=d2,
                    action=node.action.klass,
                    mainline=node.mainline,
                )
            )
    if not cands:
        raise InputError(
            f"no candidate matches the {cls.value} capitulation data; "
            "the input is inconsistent"
        )
    seen = {}
    for c in cands:
        seen.setdefault((c.order_exponent, c.kappa, c.tau, c.tau2, c.d2, c.name), c)
    cands = sorted(seen.values(), key=lambda c: (c.order_exponent, c.name))
    pending = False
    if cls is CapitulationClass.TOTAL:
        deep = [c for c in cands if c.d2 > SHAFAREVICH_BOUND[1]]
        if deep and len(deep) == len(cands):
            verdict = "l3 >= 3 possible"
            notes.append(
                "every candidate exceeds the rank bound for a two-stage tower"
            )
        elif deep:
            verdict = "l3 >= 2"
            notes.append(
                "candidates above the two-stage rank bound remain; deeper "
                "towers are possible"
            )
        else:
            verdict = "l3 >= 2"
    else:
        verdict = "l3 = 2"
    if tau2 is None and cls is not CapitulationClass.DISTINGUISHED:
        layers = sorted({c.order_exponent for c in cands})
        if len(layers) > 1 or cls is CapitulationClass.TOTAL:
            pending = True
            notes.append("candidate set pending second-layer field data")
    return IdentifyResult(
        capitulation=cls,
        candidates=tuple(cands),
        verdict=verdict,
        pending=pending,
        notes=tuple(notes),
    )
