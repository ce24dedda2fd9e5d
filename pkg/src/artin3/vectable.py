"""Vectorized element tables and batched F3 linear algebra.

Indexes all 3^n elements of a small pc group and precomputes one
right-multiplication gather table per generator, so that batched group
arithmetic becomes a short sequence of numpy index gathers.  On top of
that sit the brute-force automorphism and isomorphism searches used for
groups up to around 3^7, plus batched row reduction over F3 for the
subspace orbit computations of the descendant machinery.

Element indices are little-endian base-3 words: the element
g_0^{e_0} ... g_{n-1}^{e_{n-1}} gets index sum(e_i * 3^i), so index 0 is
the identity.
"""

import numpy as np

from .errors import BudgetError, InputError
from .pcgroup import P, _mul_gen_pow, inverse, identity

DEFAULT_ELEMENT_CAP = P ** 7


class ElementTable:
    """Gather tables for one group, elements addressed by index."""

    def __init__(self, pres, cap=DEFAULT_ELEMENT_CAP):
        n = pres.ngens
        size = P ** n
        if size > cap:
            raise BudgetError(
                f"element table for order 3^{n} exceeds cap {cap}"
            )
        self.pres = pres
        self.n = n
        self.size = size
        self.weights = (P ** np.arange(n, dtype=np.int64)) if n else np.zeros(0, np.int64)
        # digit matrix: EXPS[a, i] = exponent of g_i in element a
        idx = np.arange(size, dtype=np.int64)
        exps = np.zeros((size, n), dtype=np.uint8)
        for i in range(n):
            exps[:, i] = (idx // P ** i) % P
        self.exps = exps
        # right multiplication by each generator
        gen = np.empty((n, size), dtype=np.int32)
        for a in range(size):
            u = bytes(exps[a].tolist())
            for j in range(n):
                gen[j, a] = self._index(_mul_gen_pow(pres, u, j, 1))
        self.gen = gen
        inv = np.empty(size, dtype=np.int32)
        for a in range(size):
            inv[a] = self._index(inverse(bytes(exps[a].tolist()), pres))
        self.inv = inv
        self._ord = None

    def _index(self, vec):
        return int(sum(vec[i] * P ** i for i in range(self.n)))

    def index_of(self, vec):
        if len(vec) != self.n:
            raise InputError("element vector has wrong length")
        return self._index(vec)

    def vec_of(self, a):
        return bytes(self.exps[a].tolist())

    # batched arithmetic ---------------------------------------------------

    def rmul_elt(self, A, vec):
        """A * v for an index array A and one fixed element vector v."""
        out = np.asarray(A, dtype=np.int32)
        for j in range(self.n):
            for _ in range(vec[j]):
                out = self.gen[j][out]
        return out

    def mul(self, A, B):
        """Elementwise product of two index arrays."""
        out = np.array(A, dtype=np.int32, copy=True)
        digits = self.exps[B]
        for j in range(self.n):
            col = digits[:, j]
            for rep in (1, 2):
                m = col >= rep
                if m.any():
                    out[m] = self.gen[j][out[m]]
        return out

    def invert(self, A):
        return self.inv[np.asarray(A, dtype=np.int32)]

    def cube(self, A):
        return self.mul(self.mul(A, A), A)

    def comm(self, A, B):
        """Elementwise commutator [a, b] = a^-1 b^-1 a b."""
        ia = self.invert(A)
        ib = self.invert(B)
        return self.mul(self.mul(self.mul(ia, ib), A), B)

    def orders(self):
        """Vector of element orders (powers of 3)."""
        if self._ord is None:
            out = np.zeros(self.size, dtype=np.int64)
            out[0] = 1
            cur = np.arange(self.size, dtype=np.int32)
            k = 1
            while (out == 0).any():
                cur = self.cube(cur)
                fresh = (cur == 0) & (out == 0)
                out[fresh] = P ** k
                k += 1
            self._ord = out
        return self._ord

    def word_eval(self, images, word):
        """Ordered product of images[i]^word[i], batched over image arrays."""
        out = None
        for i, e in enumerate(word):
            if not e:
                continue
            term = images[i]
            for _ in range(e - 1):
                term = self.mul(term, images[i])
            out = term if out is None else self.mul(out, term)
        if out is None:
            return np.zeros(len(images[0]) if images else 0, dtype=np.int32)
        return out

    def perm_of(self, images):
        """Permutation array of the endomorphism sending g_i to images[i]."""
        out = np.zeros(self.size, dtype=np.int32)
        for i in range(self.n):
            col = self.exps[:, i]
            imv = self.vec_of(images[i])
            for rep in (1, 2):
                m = col >= rep
                if m.any():
                    out[m] = self.rmul_elt(out[m], imv)
        return out


# ---------------------------------------------------------------------------
# homomorphism candidate search

def _def_word(pres, m):
    """Relation right-hand side defining g_m, with the g_m entry removed."""
    d = pres.defs[m]
    if d[0] == "pow":
        rel = pres.power[d[1]]
    else:
        rel = pres.comm[d[1]][d[2]]
    if rel[m] != 1:
        raise InputError(f"definition of {pres.labels[m]} is not normalized")
    w = bytearray(rel)
    w[m] = 0
    if any(w[m:]):
        raise InputError(f"definition of {pres.labels[m]} has trailing terms")
    return bytes(w)


def _extend_images(tab_target, pres_src, seeds):
    """Images of every source generator from images of the minimal ones.

    seeds maps minimal generator index to an index array in the target
    table.  Defined generators are filled in along the definition chain.
    Returns a list of index arrays, one per source generator.
    """
    images = [None] * pres_src.ngens
    for m, arr in seeds.items():
        images[m] = np.asarray(arr, dtype=np.int32)
    for m in range(pres_src.ngens):
        if images[m] is not None:
            continue
        d = pres_src.defs[m]
        w = _def_word(pres_src, m)
        head = tab_target.word_eval(images, w)
        if d[0] == "pow":
            body = tab_target.cube(images[d[1]])
        else:
            body = tab_target.comm(images[d[1]], images[d[2]])
        images[m] = tab_target.mul(tab_target.invert(head), body)
    return images


def _relations_hold(tab_target, pres_src, images):
    """Boolean mask of candidates satisfying every source relation."""
    ok = np.ones(len(images[0]), dtype=bool)
    n = pres_src.ngens
    for i in range(n):
        lhs = tab_target.cube(images[i])
        rhs = tab_target.word_eval(images, pres_src.power[i])
        ok &= lhs == rhs
        if not ok.any():
            return ok
    for j in range(1, n):
        for i in range(j):
            lhs = tab_target.comm(images[j], images[i])
            rhs = tab_target.word_eval(images, pres_src.comm[j][i])
            ok &= lhs == rhs
            if not ok.any():
                return ok
    return ok


def _minimal_candidate_grid(tab, pres_src, pres_dst, pair_cap):
    """Arrays of candidate images for the minimal generators of pres_src.

    Candidates are filtered by element order and by invertibility of the
    induced map on the Frattini quotient, which for equal generator rank
    makes every surviving relation-preserving map surjective.
    """
    from .pcgroup import element_order, P as _P

    mins = pres_src.minimal_gens
    d = len(mins)
    if d != len(pres_dst.minimal_gens):
        return None
    if d == 0:
        return []
    if d > 3:
        raise BudgetError(f"generator rank {d} image search not supported")
    ords = tab.orders()
    cols = []
    for m in mins:
        gvec = bytearray(pres_src.ngens)
        gvec[m] = 1
        o = element_order(bytes(gvec), pres_src)
        cols.append(np.nonzero(ords == o)[0].astype(np.int32))
    # Frattini coordinates: digits at the minimal generator positions
    dstmins = list(pres_dst.minimal_gens)
    coords = tab.exps[:, dstmins].astype(np.int64)
    grids = np.meshgrid(*cols, indexing="ij")
    flat = [g.reshape(-1) for g in grids]
    total = len(flat[0])
    if total > pair_cap:
        raise BudgetError(
            f"{total} candidate image tuples exceed cap {pair_cap}"
        )
    mats = np.stack([coords[f] for f in flat], axis=1)  # (N, d, d)
    if d == 1:
        det = mats[:, 0, 0]
    elif d == 2:
        det = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    else:
        det = (
            mats[:, 0, 0] * (mats[:, 1, 1] * mats[:, 2, 2] - mats[:, 1, 2] * mats[:, 2, 1])
            - mats[:, 0, 1] * (mats[:, 1, 0] * mats[:, 2, 2] - mats[:, 1, 2] * mats[:, 2, 0])
            + mats[:, 0, 2] * (mats[:, 1, 0] * mats[:, 2, 1] - mats[:, 1, 1] * mats[:, 2, 0])
        )
    keep = det % _P != 0
    return [f[keep] for f in flat]


def automorphism_seeds(pres, tab=None, pair_cap=30_000_000):
    """All automorphisms, as an (N, d) array of minimal generator images.

    Exhaustive over image tuples that preserve element orders and induce
    an invertible map on the Frattini quotient; relation checking does the
    rest.  N is the order of the automorphism group.
    """
    if tab is None:
        tab = ElementTable(pres)
    mins = pres.minimal_gens
    if len(mins) == 0:
        return tab, np.zeros((1, 0), dtype=np.int32)
    flat = _minimal_candidate_grid(tab, pres, pres, pair_cap)
    seeds = {m: flat[k] for k, m in enumerate(mins)}
    images = _extend_images(tab, pres, seeds)
    ok = _relations_hold(tab, pres, images)
    out = np.stack([f[ok] for f in flat], axis=1)
    if len(out) == 0:
        raise InputError("automorphism scan lost the identity map")
    return tab, out


def are_isomorphic(pres_a, pres_b, cap=DEFAULT_ELEMENT_CAP, pair_cap=30_000_000):
    """Exhaustive isomorphism test between two pc groups."""
    if pres_a.ngens != pres_b.ngens:
        return False
    tab = ElementTable(pres_b, cap=cap)
    mins = pres_a.minimal_gens
    if len(mins) != len(pres_b.minimal_gens):
        return False
    if len(mins) == 0:
        return True
    flat = _minimal_candidate_grid(tab, pres_a, pres_b, pair_cap)
    if flat is None:
        return False
    if any(len(f) == 0 for f in flat):
        return False
    seeds = {m: flat[k] for k, m in enumerate(mins)}
    images = _extend_images(tab, pres_a, seeds)
    ok = _relations_hold(tab, pres_a, images)
    return bool(ok.any())


# ---------------------------------------------------------------------------
# permutation closure helpers

def compose_seed(tab, perm, seed):
    """Image tuple of (phi o psi) given phi as a permutation array."""
    return tuple(int(perm[s]) for s in seed)


def generating_subset(tab, pres, seeds):
    """Greedy small generating set for an automorphism list.

    seeds is the (N, d) image array of the full group.  Returns indices
    into seeds whose maps generate everything, verified by closing the
    subgroup over image tuples.
    """
    mins = pres.minimal_gens
    idseed = tuple(tab.index_of(_gen_vec(pres.ngens, m)) for m in mins)
    total = len(seeds)
    chosen = []
    perms = []
    closure = {idseed}
    order = 1
    for k in range(total):
        key = tuple(int(v) for v in seeds[k])
        if key in closure:
            continue
        chosen.append(k)
        perms.append(tab.perm_of(list(_full_images(tab, pres, seeds[k]))))
        closure = _close(tab, perms, idseed)
        order = len(closure)
        if order == total:
            break
    if order != total:
        raise InputError(
            f"generating set closure reached {order} of {total} automorphisms"
        )
    return chosen


def _gen_vec(n, i):
    v = bytearray(n)
    v[i] = 1
    return bytes(v)


def _full_images(tab, pres, seed):
    seeds = {m: np.array([s], dtype=np.int32) for m, s in zip(pres.minimal_gens, seed)}
    images = _extend_images(tab, pres, seeds)
    return [int(a[0]) for a in images]


def _close(tab, perms, idseed):
    closure = {idseed}
    frontier = [idseed]
    while frontier:
        nxt = []
        for s in frontier:
            for perm in perms:
                t = compose_seed(tab, perm, s)
                if t not in closure:
                    closure.add(t)
                    nxt.append(t)
        frontier = nxt
    return closure


# ---------------------------------------------------------------------------
# batched linear algebra over F3

def rref_batch(mats):
    """Reduced row echelon form of a stack of F3 matrices, in parallel.

    mats is (B, r, q) with entries mod 3; returns a new array.  Rows of
    each matrix end up in canonical reduced echelon order with zero rows
    at the bottom, so equal row spaces give equal arrays.
    """
    a = np.array(mats, dtype=np.int16, copy=True) % P
    if a.ndim != 3:
        raise InputError("rref_batch expects a (B, r, q) stack")
    B, r, q = a.shape
    cur = np.zeros(B, dtype=np.int64)
    rows = np.arange(r)
    bidx = np.arange(B)
    for col in range(q):
        sub = a[:, :, col]
        valid = (sub != 0) & (rows[None, :] >= cur[:, None])
        has = valid.any(axis=1)
        if not has.any():
            continue
        piv = np.argmax(valid, axis=1)
        hb = bidx[has]
        pv = piv[has]
        cr = cur[has]
        # swap pivot row up
        tmp = a[hb, cr].copy()
        a[hb, cr] = a[hb, pv]
        a[hb, pv] = tmp
        # scale pivot row (inverse of 2 is 2 mod 3)
        lead = a[hb, cr, col]
        a[hb, cr] = (a[hb, cr] * lead[:, None]) % P
        # eliminate the column everywhere else
        factors = a[hb, :, col].copy()
        factors[np.arange(len(hb)), cr] = 0
        a[hb] = (a[hb] - factors[:, :, None] * a[hb, cr][:, None, :]) % P
        cur[has] += 1
    return a.astype(np.uint8)


def pack_rows(mats):
    """Base-3 integer key per matrix in a (B, r, q) stack."""
    B, r, q = mats.shape
    if r * q > 39:
        raise InputError("matrix too large to pack into 64-bit keys")
    w = P ** np.arange(r * q, dtype=np.int64)
    return mats.reshape(B, r * q).astype(np.int64) @ w


def mat_apply(mats, m):
    """Right-multiply every matrix in a (B, r, q) stack by m (q, q)."""
    return (mats.astype(np.int64) @ m.astype(np.int64)) % P


def rref_single(mat):
    """Reduced row echelon form of one F3 matrix given as row tuples."""
    a = [[int(v) % P for v in row] for row in mat]
    if not a:
        return []
    q = len(a[0])
    cur = 0
    for col in range(q):
        piv = None
        for k in range(cur, len(a)):
            if a[k][col] % P:
                piv = k
                break
        if piv is None:
            continue
        a[cur], a[piv] = a[piv], a[cur]
        lead = a[cur][col] % P
        inv = lead  # 1 and 2 are self-inverse mod 3
        a[cur] = [(v * inv) % P for v in a[cur]]
        for k in range(len(a)):
            if k != cur and a[k][col] % P:
                f = a[k][col] % P
                a[k] = [(a[k][i] - f * a[cur][i]) % P for i in range(q)]
        cur += 1
        if cur == len(a):
            break
    a = [row for row in a if any(row)]
    return a


def nullspace(rows, q):
    """Basis of the right nullspace of the F3 row span, as row vectors."""
    red = rref_single([list(r) for r in rows]) if rows else []
    leads = []
    for row in red:
        for c in range(q):
            if row[c]:
                leads.append(c)
                break
    free = [c for c in range(q) if c not in leads]
    basis = []
    for f in free:
        v = [0] * q
        v[f] = 1
        for k, row in enumerate(red):
            v[leads[k]] = (-row[f]) % P
        basis.append(v)
    return basis
