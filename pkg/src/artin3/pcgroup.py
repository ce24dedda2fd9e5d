"""Power-commutator presentations of finite 3-groups and collection.

A group of order 3^n is given by generators g_1 < g_2 < ... < g_n with
relations

    g_i^3 = w_i            (a normal word in g_{i+1}, ..., g_n)
    [g_j, g_i] = w_ji      (j > i, a normal word in g_{j+1}, ..., g_n)

where a normal word is a product g_{k_1}^{e_1} * ... * g_{k_r}^{e_r} with
k_1 < ... < k_r and exponents in {1, 2}.  Every element then has a unique
normal form, stored here as a bytes vector of exponents.  Multiplication is
collection from the left: moving a generator leftwards past higher ones via
precomputed conjugates (g_k^a)^(g_j^e), with power relations absorbing
exponent overflow.  The conjugate table is bootstrapped in decreasing order
of the conjugating generator, so every lookup made while computing an entry
refers to an entry that is already present.

Presentations are written in a small text format:

    group c81_4
    gens x, y, s2
    pow x^9 = 1
    pow y^3 = s2
    comm [y,x] = s2
    end

Composite powers such as x^9 are refined away by auxiliary generators
(x3 = x^3) inserted directly after their base, so the stored presentation
always has single-step power relations.  Relations not mentioned default to
trivial; if that makes the presentation inconsistent, a bounded search over
the unspecified power slots looks for a consistent completion and flags it.
The same format, with ';' instead of newlines and without the group/end
bracket, is accepted inline.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from .errors import BudgetError, CatalogError, InputError

__all__ = [
    "PcPresentation",
    "ConsistencyReport",
    "parse_presentation",
    "print_presentation",
    "load_catalog",
    "identity",
    "elt",
    "collect",
    "multiply",
    "inverse",
    "power",
    "conjugate",
    "commutator",
    "element_order",
    "check_consistency",
    "enumerate_elements",
]

P = 3

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
# group names may start with a digit (SmallGroups-style "81_4")
_GROUP_NAME_RE = re.compile(r"^[A-Za-z0-9_]+$")


# ---------------------------------------------------------------------------
# words

def _parse_word(text, index, where=""):
    """Parse 'x^2*y' into ((i_x, 2), (i_y, 1)). '1' is the empty word."""
    text = text.strip()
    if text == "1":
        return ()
    letters = []
    for piece in text.split("*"):
        piece = piece.strip()
        if not piece:
            raise CatalogError(f"empty factor in word {text!r} {where}")
        if "^" in piece:
            name, _, exp = piece.partition("^")
            name = name.strip()
            try:
                e = int(exp)
            except ValueError:
                raise CatalogError(f"bad exponent {exp!r} in {text!r} {where}")
        else:
            name, e = piece, 1
        if name not in index:
            raise CatalogError(f"unknown generator {name!r} in {text!r} {where}")
        letters.append((index[name], e))
    return tuple(letters)


def _format_word(vec, labels):
    parts = []
    for i, e in enumerate(vec):
        if e == 1:
            parts.append(labels[i])
        elif e:
            parts.append(f"{labels[i]}^{e}")
    return "*".join(parts) if parts else "1"


def _word_to_vec(word, n, min_index, where=""):
    """Normal word -> exponent vector; enforces ascending support > min_index."""
    vec = bytearray(n)
    last = min_index
    for idx, e in word:
        if idx <= last:
            raise CatalogError(
                f"relation word is not in normal form {where}: "
                "factors must be strictly ascending and later than the left side"
            )
        if e not in (1, 2):
            raise CatalogError(f"normal word exponents must be 1 or 2 {where}")
        vec[idx] = e
        last = idx
    return bytes(vec)


# ---------------------------------------------------------------------------
# presentation

@dataclass(frozen=True)
class Declared:
    """Source form of a presentation, kept for reporting."""

    gens: tuple
    pow_rels: tuple   # (gen_name, q, word_text)
    comm_rels: tuple  # (later_name, earlier_name, word_text)


@dataclass(frozen=True)
class ConsistencyReport:
    ok: bool
    failures: tuple  # (kind, indices, lhs_vec, rhs_vec)

    def __bool__(self):
        return self.ok


@dataclass(frozen=True, eq=False)
class PcPresentation:
    """Refined power-commutator presentation with collection tables.

    power[i] is the normal form of g_i^3, comm[j][i] (j > i) the normal form
    of [g_j, g_i].  defs[m] records how a non-minimal generator arises:
    ("pow", i) for g_i^3 = ... g_m, ("comm", j, i) for [g_j, g_i] = ... g_m.
    Instances are immutable after construction.
    """

    name: str
    labels: tuple
    power: tuple
    comm: tuple
    defs: tuple = None
    weights: tuple = None
    declared: Declared = None
    completed: tuple = ()

    def __post_init__(self):
        n = len(self.labels)
        if len(self.power) != n or len(self.comm) != n:
            raise InputError("presentation tables have inconsistent sizes")
        ident = bytes(n)
        for i in range(n):
            w = self.power[i]
            if any(w[: i + 1]):
                raise InputError(
                    f"power relation of {self.labels[i]} is not a normal word"
                )
            for j in range(i):
                c = self.comm[i][j]
                if any(c[: i + 1]):
                    raise InputError(
                        f"commutator [{self.labels[i]},{self.labels[j]}] "
                        "is not a normal word"
                    )
        if self.defs is None:
            object.__setattr__(self, "defs", _scan_defs(self))
        if self.weights is None:
            object.__setattr__(self, "weights", _assign_weights(self))
        object.__setattr__(self, "_ident", ident)
        object.__setattr__(self, "_cpow", _build_cpow(self))
        object.__setattr__(self, "_invgen", _build_invgen(self))

    # structural identity, independent of names
    def pc_key(self):
        return (self.power, tuple(tuple(row) for row in self.comm))

    @property
    def ngens(self):
        return len(self.labels)

    @property
    def order_exponent(self):
        return len(self.labels)

    @property
    def minimal_gens(self):
        return tuple(i for i in range(self.ngens) if self.defs[i] is None)

    def index_of(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"no generator named {label!r} in {self.name}")

    def __repr__(self):
        return f"PcPresentation({self.name!r}, order=3^{self.ngens})"


def _scan_defs(pres):
    """Assign defining relations by scanning for pure right-hand sides.

    Commutator relations are preferred, then power relations; each generator
    gets at most one definition and minimal generators get none.
    """
    n = pres.ngens
    defs = [None] * n
    gen_vecs = {}
    for m in range(n):
        v = bytearray(n)
        v[m] = 1
        gen_vecs[bytes(v)] = m
    for j in range(n):
        for i in range(j):
            m = gen_vecs.get(pres.comm[j][i])
            if m is not None and defs[m] is None:
                defs[m] = ("comm", j, i)
    for i in range(n):
        m = gen_vecs.get(pres.power[i])
        if m is not None and defs[m] is None:
            defs[m] = ("pow", i)
    return tuple(defs)


def _assign_weights(pres):
    n = pres.ngens
    w = [1] * n
    for m in range(n):
        d = pres.defs[m]
        if d is None:
            continue
        if d[0] == "pow":
            w[m] = w[d[1]] + 1
        else:
            w[m] = w[d[1]] + w[d[2]]
    return tuple(w)


# ---------------------------------------------------------------------------
# collection

def _build_cpow(pres):
    """Conjugates cpow[k][a][j][e] = (g_k^a)^(g_j^e), k > j, a,e in {1,2}.

    Entries are None when the conjugate is just g_k^a.  Built with j
    descending then k descending, so every lookup a computation needs is
    already in place: collecting products of elements supported above k only
    consults pairs whose conjugating index is >= k.
    """
    n = pres.ngens
    # table[k][a][j] holds [None, vec_for_e1, vec_for_e2], or None if trivial
    table = [[[None] * n for _ in range(3)] for _ in range(n)]
    object.__setattr__(pres, "_cpow", table)
    for j in range(n - 1, -1, -1):
        for k in range(n - 1, j, -1):
            c = pres.comm[k][j]
            if not any(c):
                continue
            v11 = bytearray(n)
            v11[k] = 1
            for m in range(k + 1, n):
                v11[m] = c[m]
            v21 = _mul_vec(pres, bytearray(v11), v11)
            table[k][1][j] = [None, bytes(v11), None]
            table[k][2][j] = [None, bytes(v21), None]
            v12 = _conj_by_gen(pres, v11, j)
            v22 = _conj_by_gen(pres, v21, j)
            table[k][1][j][2] = bytes(v12)
            table[k][2][j][2] = bytes(v22)
    return table


def _conj_by_gen(pres, u, j):
    """Conjugate the normal vector u (supported above j) by g_j."""
    n = pres.ngens
    acc = bytearray(n)
    table = pres._cpow
    for m in range(j + 1, n):
        a = u[m]
        if not a:
            continue
        ent = table[m][a][j]
        if ent is None:
            acc = _mul_gen_pow(pres, acc, m, a)
        else:
            acc = _mul_vec(pres, acc, ent[1])
    return acc


def _mul_gen_pow(pres, vec, j, e):
    """Return vec * g_j^e (e in {1,2}) as a new bytearray."""
    n = pres.ngens
    table = pres._cpow
    t = vec[j] + e
    carry = t >= P
    moved = []
    easy = True
    for m in range(j + 1, n):
        a = vec[m]
        if a:
            ent = table[m][a][j]
            moved.append((m, a, ent))
            if ent is not None:
                easy = False
    if easy and not carry:
        out = bytearray(vec)
        out[j] = t
        return out
    out = bytearray(n)
    out[: j + 1] = vec[: j + 1]
    out[j] = t % P
    if carry:
        pw = pres.power[j]
        if any(pw):
            out = _mul_vec(pres, out, pw)
    for m, a, ent in moved:
        if ent is None:
            out = _mul_gen_pow(pres, out, m, a)
        else:
            out = _mul_vec(pres, out, ent[e])
    return out


def _mul_vec(pres, acc, w):
    """Multiply accumulator by the normal vector w, factor by factor."""
    for m, a in enumerate(w):
        if a:
            acc = _mul_gen_pow(pres, acc, m, a)
    return acc


def _build_invgen(pres):
    """invgen[m][a] = normal form of g_m^(-a), built from the top down."""
    n = pres.ngens
    inv = [[None, None, None] for _ in range(n)]
    for m in range(n - 1, -1, -1):
        w = pres.power[m]
        v1 = bytearray(n)
        v1[m] = 2
        v2 = bytearray(n)
        v2[m] = 1
        if any(w):
            winv = _inv_with(pres, w, inv)
            v1 = _mul_vec(pres, v1, winv)
            v2 = _mul_vec(pres, v2, winv)
        inv[m][1] = bytes(v1)
        inv[m][2] = bytes(v2)
    return inv


def _inv_with(pres, u, invtab):
    n = pres.ngens
    acc = bytearray(n)
    for m in range(n - 1, -1, -1):
        a = u[m]
        if a:
            acc = _mul_vec(pres, acc, invtab[m][a])
    return acc


# ---------------------------------------------------------------------------
# public element operations

def identity(pres):
    return pres._ident


def multiply(a, b, pres):
    acc = bytearray(a)
    for m, e in enumerate(b):
        if e:
            acc = _mul_gen_pow(pres, acc, m, e)
    return bytes(acc)


def inverse(a, pres):
    n = pres.ngens
    acc = bytearray(n)
    inv = pres._invgen
    for m in range(n - 1, -1, -1):
        e = a[m]
        if e:
            acc = _mul_vec(pres, acc, inv[m][e])
    return bytes(acc)


def power(a, k, pres):
    if k < 0:
        return power(inverse(a, pres), -k, pres)
    result = pres._ident
    base = a
    while k:
        if k & 1:
            result = multiply(result, base, pres)
        base = multiply(base, base, pres)
        k >>= 1
    return result


def conjugate(a, b, pres):
    """a^b = b^-1 * a * b."""
    return multiply(inverse(b, pres), multiply(a, b, pres), pres)


def commutator(a, b, pres):
    """[a, b] = a^-1 * b^-1 * a * b."""
    return multiply(inverse(multiply(b, a, pres), pres), multiply(a, b, pres), pres)


def element_order(a, pres):
    order = 1
    u = a
    ident = pres._ident
    while u != ident:
        u = multiply(multiply(u, u, pres), u, pres)
        order *= P
    return order


def collect(word, pres):
    """Normal form of an arbitrary word, given as ((gen_index, exp), ...)."""
    n = pres.ngens
    acc = pres._ident
    for idx, e in word:
        if not 0 <= idx < n:
            raise InputError(f"generator index {idx} out of range")
        base = bytearray(n)
        base[idx] = 1
        acc = multiply(acc, power(bytes(base), e, pres), pres)
    return acc


def elt(pres, text):
    """Parse a word in generator names and collect it to normal form."""
    index = {lab: i for i, lab in enumerate(pres.labels)}
    return collect(_parse_word(text, index), pres)


def enumerate_elements(pres, max_size=P ** 10):
    """All elements in lexicographic order of their exponent vectors."""
    n = pres.ngens
    size = P ** n
    if size > max_size:
        raise BudgetError(
            f"group of order 3^{n} exceeds enumeration bound {max_size}",
            spent=size, budget=max_size,
        )
    return [bytes(v) for v in itertools.product(range(P), repeat=n)]


# ---------------------------------------------------------------------------
# consistency

def _gen_vec(n, i, e=1):
    v = bytearray(n)
    v[i] = e
    return bytes(v)


def consistency_failures(pres, limit=None):
    """Collection overlaps whose two evaluations disagree.

    Checked words, for k > j > i:
        g_k (g_j g_i) = (g_k g_j) g_i
        g_j^3 g_i     = g_j^2 (g_j g_i)
        g_j g_i^3     = (g_j g_i) g_i^2
        g_i^3 g_i     = g_i g_i^3
    Overlaps whose two evaluations are formally identical because every
    involved relation is trivial are skipped.
    """
    n = pres.ngens
    ident = pres._ident
    failures = []

    def trivial_comm(a, b):
        return not any(pres.comm[a][b])

    def trivial_pow(a):
        return not any(pres.power[a])

    for i in range(n):
        gi = _gen_vec(n, i)
        if not trivial_pow(i):
            lhs = multiply(pres.power[i], gi, pres)
            rhs = multiply(gi, pres.power[i], pres)
            if lhs != rhs:
                failures.append(("pow-pow", (i,), lhs, rhs))
                if limit and len(failures) >= limit:
                    return failures
    for j in range(n):
        gj = _gen_vec(n, j)
        gj2 = _gen_vec(n, j, 2)
        for i in range(j):
            gi = _gen_vec(n, i)
            gi2 = _gen_vec(n, i, 2)
            ctriv = trivial_comm(j, i)
            if not (ctriv and trivial_pow(j)):
                lhs = multiply(pres.power[j], gi, pres)
                rhs = multiply(gj2, multiply(gj, gi, pres), pres)
                if lhs != rhs:
                    failures.append(("pow-left", (j, i), lhs, rhs))
                    if limit and len(failures) >= limit:
                        return failures
            if not (ctriv and trivial_pow(i)):
                lhs = multiply(gj, pres.power[i], pres)
                rhs = multiply(multiply(gj, gi, pres), gi2, pres)
                if lhs != rhs:
                    failures.append(("pow-right", (j, i), lhs, rhs))
                    if limit and len(failures) >= limit:
                        return failures
    for k in range(n):
        gk = _gen_vec(n, k)
        for j in range(k):
            gj = _gen_vec(n, j)
            kj = trivial_comm(k, j)
            for i in range(j):
                if kj and trivial_comm(k, i) and trivial_comm(j, i):
                    continue
                gi = _gen_vec(n, i)
                lhs = multiply(multiply(gk, gj, pres), gi, pres)
                rhs = multiply(gk, multiply(gj, gi, pres), pres)
                if lhs != rhs:
                    failures.append(("assoc", (k, j, i), lhs, rhs))
                    if limit and len(failures) >= limit:
                        return failures
    return failures


def check_consistency(pres):
    failures = consistency_failures(pres)
    return ConsistencyReport(ok=not failures, failures=tuple(failures))


# ---------------------------------------------------------------------------
# parsing

def _split_statements(text):
    body = text.strip()
    if "\n" in body:
        return [ln.strip() for ln in body.splitlines() if ln.strip()]
    return [st.strip() for st in body.split(";") if st.strip()]


def _split_outside_brackets(text):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_presentation(text, name=None):
    """Parse one presentation, in block or inline form."""
    statements = _split_statements(text)
    if statements and statements[0].split()[0] == "group":
        if statements[-1] != "end":
            raise CatalogError("group block not closed with 'end'")
        header = statements[0].split()
        if len(header) != 2 or not _GROUP_NAME_RE.match(header[1]):
            raise CatalogError(f"bad group header {statements[0]!r}")
        name = header[1]
        statements = statements[1:-1]
    blocks = _parse_statements(statements, name or "G")
    return _build_presentation(*blocks)


def load_catalog(source):
    """Parse a multi-group catalog file (path or text) into a name -> presentation dict."""
    import os

    if isinstance(source, str) and "\n" not in source and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source
    groups = {}
    lines = [ln.strip() for ln in text.splitlines()]
    block = None
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        if ln.split()[0] == "group":
            if block is not None:
                raise CatalogError("nested group block")
            block = [ln]
        elif ln == "end":
            if block is None:
                raise CatalogError("'end' outside a group block")
            block.append(ln)
            pres = parse_presentation("\n".join(block))
            if pres.name in groups:
                raise CatalogError(f"duplicate group name {pres.name!r}")
            groups[pres.name] = pres
            block = None
        else:
            if block is None:
                raise CatalogError(f"statement outside group block: {ln!r}")
            block.append(ln)
    if block is not None:
        raise CatalogError("unterminated group block")
    return groups


def _parse_statements(statements, name):
    gens = None
    pow_rels = []
    comm_rels = []
    for st in statements:
        keyword, _, payload = st.partition(" ")
        if keyword == "gens":
            if gens is not None:
                raise CatalogError("duplicate gens line")
            gens = [g.strip() for g in payload.split(",") if g.strip()]
            for g in gens:
                if not _NAME_RE.match(g):
                    raise CatalogError(f"bad generator name {g!r}")
            if len(set(gens)) != len(gens):
                raise CatalogError("duplicate generator names")
        elif keyword == "pow":
            for rel in _split_outside_brackets(payload):
                m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*\^\s*(\d+)\s*=\s*(.+)$", rel)
                if not m:
                    raise CatalogError(f"bad pow relation {rel!r}")
                pow_rels.append((m.group(1), int(m.group(2)), m.group(3).strip()))
        elif keyword == "comm":
            for rel in _split_outside_brackets(payload):
                m = re.match(
                    r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*,"
                    r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]\s*=\s*(.+)$",
                    rel,
                )
                if not m:
                    raise CatalogError(f"bad comm relation {rel!r}")
                comm_rels.append((m.group(1), m.group(2), m.group(3).strip()))
        else:
            raise CatalogError(f"unknown statement {st!r}")
    if gens is None:
        raise CatalogError("missing gens line")
    return name, gens, pow_rels, comm_rels


def _build_presentation(name, gens, pow_rels, comm_rels):
    declared = Declared(tuple(gens), tuple(pow_rels), tuple(comm_rels))

    # refine composite powers with auxiliary generators placed after the base
    seen_pow = {}
    for g, q, w in pow_rels:
        if g not in gens:
            raise CatalogError(f"pow relation for undeclared generator {g!r}")
        if g in seen_pow:
            raise CatalogError(f"two pow relations for {g!r}")
        steps = 0
        qq = q
        while qq > 1 and qq % P == 0:
            qq //= P
            steps += 1
        if qq != 1 or steps < 1:
            raise CatalogError(f"power exponent {q} of {g!r} is not a power of 3")
        seen_pow[g] = (steps, w)

    labels = []
    chain_of = {}
    for g in gens:
        labels.append(g)
        chain = [g]
        steps = seen_pow.get(g, (1, None))[0]
        base = g
        for _ in range(steps - 1):
            aux = base + "3"
            while aux in gens or aux in labels:
                aux += "_"
            labels.append(aux)
            chain.append(aux)
            base = aux
        chain_of[g] = chain

    n = len(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    ident = bytes(n)
    power_tab = [ident] * n
    comm_tab = [[ident] * n for _ in range(n)]
    aux_defs = {}
    specified_pow = set()

    for g, (steps, wtext) in seen_pow.items():
        chain = chain_of[g]
        for a, b in zip(chain, chain[1:]):
            v = bytearray(n)
            v[index[b]] = 1
            power_tab[index[a]] = bytes(v)
            specified_pow.add(index[a])
            aux_defs[index[b]] = ("pow", index[a])
        last = index[chain[-1]]
        word = _parse_word(wtext, index, f"(pow {g}^{P ** steps})")
        power_tab[last] = _word_to_vec(word, n, last, f"(pow {g}^{P ** steps})")
        specified_pow.add(last)

    seen_comm = set()
    for a, b, wtext in comm_rels:
        for g in (a, b):
            if g not in index:
                raise CatalogError(f"comm relation uses undeclared generator {g!r}")
        j, i = index[a], index[b]
        if j <= i:
            raise CatalogError(
                f"commutator [{a},{b}] must list the later generator first"
            )
        if (j, i) in seen_comm:
            raise CatalogError(f"two relations for [{a},{b}]")
        seen_comm.add((j, i))
        word = _parse_word(wtext, index, f"(comm [{a},{b}])")
        comm_tab[j][i] = _word_to_vec(word, n, j, f"(comm [{a},{b}])")

    def build(powers, completed=()):
        pres = PcPresentation(
            name=name,
            labels=tuple(labels),
            power=tuple(powers),
            comm=tuple(tuple(row) for row in comm_tab),
            declared=declared,
            completed=tuple(completed),
        )
        for m, d in aux_defs.items():
            if pres.defs[m] is None:
                defs = list(pres.defs)
                defs[m] = d
                object.__setattr__(pres, "defs", tuple(defs))
                object.__setattr__(pres, "weights", _assign_weights(pres))
        return pres

    pres = build(power_tab)
    if check_consistency(pres).ok:
        return pres

    # bounded completion search over unspecified power slots
    free_slots = [i for i in range(n) if i not in specified_pow]
    if not free_slots:
        raise CatalogError(
            f"presentation {name!r} is inconsistent and fully specified"
        )
    options = []
    for i in free_slots:
        opts = [ident]
        for m in range(i + 1, n):
            for e in (1, 2):
                opts.append(_gen_vec(n, m, e))
        options.append(opts)
    total = 1
    for opts in options:
        total *= len(opts)
        if total > P ** 12:
            raise BudgetError(
                f"completion search for {name!r} has {total}+ combinations",
                spent=total, budget=P ** 12,
            )
    for combo in itertools.product(*options):
        powers = list(power_tab)
        for slot, val in zip(free_slots, combo):
            powers[slot] = val
        try:
            cand = build(
                powers,
                completed=tuple(
                    labels[s] for s, v in zip(free_slots, combo) if any(v)
                ),
            )
        except InputError:
            continue
        if check_consistency(cand).ok:
            return cand
    raise CatalogError(
        f"presentation {name!r} is inconsistent and no power completion fixes it"
    )


def print_presentation(pres):
    """Canonical block form; parse(print(P)) has the same tables as P."""
    lines = [f"group {pres.name}"]
    lines.append("gens " + ", ".join(pres.labels))
    for i in range(pres.ngens):
        if any(pres.power[i]):
            lines.append(
                f"pow {pres.labels[i]}^3 = {_format_word(pres.power[i], pres.labels)}"
            )
    for j in range(pres.ngens):
        for i in range(j):
            c = pres.comm[j][i]
            if any(c):
                lines.append(
                    f"comm [{pres.labels[j]},{pres.labels[i]}] = "
                    f"{_format_word(c, pres.labels)}"
                )
    lines.append("end")
    return "\n".join(lines) + "\n"
