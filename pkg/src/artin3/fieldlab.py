"""Number-theoretic front end for the capitulation survey.

The group-theoretic machinery identifies second Hilbert 3-class field
groups from capitulation data; this module supplies that data.  It
filters the primes p = 1 (mod 9) that give pure metacyclic fields
Q(cbrt(p), zeta_3) with the right class group, tests cubic residues,
ingests the bundled survey of 95 fields with their capitulation types,
computes the distribution statistics, and routes every record through
the tower-group identification.

The survey ships as data, not as a recomputation: deriving the
capitulation type of an actual number field needs sextic class-field
machinery far outside this package's scope.  Everything downstream of
the ingested types is recomputed here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

from .errors import InputError
from .transfer import CapitulationClass

__all__ = [
    "FieldRecord",
    "SurveyDistribution",
    "primes_1_mod_9",
    "is_prime",
    "is_cubic_residue",
    "classify_code",
    "load_survey",
    "survey_statistics",
    "tower_candidates",
    "survey_report",
]


# The four capitulation types that occur among the surveyed fields.
# The trailing asterisk is the survey's marker for the second variant
# of the transposition-free type (same kappa digits, different tau).
CODE_CLASSES = {
    "4444": CapitulationClass.DISTINGUISHED,
    "1234": CapitulationClass.HARMONIC1,
    "1234*": CapitulationClass.HARMONIC2,
    "0004": CapitulationClass.TOTAL,
}

_CODE_ALPHABET = set("01234")


@dataclass(frozen=True)
class FieldRecord:
    """One surveyed field: a prime p = 1 (mod 9) and its capitulation type.

    The capitulation code is the 4-character digit string over 0..4
    (kernel of the transfer into each of the four unramified cyclic
    cubic extensions), with an optional trailing ``*`` marking the
    second tau variant.  The derived fields are filled in by
    tower_candidates.
    """

    index: int
    p: int
    kappa_code: str
    derived: CapitulationClass = None
    candidates: tuple = None
    tower_verdict: str = None
    pending: bool = None


def is_prime(n):
    """Deterministic primality test by trial division (survey scale)."""
    n = int(n)
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def primes_1_mod_9(bound):
    """All primes p <= bound with p = 1 (mod 9), ascending.

    These are the rational primes whose pure cubic radicand gives a
    normal closure containing the full 9th cyclotomic layer data; the
    least one is 19.
    """
    bound = int(bound)
    if bound < 2:
        raise InputError(f"prime bound must be at least 2, got {bound}")
    sieve = bytearray([1]) * (bound + 1)
    sieve[0:2] = b"\x00\x00"
    d = 2
    while d * d <= bound:
        if sieve[d]:
            sieve[d * d :: d] = bytearray(len(sieve[d * d :: d]))
        d += 1
    return [n for n in range(19, bound + 1, 9) if sieve[n]]


def is_cubic_residue(a, p):
    """Is a a cube modulo the prime p = 1 (mod 3)?

    Euler's criterion for cubes: for gcd(a, p) = 1 the residue classes
    of cubes are exactly the roots of X^((p-1)/3) = 1.
    """
    p = int(p)
    a = int(a) % p
    if not is_prime(p) or p % 3 != 1:
        raise InputError(f"cubic residues need a prime p = 1 (mod 3), got {p}")
    if a == 0:
        raise InputError(f"{a} is not coprime to {p}")
    return pow(a, (p - 1) // 3, p) == 1


def classify_code(code):
    """Capitulation class of a 4-digit survey code (optional tau marker)."""
    code = str(code).strip()
    body = code[:-1] if code.endswith("*") else code
    if len(body) != 4 or not set(body) <= _CODE_ALPHABET:
        raise InputError(
            f"capitulation code must be 4 digits over 0..4 with an "
            f"optional trailing '*', got {code!r}"
        )
    try:
        return CODE_CLASSES[code]
    except KeyError:
        raise InputError(
            f"no identification route for capitulation code {code!r}; "
            f"the surveyed codes are {sorted(CODE_CLASSES)}"
        ) from None


def load_survey(path):
    """Read the survey CSV (header ``index,p,kappa``) into records.

    Every row is validated: p must be a prime = 1 (mod 9) and the code
    must use the survey alphabet.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "index",
            "p",
            "kappa",
        ]:
            raise InputError(
                f"{path}: expected header 'index,p,kappa', got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputError(
                    f"{path}:{lineno}: expected 3 fields, got {len(row)}"
                )
            try:
                index = int(row[0])
                p = int(row[1])
            except ValueError:
                raise InputError(
                    f"{path}:{lineno}: index and p must be integers, "
                    f"got {row[:2]!r}"
                ) from None
            code = row[2].strip()
            if not is_prime(p):
                raise InputError(f"{path}:{lineno}: p = {p} is not prime")
            if p % 9 != 1:
                raise InputError(
                    f"{path}:{lineno}: p = {p} is not 1 (mod 9)"
                )
            classify_code(code)
            records.append(FieldRecord(index=index, p=p, kappa_code=code))
    return records


@dataclass(frozen=True)
class SurveyDistribution:
    """Counts and percentages per capitulation class over a survey."""

    total: int
    counts: tuple          # ((CapitulationClass, count), ...) fixed order
    percentages: tuple     # parallel to counts, rounded to 0.1
    two_stage_count: int   # records whose tower provably stops at stage 2
    two_stage_total: int
    two_stage_percent: float

    def count(self, cls):
        for c, n in self.counts:
            if c is cls:
                return n
        raise InputError(f"no count for {cls!r}")


_CLASS_ORDER = (
    CapitulationClass.DISTINGUISHED,
    CapitulationClass.HARMONIC1,
    CapitulationClass.HARMONIC2,
    CapitulationClass.TOTAL,
)

# Classes whose identification forces a two-stage tower (the remaining
# class only bounds the length from below).
TWO_STAGE_CLASSES = frozenset(
    {
        CapitulationClass.DISTINGUISHED,
        CapitulationClass.HARMONIC1,
        CapitulationClass.HARMONIC2,
    }
)


def survey_statistics(records):
    """Distribution of capitulation classes and the two-stage proportion."""
    tallies = {cls: 0 for cls in _CLASS_ORDER}
    for rec in records:
        cls = rec.derived or classify_code(rec.kappa_code)
        if cls not in tallies:
            tallies[cls] = 0
        tallies[cls] += 1
    total = len(records)
    counts = tuple((cls, tallies[cls]) for cls in tallies)
    percentages = tuple(
        (cls, round(100.0 * n / total, 1) if total else 0.0)
        for cls, n in counts
    )
    two_stage = sum(n for cls, n in counts if cls in TWO_STAGE_CLASSES)
    return SurveyDistribution(
        total=total,
        counts=counts,
        percentages=percentages,
        two_stage_count=two_stage,
        two_stage_total=total,
        two_stage_percent=round(100.0 * two_stage / total, 2) if total else 0.0,
    )


def tower_candidates(record, groups=None, paper_ids=None):
    """Enrich a record with its tower-group candidates and verdict.

    Routes the capitulation class through the group-theoretic
    identification; the result lists every candidate for the Galois
    group of the second Hilbert 3-class field consistent with the
    surveyed data, plus the implied tower-length verdict.
    """
    from .genealogy import identify_tower_group

    cls = classify_code(record.kappa_code)
    result = identify_tower_group(cls, groups=groups, paper_ids=paper_ids)
    return replace(
        record,
        derived=cls,
        candidates=result.candidates,
        tower_verdict=result.verdict,
        pending=result.pending,
    )


def _candidate_label(c):
    return c.paper_id or c.name


def survey_report(records, enrich=True, groups=None, paper_ids=None):
    """Text report: one line per record plus a summary block.

    With enrich=True every record is routed through the identification
    (the per-class work is cached, so 95 records cost four searches).
    """
    lines = []
    enriched = []
    for rec in records:
        if enrich and rec.candidates is None:
            rec = tower_candidates(rec, groups=groups, paper_ids=paper_ids)
        elif rec.derived is None:
            rec = replace(rec, derived=classify_code(rec.kappa_code))
        enriched.append(rec)
        cand = ""
        verdict = ""
        if rec.candidates is not None:
            shown = [_candidate_label(c) for c in rec.candidates]
            cand = " " + ",".join(shown)
            verdict = f" {rec.tower_verdict}"
            if rec.pending:
                verdict += " (candidate set pending second-layer field data)"
        lines.append(f"{rec.p} {rec.kappa_code} {rec.derived}{cand}{verdict}")
    dist = survey_statistics(enriched)
    lines.append("")
    lines.append(f"fields: {dist.total}")
    for (cls, n), (_, pct) in zip(dist.counts, dist.percentages):
        lines.append(f"  {cls.value}: {n} ({pct}%)")
    lines.append(
        f"two-stage towers: {dist.two_stage_count}/{dist.two_stage_total} "
        f"= {dist.two_stage_percent}% (the survey quotes this as at least 94%)"
    )
    return "\n".join(lines)
