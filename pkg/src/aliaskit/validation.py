"""Cross-protocol agreement testing.

Two protocols can only be compared where both saw something, so both
set families are first restricted to their common address universe.
Within that universe, agreement means exact address-set equality; every
miss is classified by its structure (one set split into several, or
swallowed by a larger one), which is the shape that matters when
reading the numbers.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable

from aliaskit.grouping import AliasSet


class NotEnoughEligible(Exception):
    pass


@dataclass(frozen=True)
class Disagreement:
    addresses: tuple  # the restricted A-set, sorted
    detail: str
    counterpart_count: int


@dataclass
class AgreementReport:
    a_label: str
    b_label: str
    universe_size: int
    sample_size: int  # restricted A-sets compared
    agree: int
    disagree: int
    details: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "pair": [self.a_label, self.b_label],
            "universe_size": self.universe_size,
            "sample_size": self.sample_size,
            "agree": self.agree,
            "disagree": self.disagree,
            "details": [
                {
                    "addresses": list(d.addresses),
                    "detail": d.detail,
                    "counterpart_count": d.counterpart_count,
                }
                for d in self.details
            ],
        }


def agreement_from_json(d: dict) -> AgreementReport:
    return AgreementReport(
        a_label=d["pair"][0],
        b_label=d["pair"][1],
        universe_size=int(d["universe_size"]),
        sample_size=int(d["sample_size"]),
        agree=int(d["agree"]),
        disagree=int(d["disagree"]),
        details=[
            Disagreement(
                addresses=tuple(x["addresses"]),
                detail=x["detail"],
                counterpart_count=int(x["counterpart_count"]),
            )
            for x in d.get("details", [])
        ],
    )


def _restrict(sets: Iterable[AliasSet], universe: set) -> list:
    """Cut each set down to the universe; drop emptied sets and
    collapse duplicates (two sets can restrict to the same shape)."""
    shapes = []
    seen = set()
    for s in sets:
        cut = frozenset(a for a in s.addresses if a in universe)
        if cut and cut not in seen:
            seen.add(cut)
            shapes.append(cut)
    return shapes


def cross_protocol_agreement(
    a_sets: Iterable[AliasSet],
    b_sets: Iterable[AliasSet],
    a_label: str = "a",
    b_label: str = "b",
) -> AgreementReport:
    """Compare two set families over their shared addresses.

    An empty intersection is a sample of zero, not an error; the caller
    decides what to make of that.
    """
    a_sets = list(a_sets)
    b_sets = list(b_sets)
    a_universe = {addr for s in a_sets for addr in s.addresses}
    b_universe = {addr for s in b_sets for addr in s.addresses}
    universe = a_universe & b_universe
    report = AgreementReport(
        a_label=a_label, b_label=b_label, universe_size=len(universe),
        sample_size=0, agree=0, disagree=0,
    )
    if not universe:
        return report
    a_shapes = _restrict(a_sets, universe)
    b_shapes = _restrict(b_sets, universe)
    b_index = set(b_shapes)
    report.sample_size = len(a_shapes)
    for shape in a_shapes:
        if shape in b_index:
            report.agree += 1
            continue
        report.disagree += 1
        touching = [b for b in b_shapes if b & shape]
        inside = [b for b in touching if b <= shape]
        # every universe address sits in some B shape, so when all the
        # touching sets lie inside the shape they also cover it, and a
        # single covering set would have agreed above: this is a split
        if len(inside) == len(touching):
            detail = "split into %d" % len(inside)
        elif len(touching) == 1 and touching[0] > shape:
            detail = "merged into a larger set"
        else:
            detail = "overlaps %d sets" % len(touching)
        report.details.append(
            Disagreement(
                addresses=tuple(sorted(shape)),
                detail=detail,
                counterpart_count=len(touching),
            )
        )
    return report


@dataclass
class SampleResult:
    sample: list
    eligible: int
    total: int

    @property
    def eligibility_rate(self) -> float:
        return self.eligible / self.total if self.total else 0.0


def _size_for(s: AliasSet, family: str | None) -> int:
    if family is None:
        return len(s.addresses)
    return s.v4_count if family == "v4" else s.v6_count


def sample_sets(
    sets: Iterable[AliasSet],
    max_set_size: int,
    count: int,
    seed: int,
    family: str | None = None,
) -> SampleResult:
    """Uniform sample, without replacement, of sets small enough to be
    validated externally.  ``family`` restricts the size measure to one
    address family (a set qualifies by its address count in that family
    and must have at least one such address)."""
    sets = list(sets)
    eligible = [
        s for s in sets if 0 < _size_for(s, family) <= max_set_size
    ]
    if count > len(eligible):
        raise NotEnoughEligible(
            "requested %d sets, only %d eligible of %d" % (count, len(eligible), len(sets))
        )
    ordered = sorted(eligible, key=lambda s: s.set_id)
    sample = random.Random(seed).sample(ordered, count)
    return SampleResult(sample=sample, eligible=len(eligible), total=len(sets))
