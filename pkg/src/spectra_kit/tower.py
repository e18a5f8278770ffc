"""Truncation towers: finite stand-ins for countably infinite spectra.

A tower is an increasing chain of category data (level N contains level
N-1's points) with per-point flags recording when a point appears, when its
hom data stabilizes, and whether the module it stands for is locally free on
the punctured spectrum.  Limit phenomena are reported as bounded evidence:
exclusion witnesses that persist to the top certify a point stays outside a
closure, while witness-failure chains and non-stabilizing right-almost-split
data are evidence (never proof) of limit membership and non-isolation.

Tower files use JSON schema id "stable-cat-tower/1": an ordered list of
datum file references, point-identification maps between consecutive levels
and per-point flags {locally_free, appears_at_level, stabilizes_at_level,
family_index}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dcfield
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .catdatum import (
    CategoryDatum,
    load_datum,
    validate_datum,
)
from .core import InputError, RowSpace
from .functors import AddMorphism, RightAlmostSplitData, _columns_image, right_almost_split
from .catdatum import is_split_epi
from .topology import CBReport, CB_INFINITY, FiniteTopSpace, InfiniteRank, cb_rank

TOWER_SCHEMA = "stable-cat-tower/1"


@dataclass(frozen=True)
class TowerPointFlags:
    id: str
    locally_free: bool
    appears_at_level: int
    stabilizes_at_level: int
    family_index: Optional[int]


@dataclass
class TruncationTower:
    levels: list[CategoryDatum]          # levels[k] is level k+1
    embeddings: list[dict[str, str]]     # consecutive point identifications
    flags: dict[str, TowerPointFlags]

    @property
    def height(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> CategoryDatum:
        return self.levels[-1]

    def level(self, n: int) -> CategoryDatum:
        if not 1 <= n <= self.height:
            raise InputError(f"no level {n} in a height-{self.height} tower")
        return self.levels[n - 1]

    def family_points(self) -> list[str]:
        out = [f for f in self.flags.values() if f.family_index is not None]
        out.sort(key=lambda f: f.family_index)
        return [f.id for f in out]

    def core_points(self) -> list[str]:
        return [f.id for f in self.flags.values() if f.family_index is None]

    def family_index(self, pid: str) -> Optional[int]:
        return self.flags[pid].family_index

    def cm_plus_points(self) -> list[str]:
        return [p for p in self.top.point_ids()
                if not self.flags[p].locally_free]

    def truncate(self, n: int) -> "TruncationTower":
        if not 1 <= n <= self.height:
            raise InputError(f"cannot truncate a height-{self.height} tower to {n}")
        kept_pts = set(self.levels[n - 1].point_ids())
        flags = {p: f for p, f in self.flags.items() if p in kept_pts}
        return TruncationTower(self.levels[:n], self.embeddings[:n - 1], flags)


def load_tower(path: Union[str, Path]) -> TruncationTower:
    path = Path(path)
    if path.is_dir():
        path = path / "tower.json"
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None
    from .catdatum import _require_keys

    _require_keys(payload, {"schema", "levels", "embeddings", "points"},
                  set(), "tower")
    if payload["schema"] != TOWER_SCHEMA:
        raise InputError(f"tower: expected schema {TOWER_SCHEMA!r}")
    base = path.parent
    levels = []
    for i, ent in enumerate(payload["levels"]):
        _require_keys(ent, {"level", "datum"}, set(), f"tower.levels[{i}]")
        if int(ent["level"]) != i + 1:
            raise InputError("tower: levels must be listed in order 1..N")
        levels.append(load_datum(base / ent["datum"]))
    embeddings = []
    for i, ent in enumerate(payload["embeddings"]):
        _require_keys(ent, {"from_level", "to_level", "map"}, set(),
                      f"tower.embeddings[{i}]")
        embeddings.append({str(k): str(v) for k, v in ent["map"].items()})
    flags = {}
    for i, ent in enumerate(payload["points"]):
        _require_keys(ent, {"id", "locally_free", "appears_at_level",
                            "stabilizes_at_level", "family_index"},
                      set(), f"tower.points[{i}]")
        fi = ent["family_index"]
        flags[str(ent["id"])] = TowerPointFlags(
            str(ent["id"]), bool(ent["locally_free"]),
            int(ent["appears_at_level"]), int(ent["stabilizes_at_level"]),
            None if fi is None else int(fi))
    return TruncationTower(levels, embeddings, flags)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class TowerReport:
    passed: bool
    problems: list[str]

    def to_payload(self) -> dict:
        return {"passed": self.passed, "problems": list(self.problems)}


def verify_tower(t: TruncationTower, *, validate_levels: bool = True) -> TowerReport:
    """Check per-level validity, embedding consistency, flag coverage and
    exact stabilization of hom data between persistent points across
    consecutive levels (from each point's declared stabilization level on)."""
    problems: list[str] = []
    if validate_levels:
        for n, datum in enumerate(t.levels, start=1):
            rep = validate_datum(datum)
            if not rep.ok:
                v = rep.violations[0]
                problems.append(
                    f"level {n} datum invalid: {v.kind} at {v.location}")
    for n, datum in enumerate(t.levels, start=1):
        for p in datum.point_ids():
            f = t.flags.get(p)
            if f is None:
                problems.append(f"level {n}: point {p} has no tower flags")
            elif f.appears_at_level > n:
                problems.append(
                    f"level {n}: point {p} appears before its declared level")
    for n in range(1, t.height):
        lo, hi = t.level(n), t.level(n + 1)
        emb = t.embeddings[n - 1] if n - 1 < len(t.embeddings) else None
        if emb is None:
            problems.append(f"missing embedding {n} -> {n + 1}")
            continue
        if sorted(emb) != sorted(lo.point_ids()):
            problems.append(f"embedding {n} -> {n + 1} does not cover level {n}")
            continue
        if len(set(emb.values())) != len(emb):
            problems.append(f"embedding {n} -> {n + 1} is not injective")
        missing = [v for v in emb.values() if v not in hi.point_ids()]
        if missing:
            problems.append(
                f"embedding {n} -> {n + 1} targets unknown points {missing}")
            continue
        for x in lo.point_ids():
            stab_x = t.flags[x].stabilizes_at_level if x in t.flags else 1
            for y in lo.point_ids():
                stab = max(stab_x,
                           t.flags[y].stabilizes_at_level if y in t.flags else 1)
                if n < stab:
                    continue
                ex, ey = emb[x], emb[y]
                if lo.basis_names(x, y) != hi.basis_names(ex, ey):
                    problems.append(
                        f"level {n} -> {n + 1}: hom basis of ({x},{y}) unstable")
                    continue
        # composition constants between persistent points must be identical
        lo_names = {name for pair in lo.hom_basis.values() for name in pair}
        for key, terms in lo.sparse_compose.items():
            if t._stab_reached(key, n):
                hi_terms = hi.sparse_compose.get(key)
                if hi_terms != terms:
                    problems.append(
                        f"level {n} -> {n + 1}: compose entry {key} unstable")
                    break
        for key, terms in hi.sparse_compose.items():
            if key[0] in lo_names and key[1] in lo_names and t._stab_reached(key, n):
                if lo.sparse_compose.get(key) != terms:
                    problems.append(
                        f"level {n} -> {n + 1}: compose entry {key} appeared late")
                    break
    return TowerReport(not problems, problems)


def _stab_reached(self: TruncationTower, key: tuple[str, str], n: int) -> bool:
    lo = self.levels[n - 1]
    try:
        gs, gd, _ = lo.name_info(key[0])
        fs, fd, _ = lo.name_info(key[1])
    except InputError:
        return False
    pts = {gs, gd, fs, fd}
    stab = max(self.flags[p].stabilizes_at_level if p in self.flags else 1
               for p in pts)
    return n >= stab


TruncationTower._stab_reached = _stab_reached


# ---------------------------------------------------------------------------
# limit closure evidence
# ---------------------------------------------------------------------------


def _resolve_family_desc(t: TruncationTower, x_desc) -> tuple[frozenset, str]:
    if isinstance(x_desc, str):
        if x_desc == "family":
            return frozenset(t.family_points()), "all family points"
        raise InputError(f"unknown family description {x_desc!r}")
    pts = frozenset(x_desc)
    unknown = pts - set(t.top.point_ids())
    if unknown:
        raise InputError(f"unknown points {sorted(unknown)}")
    return pts, "explicit set"


@dataclass
class LimitClosureOutcome:
    """Outcome of the semi-effective limit closure test: Excluded carries a
    witness verified at every realized level, NoWitnessUpTo is bounded
    evidence only (explicitly not a proof of membership), InSet is literal
    membership."""

    kind: str                    # "Excluded" | "NoWitnessUpTo" | "InSet"
    excluded_point: str
    family: str
    bound: int
    witness: Optional[AddMorphism] = None
    per_level: list[dict] = dcfield(default_factory=list)

    def to_payload(self, datum: Optional[CategoryDatum] = None) -> dict:
        out = {"kind": self.kind, "point": self.excluded_point,
               "family": self.family, "bound": self.bound,
               "per_level": self.per_level}
        if self.witness is not None and datum is not None:
            from .functors import morphism_to_payload
            out["witness"] = morphism_to_payload(datum, self.witness)
        return out


def _witness_columns(d: CategoryDatum, y: str,
                     sources: list[str]) -> list[tuple[str, np.ndarray]]:
    ops = d.ops
    cols = []
    for x in sources:
        for i in range(d.dim(x, y)):
            vec = ops.zeros(d.dim(x, y))
            vec[i] = ops.one
            cols.append((x, vec))
    return cols


def _witness_valid_at(d: CategoryDatum, y: str,
                      cols: list[tuple[str, np.ndarray]],
                      condition_pts: Iterable[str]) -> Optional[str]:
    """None when Hom(x, g) is surjective for every condition point present in
    the datum; otherwise the first failing point."""
    for x in condition_pts:
        if x not in d.point_ids():
            continue
        img = _columns_image(d, x, y, cols)
        if img.dim < d.dim(x, y):
            return x
    return None


def _prune_for_conditions(d: CategoryDatum, y: str,
                          cols: list[tuple[str, np.ndarray]],
                          condition_pts: list[str]) -> list[tuple[str, np.ndarray]]:
    kept = list(cols)
    idx = 0
    while idx < len(kept):
        trial = kept[:idx] + kept[idx + 1:]
        if _witness_valid_at(d, y, trial, condition_pts) is None:
            kept = trial
        else:
            idx += 1
    return kept


def closure_in_limit(t: TruncationTower, y: str, x_desc,
                     bound: int = 4) -> LimitClosureOutcome:
    """Semi-effective limit closure membership for y against a family.

    A witness source may only use family points of family index <= bound
    (core points of the family are always allowed) with multiplicities <=
    bound; surjectivity is required for every realized family member, at
    every level, so a returned witness certifies exclusion for the realized
    part of the tower.  NoWitnessUpTo reports that no witness within the
    bound survives: evidence, not a membership proof."""
    top = t.top
    top.require_point(y)
    family, family_desc = _resolve_family_desc(t, x_desc)
    if y in family:
        return LimitClosureOutcome("InSet", y, family_desc, bound)
    sources = []
    for p in top.point_ids():
        if p not in family:
            continue
        fi = t.family_index(p)
        if fi is None or fi <= bound:
            sources.append(p)
    cols = _witness_columns(top, y, sources)
    fail_at = _witness_valid_at(top, y, cols, sorted(family))
    if fail_at is not None:
        return LimitClosureOutcome(
            "NoWitnessUpTo", y, family_desc, bound,
            per_level=[{"level": t.height, "failing_point": fail_at}])
    cols = _prune_for_conditions(top, y, cols, sorted(family))
    counts: dict[str, int] = {}
    for p, _ in cols:
        counts[p] = counts.get(p, 0) + 1
    if any(c > bound for c in counts.values()):
        return LimitClosureOutcome(
            "NoWitnessUpTo", y, family_desc, bound,
            per_level=[{"level": t.height,
                        "failing_point": "multiplicity bound exceeded"}])
    g = AddMorphism.columns(top, y, cols)
    if is_split_epi(top, g):
        return LimitClosureOutcome(
            "NoWitnessUpTo", y, family_desc, bound,
            per_level=[{"level": t.height, "failing_point": "split epi"}])
    per_level = []
    for n in range(1, t.height + 1):
        datum = t.level(n)
        if y not in datum.point_ids():
            per_level.append({"level": n, "status": "point absent"})
            continue
        present_cols = [(p, v) for p, v in cols if p in datum.point_ids()]
        if len(present_cols) < len(cols):
            per_level.append({"level": n, "status": "witness source incomplete"})
            continue
        bad = _witness_valid_at(datum, y, present_cols, sorted(family))
        per_level.append({"level": n,
                          "status": "valid" if bad is None else f"fails at {bad}"})
        if bad is not None:
            raise InputError(
                f"stabilized witness unexpectedly fails at level {n}: "
                "tower data is inconsistent")
    return LimitClosureOutcome("Excluded", y, family_desc, bound, g, per_level)


@dataclass
class WitnessChainEntry:
    prefix_level: int
    witness: Optional[AddMorphism]
    source_counts: dict[str, int]
    failure_level: Optional[int]     # None = persists to top


@dataclass
class WitnessChain:
    excluded: str
    target_family: str
    entries: list[WitnessChainEntry]

    def to_payload(self) -> dict:
        return {"point": self.excluded, "family": self.target_family,
                "entries": [{
                    "prefix_level": e.prefix_level,
                    "source": e.source_counts,
                    "failure_level": e.failure_level,
                    "persists_to_top": e.failure_level is None,
                } for e in self.entries]}


def witness_failure_chain(t: TruncationTower, y: str,
                          prefix_levels: Optional[Iterable[int]] = None) -> WitnessChain:
    """For each prefix level N, the minimal witness excluding y from the
    closure of the family points of level <= N, re-verified against the
    growing family at every later level; records the least level at which
    each witness dies, or that it persists to the top."""
    top = t.top
    top.require_point(y)
    fam = t.family_points()
    if prefix_levels is None:
        prefix_levels = range(1, t.height + 1)
    entries = []
    for n in prefix_levels:
        if not 1 <= n <= t.height:
            raise InputError(f"prefix level {n} outside the tower")
        prefix = [p for p in fam
                  if t.family_index(p) is not None and t.family_index(p) <= n
                  and p != y]
        datum = t.level(n) if y in t.level(n).point_ids() else top
        cols = _witness_columns(datum, y, [p for p in prefix
                                           if p in datum.point_ids()])
        if _witness_valid_at(datum, y, cols, prefix) is not None:
            entries.append(WitnessChainEntry(n, None, {}, n))
            continue
        cols = _prune_for_conditions(datum, y, cols, prefix)
        counts: dict[str, int] = {}
        for p, _ in cols:
            counts[p] = counts.get(p, 0) + 1
        failure = None
        for n2 in range(n + 1, t.height + 1):
            d2 = t.level(n2)
            if y not in d2.point_ids():
                continue
            grown_prefix = [p for p in fam
                            if t.family_index(p) is not None
                            and t.family_index(p) <= n2 and p != y]
            bad = _witness_valid_at(d2, y, cols, grown_prefix)
            if bad is not None:
                failure = n2
                break
        entries.append(WitnessChainEntry(n, AddMorphism.columns(datum, y, cols),
                                         counts, failure))
    return WitnessChain(y, "family prefix", entries)


# ---------------------------------------------------------------------------
# AR stabilization
# ---------------------------------------------------------------------------


def _ras_signature(d: CategoryDatum, ras: RightAlmostSplitData):
    ops = d.ops
    cols = []
    src = ras.map.source.summands()
    for j, sp in enumerate(src):
        vec = ras.map.blocks[0][j]
        cols.append((sp, tuple(ops.format_scalar(v) for v in vec)))
    return tuple(cols)


@dataclass
class ARStabilizationReport:
    point: str
    per_level: list[dict]
    verdict: str                 # "Stable" | "GrowingUpTo"
    stable_from: Optional[int]   # level from which the data is constant

    def to_payload(self) -> dict:
        return {"point": self.point, "per_level": self.per_level,
                "verdict": self.verdict, "stable_from": self.stable_from}


def ar_stabilization(t: TruncationTower, m: str) -> ARStabilizationReport:
    """Minimal right-almost-split data for m at every level where m exists;
    the verdict is Stable(from L) when the source and blocks are identical
    from level L to the top, and GrowingUpTo(top) when they still change at
    the top level (evidence of non-isolation, not proof)."""
    t.top.require_point(m)
    sigs = []
    per_level = []
    for n in range(1, t.height + 1):
        datum = t.level(n)
        if m not in datum.point_ids():
            continue
        ras = right_almost_split(datum, m)
        sig = _ras_signature(datum, ras)
        sigs.append((n, sig))
        per_level.append({
            "level": n,
            "source": dict(ras.map.source.counts()),
        })
    last_change = sigs[0][0]
    for k in range(1, len(sigs)):
        if sigs[k][1] != sigs[k - 1][1]:
            last_change = sigs[k][0]
    if len(sigs) >= 2 and last_change == t.height:
        return ARStabilizationReport(m, per_level, "GrowingUpTo", None)
    return ARStabilizationReport(m, per_level, "Stable", last_change)


# ---------------------------------------------------------------------------
# tower Cantor-Bendixson rank
# ---------------------------------------------------------------------------


def tower_cb_rank(t: TruncationTower, bound: int = 4) -> CBReport:
    """Cantor-Bendixson report following the locally-free partition: points
    with stabilizing AR data get rank 0; the finite non-locally-free
    remainder carries the induced topology computed from pairwise limit
    closure evidence, and its ranks are shifted up by one.  Flag conflicts
    with the AR evidence are reported as warnings, never silently resolved."""
    warnings: list[str] = []
    ranks: dict[str, object] = {}
    verdicts = {}
    for p in t.top.point_ids():
        rep = ar_stabilization(t, p)
        verdicts[p] = rep.verdict
        lf = t.flags[p].locally_free
        if lf and rep.verdict != "Stable":
            warnings.append(
                f"{p} is flagged locally free but its AR data keeps growing")
        if not lf and rep.verdict == "Stable":
            warnings.append(
                f"{p} is flagged not locally free but its AR data stabilizes "
                f"at level {rep.stable_from}")
        if lf:
            ranks[p] = 0
    remainder = t.cm_plus_points()
    chain = [frozenset(t.top.point_ids())]
    if remainder:
        chain.append(frozenset(remainder))
        singles = {}
        for x in remainder:
            cl = {x}
            for y in remainder:
                if y == x:
                    continue
                outcome = closure_in_limit(t, y, frozenset([x]), bound)
                if outcome.kind != "Excluded":
                    cl.add(y)
            singles[x] = frozenset(cl)

        def fn(s: frozenset) -> frozenset:
            out: frozenset = frozenset()
            for p in s:
                out |= singles[p]
            return out

        sub = FiniteTopSpace(remainder, fn, "cm-plus remainder")
        sub_report = cb_rank(sub)
        for p, r in sub_report.point_ranks.items():
            ranks[p] = CB_INFINITY if isinstance(r, InfiniteRank) else r + 1
        remainder_discrete = all(
            not isinstance(r, InfiniteRank) and r == 0
            for r in sub_report.point_ranks.values())
        if remainder_discrete:
            max_rank = max((r for r in ranks.values()
                            if not isinstance(r, InfiniteRank)), default=0)
            if max_rank > 1:
                raise InputError(
                    "discrete remainder produced rank above 1: tower data "
                    "is inconsistent")
    finite = [r for r in ranks.values() if not isinstance(r, InfiniteRank)]
    if len(finite) < len(ranks):
        space_rank: object = CB_INFINITY
    else:
        space_rank = max(finite, default=0)
    return CBReport(ranks, space_rank, chain, warnings)
