"""The spectrum topology on a finite datum and on abstract closure spaces.

The closure of a point set is computed by two independent routes that must
agree: the idempotent route (membership of identity idempotents in a
two-sided ideal of the category algebra) and the witness route (existence of
an exclusion witness whose cokernel functor separates the point).  A
disagreement is a hard internal error, never silently resolved.

Abstract finite closure spaces ("finite-top/1" JSON) make the
Cantor-Bendixson engine reusable for spaces that are not datum-backed:

    {"schema": "finite-top/1", "points": ["eta", "m"],
     "closures": {"eta": ["eta", "m"], "m": ["m"]},
     "union_generated": true}

or, for tables that are not determined by singletons, an exhaustive
"subsets" list (capped at 12 points).  Cantor-Bendixson ranks use an
explicit infinity marker, never a sentinel number.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field as dcfield
from pathlib import Path
from typing import Callable, Iterable, Optional

from .catdatum import (
    CategoryAlgebra,
    CategoryDatum,
    build_algebra,
    idempotent_ideal,
    idempotent_in_ideal,
    is_split_epi,
)
from .core import InconsistencyError, InputError, RowSpace
from .functors import (
    AddMorphism,
    FpFunctor,
    eval_dim,
    exclusion_witness,
    in_sigma,
    right_almost_split,
    simple_quotient,
)


class InfiniteRank:
    """Explicit marker for an infinite Cantor-Bendixson rank."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CB_INFINITY"


CB_INFINITY = InfiniteRank()


def _rank_payload(r):
    return "infinity" if isinstance(r, InfiniteRank) else r


# ---------------------------------------------------------------------------
# datum-backed closure
# ---------------------------------------------------------------------------


@dataclass
class ClosureResult:
    closure: frozenset
    witnesses: dict[str, AddMorphism]


def closure_detailed(d: CategoryDatum, pts: Iterable[str],
                     *, algebra: Optional[CategoryAlgebra] = None) -> ClosureResult:
    """The closure of `pts`, computed by both routes with cross-validation;
    returns the excluded points' witnesses as well."""
    pset = frozenset(d.require_point(p) for p in pts)
    alg = algebra or build_algebra(d)
    ideal = idempotent_ideal(alg, sorted(pset, key=d.point_ids().index))
    by_ideal = frozenset(
        y for y in d.point_ids() if idempotent_in_ideal(alg, ideal, y))

    witnesses: dict[str, AddMorphism] = {}
    by_witness = set(pset)
    for y in d.point_ids():
        if y in pset:
            continue
        w = exclusion_witness(d, y, pset)
        if w is None:
            by_witness.add(y)
        else:
            witnesses[y] = w
    by_witness = frozenset(by_witness)

    if by_ideal != by_witness:
        raise InconsistencyError(
            "closure routes disagree: idempotent route gives "
            f"{sorted(by_ideal)}, witness route gives {sorted(by_witness)}")
    return ClosureResult(by_ideal, witnesses)


def closure(d: CategoryDatum, pts: Iterable[str]) -> frozenset:
    """gamma . Sigma of a point set; on any valid finite datum this equals
    the set itself (the finite shadow of discreteness)."""
    return closure_detailed(d, pts).closure


def is_closed(d: CategoryDatum, pts: Iterable[str]) -> bool:
    pset = frozenset(pts)
    return closure(d, pset) == pset


# ---------------------------------------------------------------------------
# abstract finite closure spaces
# ---------------------------------------------------------------------------

SPACE_SCHEMA = "finite-top/1"


@dataclass
class FiniteTopSpace:
    """A finite point set with a closure function.  The Kuratowski axioms are
    verified by kuratowski_check, never assumed."""

    points: list[str]
    closure_fn: Callable[[frozenset], frozenset]
    name: str = "space"
    datum: Optional[CategoryDatum] = None
    _memo: dict = dcfield(default_factory=dict, repr=False)

    def closure_set(self, s: Iterable[str]) -> frozenset:
        key = frozenset(s)
        unknown = key - set(self.points)
        if unknown:
            raise InputError(f"unknown points {sorted(unknown)}")
        if key not in self._memo:
            self._memo[key] = frozenset(self.closure_fn(key))
        return self._memo[key]

    @staticmethod
    def from_datum(d: CategoryDatum, name: str = "datum") -> "FiniteTopSpace":
        alg = build_algebra(d)

        def fn(s: frozenset) -> frozenset:
            return closure_detailed(d, s, algebra=alg).closure

        return FiniteTopSpace(d.point_ids(), fn, name, d)

    @staticmethod
    def from_payload(payload: dict, name: str = "space") -> "FiniteTopSpace":
        from .catdatum import _require_keys

        _require_keys(payload, {"schema", "points"},
                      {"closures", "subsets", "union_generated"}, "space")
        if payload["schema"] != SPACE_SCHEMA:
            raise InputError(f"space: expected schema {SPACE_SCHEMA!r}")
        points = [str(p) for p in payload["points"]]
        if len(set(points)) != len(points):
            raise InputError("space: duplicate points")
        pset = set(points)
        if "subsets" in payload:
            if len(points) > 12:
                raise InputError("space: explicit subset tables are capped at "
                                 "12 points")
            table: dict[frozenset, frozenset] = {}
            for i, ent in enumerate(payload["subsets"]):
                _require_keys(ent, {"set", "closure"}, set(),
                              f"space.subsets[{i}]")
                s = frozenset(ent["set"])
                c = frozenset(ent["closure"])
                if not s <= pset or not c <= pset:
                    raise InputError(f"space.subsets[{i}]: unknown points")
                table[s] = c
            if len(table) != 2 ** len(points):
                raise InputError("space: subset table must cover every subset")

            def fn(s: frozenset) -> frozenset:
                return table[s]

            return FiniteTopSpace(points, fn, name)
        if "closures" not in payload or not payload.get("union_generated", False):
            raise InputError("space: need either a full subset table or "
                             "singleton closures with union_generated: true")
        singles = {}
        for p, c in payload["closures"].items():
            if p not in pset or not set(c) <= pset:
                raise InputError("space.closures: unknown points")
            singles[p] = frozenset(c)
        missing = pset - set(singles)
        if missing:
            raise InputError(f"space.closures: missing points {sorted(missing)}")

        def fn(s: frozenset) -> frozenset:
            out: frozenset = frozenset()
            for p in s:
                out |= singles[p]
            return out

        return FiniteTopSpace(points, fn, name)


def load_space(path: str | Path) -> FiniteTopSpace:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None
    return FiniteTopSpace.from_payload(payload, name=str(path))


def subspace(space: FiniteTopSpace, pts: Iterable[str]) -> FiniteTopSpace:
    """The induced closure on a subset: ambient closure intersected with the
    subset (standard subspace topology)."""
    sub = [p for p in space.points if p in set(pts)]
    subset_f = frozenset(sub)

    def fn(s: frozenset) -> frozenset:
        return space.closure_set(s) & subset_f

    return FiniteTopSpace(sub, fn, f"{space.name}|{sorted(sub)}", space.datum)


# ---------------------------------------------------------------------------
# isolated points and Cantor-Bendixson rank
# ---------------------------------------------------------------------------


def isolated_points(space: FiniteTopSpace) -> frozenset:
    """Points whose complement is closed.  For datum-backed spaces the result
    is cross-checked against the Auslander-Reiten route: the simple functor
    carried by the right-almost-split map must isolate exactly the same
    points."""
    all_pts = frozenset(space.points)
    out = set()
    for m in space.points:
        rest = all_pts - {m}
        if space.closure_set(rest) == rest:
            out.add(m)
    if space.datum is not None:
        d = space.datum
        ar = set()
        for m in space.points:
            s_m = simple_quotient(d, m)
            if eval_dim(d, s_m, m) > 0 and all(
                    eval_dim(d, s_m, n) == 0 for n in space.points if n != m):
                ar.add(m)
        if ar != out:
            raise InconsistencyError(
                f"isolated-point routes disagree: definition gives "
                f"{sorted(out)}, AR route gives {sorted(ar)}")
    return frozenset(out)


@dataclass
class CBReport:
    """Per-point Cantor-Bendixson ranks, the space rank and the derivative
    chain of the iterated isolated-point removal."""

    point_ranks: dict[str, object]
    space_rank: object
    derivative_chain: list[frozenset]
    warnings: list[str] = dcfield(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "ranks": {p: _rank_payload(r)
                      for p, r in sorted(self.point_ranks.items())},
            "space_rank": _rank_payload(self.space_rank),
            "derivative_chain": [sorted(s) for s in self.derivative_chain],
            "warnings": list(self.warnings),
        }


def cb_rank(space: FiniteTopSpace) -> CBReport:
    """Iteratively remove isolated points (with the induced closure at each
    stage) until the space empties or becomes stationary; a stationary
    nonempty remainder gets the infinity marker."""
    ranks: dict[str, object] = {}
    chain = [frozenset(space.points)]
    cur = space
    n = 0
    while cur.points:
        iso = isolated_points(cur)
        for p in iso:
            ranks[p] = n
        if not iso:
            for p in cur.points:
                ranks[p] = CB_INFINITY
            return CBReport(ranks, CB_INFINITY, chain)
        rest = [p for p in cur.points if p not in iso]
        cur = subspace(cur, rest)
        chain.append(frozenset(rest))
        n += 1
    space_rank: object = n - 1 if n > 0 else CB_INFINITY
    return CBReport(ranks, space_rank, chain)


# ---------------------------------------------------------------------------
# property suites
# ---------------------------------------------------------------------------


@dataclass
class SuiteReport:
    suite: str
    passed: bool
    violations: list[str]
    checked: int
    seed: Optional[int] = None

    def to_payload(self) -> dict:
        out = {"suite": self.suite, "passed": self.passed,
               "violations": list(self.violations), "checked": self.checked}
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def _all_subsets(points: list[str]) -> list[frozenset]:
    out = [frozenset()]
    for p in points:
        out += [s | {p} for s in out]
    return out


def kuratowski_check(space: FiniteTopSpace, samples: int = 200,
                     seed: int = 0, exhaustive: Optional[bool] = None) -> SuiteReport:
    """Check the closure axioms: empty set, extensivity, finite-union
    additivity and idempotence, on every subset pair (exhaustive mode, the
    default up to 4 points) or on sampled pairs."""
    pts = space.points
    if exhaustive is None:
        exhaustive = len(pts) <= 4
    violations: list[str] = []
    checked = 0

    cl = space.closure_set
    if cl(frozenset()) != frozenset():
        violations.append("closure(empty) is not empty")

    if exhaustive:
        subsets = _all_subsets(pts)
        pairs = [(a, b) for a in subsets for b in subsets]
    else:
        rng = random.Random(seed)
        subsets = []
        for _ in range(2 * samples):
            subsets.append(frozenset(p for p in pts if rng.random() < 0.5))
        pairs = [(subsets[2 * i], subsets[2 * i + 1]) for i in range(samples)]

    seen = set()
    for a, b in pairs:
        checked += 1
        for s in (a, b):
            if s in seen:
                continue
            seen.add(s)
            ca = cl(s)
            if not s <= ca:
                violations.append(f"extensivity fails on {sorted(s)}")
            if cl(ca) != ca:
                violations.append(f"idempotence fails on {sorted(s)}")
        if cl(a | b) != cl(a) | cl(b):
            violations.append(
                f"union additivity fails on {sorted(a)} | {sorted(b)}")
        if violations:
            break
    return SuiteReport("kuratowski", not violations, violations, checked,
                       None if exhaustive else seed)


def t1_check(space: FiniteTopSpace) -> SuiteReport:
    """Closure of every singleton equals the singleton."""
    violations = []
    for p in space.points:
        c = space.closure_set(frozenset([p]))
        if c != frozenset([p]):
            violations.append(f"closure({{{p}}}) = {sorted(c)}")
    return SuiteReport("t1", not violations, violations, len(space.points))


def serre_correspondence_check(d: CategoryDatum) -> SuiteReport:
    """Exhaustive check, on data with at most 3 points, that point sets and
    their annihilator classes (idempotent ideals) correspond bijectively and
    round-trip through closure."""
    pts = d.point_ids()
    if len(pts) > 3:
        raise InputError("serre correspondence check is exhaustive and "
                         "limited to 3 points; use the sampled suites beyond")
    alg = build_algebra(d)
    violations = []
    subsets = _all_subsets(pts)
    ideal_sigs = {}
    for s in subsets:
        ideal = idempotent_ideal(alg, sorted(s, key=pts.index))
        cl = closure_detailed(d, s, algebra=alg).closure
        if cl != s:
            violations.append(f"closure round-trip fails on {sorted(s)}")
        ideal2 = idempotent_ideal(alg, sorted(cl, key=pts.index))
        sig = _ideal_signature(d, ideal)
        if sig != _ideal_signature(d, ideal2):
            violations.append(
                f"annihilator class changes along closure on {sorted(s)}")
        ideal_sigs[s] = sig
    values = list(ideal_sigs.values())
    if len(set(values)) != len(values):
        violations.append("annihilator classes are not pairwise distinct")
    return SuiteReport("serre", not violations, violations, len(subsets))


def _ideal_signature(d: CategoryDatum, ideal) -> tuple:
    ops = d.ops
    sig = []
    for pair in sorted(ideal.blocks):
        mat = ideal.blocks[pair]
        sig.append((pair, mat.shape[0],
                    tuple(ops.format_scalar(v) for row in mat for v in row)))
    return tuple(sig)


def contravariant_finiteness_check(d: CategoryDatum, pts: Iterable[str]) -> bool:
    """Whether add(pts) is contravariantly finite (every outside point has a
    right approximation from add(pts)): on a finite datum the assembled
    approximation always works, and the implication `contravariantly finite
    implies closed` is then asserted rather than assumed."""
    pset = frozenset(d.require_point(p) for p in pts)
    ops = d.ops
    ordered = [p for p in d.point_ids() if p in pset]
    for m in d.point_ids():
        if m in pset:
            continue
        cols = []
        for x in ordered:
            for i in range(d.dim(x, m)):
                vec = ops.zeros(d.dim(x, m))
                vec[i] = ops.one
                cols.append((x, vec))
        # the approximation is right-minimal enough if, for every test point
        # z, its image spans all maps z -> m factoring through add(pts)
        from .functors import _columns_image, _factoring_subspace

        for z in d.point_ids():
            img = _columns_image(d, z, m, cols)
            target = _factoring_subspace(d, z, m, ordered)
            if not all(img.contains(r) for r in target.matrix()):
                return False
            if not all(target.contains(r) for r in img.matrix()):
                return False
    if not is_closed(d, pset):
        raise InconsistencyError(
            "contravariantly finite subcategory with non-closed point set")
    return True


def sigma_membership_consistency(d: CategoryDatum, pts: Iterable[str],
                                 functors: list[FpFunctor]) -> SuiteReport:
    """Vanishing-class membership must agree between a set and its closure
    (the functor-level half of the Galois identities)."""
    pset = frozenset(pts)
    cl = closure(d, pset)
    violations = []
    for k, f in enumerate(functors):
        if in_sigma(d, f, pset) != in_sigma(d, f, cl):
            violations.append(f"functor #{k} separates a set from its closure")
    return SuiteReport("sigma-closure-agreement", not violations, violations,
                       len(functors))
