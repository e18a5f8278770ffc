"""Finitely presented functors on a category datum.

A functor is never materialized abstractly: it is carried by its presenting
morphism g: A -> B, with F = coker Hom(-, g).  Evaluation, vanishing tests,
exclusion witnesses, right-almost-split data, simple quotients and the
perpendicular-membership tests all operate on presentations.

Functor presentation files use JSON schema id "fp-functor/1":

    {"schema": "fp-functor/1",
     "source": {"M1": 1}, "target": {"M2": 1},
     "blocks": [{"target_index": 0, "source_index": 0,
                 "coeffs": {"M1_M2_0": "1"}}]}

Omitted blocks are zero; coefficient keys are hom basis names of the datum
the functor is evaluated against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .catdatum import (
    AddMorphism,
    AddObject,
    CategoryAlgebra,
    CategoryDatum,
    IdealBasis,
    build_algebra,
    hom_matrix,
    idempotent_ideal,
    is_split_epi,
)
from .core import InputError, RowSpace, rank_of


@dataclass(frozen=True)
class FpFunctor:
    """A finitely presented functor, stored as its presentation g: A -> B."""

    presentation: AddMorphism

    @property
    def source(self) -> AddObject:
        return self.presentation.source

    @property
    def target(self) -> AddObject:
        return self.presentation.target


def representable(d: CategoryDatum, y: str) -> FpFunctor:
    """Hom(-, y), presented by the zero morphism out of the empty sum."""
    d.require_point(y)
    return FpFunctor(AddMorphism.zero(d, AddObject(()), AddObject(((y, 1),))))


def eval_dim(d: CategoryDatum, f: FpFunctor, x: str) -> int:
    """dim F(x) = dim Hom(x, B) - rank Hom(x, g)."""
    d.require_point(x)
    m = hom_matrix(d, x, f.presentation)
    return m.shape[0] - rank_of(d.ops, m)


def in_sigma(d: CategoryDatum, f: FpFunctor, pts: Iterable[str]) -> bool:
    """True iff F vanishes on every point of `pts` (that is, F belongs to the
    subcategory of functors killed by the set)."""
    return all(eval_dim(d, f, x) == 0 for x in pts)


# ---------------------------------------------------------------------------
# Witness assembly, pruning and right-almost-split data
# ---------------------------------------------------------------------------


def _factoring_subspace(d: CategoryDatum, z: str, y: str,
                        through: list[str]) -> RowSpace:
    """Span of all morphisms z -> y factoring through the additive closure of
    `through`, inside hom(z, y) coordinates."""
    rs = RowSpace(d.ops, d.dim(z, y))
    for x in through:
        dzx, dxy = d.dim(z, x), d.dim(x, y)
        if dzx == 0 or dxy == 0:
            continue
        t = d.tensor(z, x, y)
        rs.add_many(t.reshape(dzx * dxy, d.dim(z, y)))
    return rs


def _columns_image(d: CategoryDatum, z: str, y: str,
                   cols: list[tuple[str, np.ndarray]]) -> RowSpace:
    """Image of Hom(z, g) in hom(z, y) for g assembled from the given columns:
    the span of all composites (column) . (basis morphism z -> column source)."""
    rs = RowSpace(d.ops, d.dim(z, y))
    for src, vec in cols:
        if d.dim(z, src) == 0:
            continue
        m = d.left_mult_matrix(z, src, y, vec)   # hom(z, src) -> hom(z, y)
        rs.add_many(m.T)
    return rs


def _prune_columns(d: CategoryDatum, y: str,
                   cols: list[tuple[str, np.ndarray]],
                   required: dict[str, RowSpace]) -> list[tuple[str, np.ndarray]]:
    """Greedy pruning in fixed column order: a column is dropped when the
    image of Hom(x, -) still covers required[x] for every condition point x."""
    kept = list(cols)
    idx = 0
    while idx < len(kept):
        trial = kept[:idx] + kept[idx + 1:]
        ok = True
        for x, target in required.items():
            img = _columns_image(d, x, y, trial)
            if not all(img.contains(row) for row in target.matrix()):
                ok = False
                break
        if ok:
            kept = trial
        else:
            idx += 1
    return kept


def exclusion_witness(d: CategoryDatum, y: str,
                      pts: Iterable[str]) -> Optional[AddMorphism]:
    """A morphism g: A -> y with A in add(pts) through which every morphism
    from every point of `pts` into y factors, and which is not a split epi;
    the presented cokernel then vanishes on `pts` but not at y.  Returns None
    when y lies in `pts` (no witness can exist).  The result is the maximal
    assembly of hom basis elements pruned greedily in fixed basis order."""
    d.require_point(y)
    pset = [p for p in d.point_ids() if p in set(pts)]
    unknown = set(pts) - set(d.point_ids())
    if unknown:
        raise InputError(f"unknown points {sorted(unknown)}")
    if y in pset:
        return None
    ops = d.ops
    cols: list[tuple[str, np.ndarray]] = []
    for x in pset:
        for i in range(d.dim(x, y)):
            vec = ops.zeros(d.dim(x, y))
            vec[i] = ops.one
            cols.append((x, vec))
    required = {}
    for x in pset:
        full = RowSpace(ops, d.dim(x, y))
        full.add_many(ops.eye(d.dim(x, y)))
        required[x] = full
    kept = _prune_columns(d, y, cols, required)
    g = AddMorphism.columns(d, y, kept)
    if is_split_epi(d, g):
        # cannot happen on a valid datum: y would be a summand of add(pts)
        return None
    return g


@dataclass(frozen=True)
class RightAlmostSplitData:
    """A morphism into `target` whose induced image subfunctor of Hom(-, M)
    is the radical rad(-, M) at every point; `minimal` is set once redundant
    summands have been pruned."""

    target: str
    map: AddMorphism
    minimal: bool


def right_almost_split(d: CategoryDatum, m: str) -> RightAlmostSplitData:
    """Assemble every hom basis element X -> m (X != m) together with the
    declared radical generators of End(m), then prune in fixed basis order.
    rad(X, m) is the full hom space for X != m because distinct points are
    non-isomorphic indecomposables."""
    d.require_point(m)
    ops = d.ops
    cols: list[tuple[str, np.ndarray]] = []
    for x in d.point_ids():
        if x == m:
            rad = d.radicals[m]
            for i in range(rad.shape[0]):
                cols.append((m, rad[i].copy()))
        else:
            for i in range(d.dim(x, m)):
                vec = ops.zeros(d.dim(x, m))
                vec[i] = ops.one
                cols.append((x, vec))
    required: dict[str, RowSpace] = {}
    for x in d.point_ids():
        if x == m:
            required[x] = d.radical_space(m)
        else:
            full = RowSpace(ops, d.dim(x, m))
            full.add_many(ops.eye(d.dim(x, m)))
            required[x] = full
    kept = _prune_columns(d, m, cols, required)
    return RightAlmostSplitData(m, AddMorphism.columns(d, m, kept), True)


def simple_quotient(d: CategoryDatum, m: str) -> FpFunctor:
    """The simple functor concentrated at m: the cokernel of Hom(-, e) for e
    the right-almost-split map into m.  It evaluates to End(m)/rad at m and
    to zero elsewhere."""
    ras = right_almost_split(d, m)
    return FpFunctor(ras.map)


# ---------------------------------------------------------------------------
# Functors as modules over the category algebra; perpendicular membership
# ---------------------------------------------------------------------------


class FunctorModule:
    """The right module ⊕_X F(X) of a finitely presented functor, in
    canonical cokernel coordinates per point."""

    def __init__(self, d: CategoryDatum, f: FpFunctor):
        self.datum = d
        self.functor = f
        ops = d.ops
        self.images: dict[str, RowSpace] = {}
        self.positions: dict[str, list[int]] = {}
        for x in d.point_ids():
            hm = hom_matrix(d, x, f.presentation)
            rs = RowSpace(ops, hm.shape[0])
            rs.add_many(hm.T)
            self.images[x] = rs
            self.positions[x] = rs.complement_positions()

    def dim_at(self, x: str) -> int:
        return len(self.positions[x])

    def total_dim(self) -> int:
        return sum(len(p) for p in self.positions.values())

    def _lift(self, x: str, coords: np.ndarray) -> np.ndarray:
        ops = self.datum.ops
        amb = ops.zeros(self.images[x].width)
        for k, c in enumerate(self.positions[x]):
            amb[c] = coords[k]
        return amb

    def _project(self, x: str, ambient: np.ndarray) -> np.ndarray:
        ops = self.datum.ops
        red = self.images[x].reduce(ambient)
        out = ops.zeros(len(self.positions[x]))
        for k, c in enumerate(self.positions[x]):
            out[k] = red[c]
        return out

    def action_matrix(self, w: str, z: str, phi: np.ndarray) -> np.ndarray:
        """Matrix of F(phi): F(z) -> F(w) for phi a hom(w, z) coefficient
        vector; representatives pre-compose with phi blockwise."""
        d = self.datum
        ops = d.ops
        rows_out = self.dim_at(w)
        cols_in = self.dim_at(z)
        out = ops.zeros(rows_out, cols_in)
        if rows_out == 0 or cols_in == 0:
            return out
        tgt = self.functor.target.summands()
        for j in range(cols_in):
            amb = self._lift(z, _unit(ops, cols_in, j))
            # blockwise right-composition hom(z, B) -> hom(w, B)
            moved = []
            off = 0
            for tp in tgt:
                dim_z = d.dim(z, tp)
                seg = amb[off:off + dim_z]
                rm = d.right_mult_matrix(w, z, tp, phi)
                moved.append(ops.matmul(rm, seg.reshape(-1, 1)).reshape(-1))
                off += dim_z
            moved_vec = np.concatenate(moved) if moved else ops.zeros(0)
            out[:, j] = self._project(w, moved_vec)
        return out


def _unit(ops, n: int, j: int) -> np.ndarray:
    v = ops.zeros(n)
    v[j] = ops.one
    return v


def right_perp_member(d: CategoryDatum, f: FpFunctor, pts: Iterable[str],
                      *, algebra: Optional[CategoryAlgebra] = None,
                      ideal: Optional[IdealBasis] = None) -> bool:
    """Membership of F in the double perpendicular of the vanishing class of
    `pts`: equivalently the module of F is annihilated by the two-sided ideal
    generated by the idempotents of `pts`."""
    alg = algebra or build_algebra(d)
    j = ideal if ideal is not None else idempotent_ideal(alg, pts)
    mod = FunctorModule(d, f)
    ops = d.ops
    for (w, z), mat in j.blocks.items():
        if mod.dim_at(z) == 0 or mod.dim_at(w) == 0:
            continue
        for r in range(mat.shape[0]):
            act = mod.action_matrix(w, z, mat[r])
            if any(not ops.is_zero_scalar(v) for v in act.reshape(-1)):
                return False
    return True


def left_perp_member(d: CategoryDatum, g: FpFunctor, pts: Iterable[str],
                     *, algebra: Optional[CategoryAlgebra] = None,
                     ideal: Optional[IdealBasis] = None) -> bool:
    """Membership of G in the left perpendicular: G . J = G, where J is the
    idempotent ideal of `pts` acting on the module of G."""
    alg = algebra or build_algebra(d)
    j = ideal if ideal is not None else idempotent_ideal(alg, pts)
    mod = FunctorModule(d, g)
    total = mod.total_dim()
    if total == 0:
        return True
    covered = 0
    for w in d.point_ids():
        dw = mod.dim_at(w)
        if dw == 0:
            continue
        span = RowSpace(d.ops, dw)
        for z in d.point_ids():
            mat = j.blocks.get((w, z))
            if mat is None or mod.dim_at(z) == 0:
                continue
            for r in range(mat.shape[0]):
                act = mod.action_matrix(w, z, mat[r])
                span.add_many(act.T)
            if span.dim == dw:
                break
        covered += span.dim
    return covered == total


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

FUNCTOR_SCHEMA = "fp-functor/1"


def functor_from_payload(d: CategoryDatum, payload: dict) -> FpFunctor:
    from .catdatum import _require_keys

    _require_keys(payload, {"schema", "source", "target"}, {"blocks"}, "functor")
    if payload["schema"] != FUNCTOR_SCHEMA:
        raise InputError(f"functor: expected schema {FUNCTOR_SCHEMA!r}")
    source = AddObject.make(d, {k: int(v) for k, v in payload["source"].items()})
    target = AddObject.make(d, {k: int(v) for k, v in payload["target"].items()})
    ops = d.ops
    src = source.summands()
    tgt = target.summands()
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for i, b in enumerate(payload.get("blocks", [])):
        _require_keys(b, {"target_index", "source_index", "coeffs"}, set(),
                      f"functor.blocks[{i}]")
        ti, sj = int(b["target_index"]), int(b["source_index"])
        if not (0 <= ti < len(tgt)) or not (0 <= sj < len(src)):
            raise InputError(f"functor.blocks[{i}]: index out of range")
        pair = (src[sj], tgt[ti])
        names = d.basis_names(*pair)
        vec = ops.zeros(len(names))
        for name, coeff in b["coeffs"].items():
            s2, d2, k = d.name_info(name)
            if (s2, d2) != pair:
                raise InputError(
                    f"functor.blocks[{i}]: {name!r} is not a basis name of "
                    f"hom({pair[0]},{pair[1]})")
            vec[k] = ops.parse_scalar(coeff)
        blocks[(ti, sj)] = vec
    return FpFunctor(AddMorphism.build(d, source, target, blocks))


def morphism_to_payload(d: CategoryDatum, g: AddMorphism) -> dict:
    ops = d.ops
    src = g.source.summands()
    tgt = g.target.summands()
    blocks = []
    for ti, tp in enumerate(tgt):
        for sj, sp in enumerate(src):
            vec = g.blocks[ti][sj]
            names = d.basis_names(sp, tp)
            coeffs = {names[k]: ops.format_scalar(v)
                      for k, v in enumerate(vec) if not ops.is_zero_scalar(v)}
            if coeffs:
                blocks.append({"target_index": ti, "source_index": sj,
                               "coeffs": coeffs})
    return {"schema": FUNCTOR_SCHEMA,
            "source": g.source.counts(),
            "target": g.target.counts(),
            "blocks": blocks}


def load_functor(d: CategoryDatum, path: str | Path) -> FpFunctor:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None
    return functor_from_payload(d, payload)
