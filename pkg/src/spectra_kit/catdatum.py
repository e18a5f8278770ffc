"""Finite stable Krull-Schmidt category data: encoding, validation, algebra.

A CategoryDatum stores a finite additive category by structure constants: an
ordered point list, a based hom space for every ordered pair, a composition
table, identity coordinates and a declared endomorphism-radical basis per
point.  The datum file format is JSON with schema id "stable-cat-datum/1":

    {
      "schema": "stable-cat-datum/1",
      "field": {"kind": "prime", "p": 32003},
      "points": [{"id": "M1", "locally_free": true}, ...],
      "hom": [{"src": "M1", "dst": "M2", "dim": 1, "basis": ["M1_M2_0"]}, ...],
      "compose": [{"g": "...", "f": "...",
                   "result": [{"basis": "...", "coeff": "1"}]}, ...],
      "identities": [{"point": "M1", "element": ["1"]}, ...],
      "radical": [{"point": "M1", "basis_elements": [["0", ...], ...]}, ...]
    }

Conventions fixed here: compose entries mean "g after f" (f: X->Y, g: Y->Z);
omitted compose entries are zero; hom entries with dim 0 may be omitted;
basis names are globally unique; the point order of the file fixes every
basis order and hence every deterministic tie-break downstream.  Unknown
fields are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dcfield
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import (
    FieldOps,
    FieldSpec,
    InputError,
    RowSpace,
    rank_of,
    solve_right_arrays,
)


@dataclass(frozen=True)
class PointInfo:
    """One point of the datum.  `locally_free` records whether the module it
    stands for is locally free on the punctured spectrum."""

    id: str
    locally_free: bool = True


@dataclass
class CategoryDatum:
    field: FieldSpec
    points: list[PointInfo]
    hom_basis: dict[tuple[str, str], list[str]]
    sparse_compose: dict[tuple[str, str], list[tuple[str, object]]]
    identities: dict[str, np.ndarray]
    radicals: dict[str, np.ndarray]
    _tensors: dict = dcfield(default_factory=dict, repr=False)
    _name_index: dict = dcfield(default_factory=dict, repr=False)

    def __post_init__(self):
        for (src, dst), names in self.hom_basis.items():
            for i, n in enumerate(names):
                if n in self._name_index:
                    raise InputError(f"duplicate basis name {n!r}")
                self._name_index[n] = (src, dst, i)

    # -- views ---------------------------------------------------------

    @property
    def ops(self) -> FieldOps:
        return self.field.ops()

    def point_ids(self) -> list[str]:
        return [p.id for p in self.points]

    def point(self, pid: str) -> PointInfo:
        for p in self.points:
            if p.id == pid:
                return p
        raise InputError(f"unknown point {pid!r}")

    def require_point(self, pid: str) -> str:
        if all(p.id != pid for p in self.points):
            raise InputError(f"unknown point {pid!r}")
        return pid

    def dim(self, src: str, dst: str) -> int:
        return len(self.hom_basis.get((src, dst), ()))

    def basis_names(self, src: str, dst: str) -> list[str]:
        return self.hom_basis.get((src, dst), [])

    def name_info(self, name: str) -> tuple[str, str, int]:
        info = self._name_index.get(name)
        if info is None:
            raise InputError(f"unknown basis name {name!r}")
        return info

    def tensor(self, x: str, y: str, z: str) -> np.ndarray:
        """Composition tensor C with C[g, f, :] = coordinates of g . f in the
        basis of hom(x, z), for f in hom(x, y) and g in hom(y, z)."""
        key = (x, y, z)
        t = self._tensors.get(key)
        if t is not None:
            return t
        ops = self.ops
        dxy, dyz, dxz = self.dim(x, y), self.dim(y, z), self.dim(x, z)
        t = ops.zeros(dyz, dxy, dxz)
        if dxy and dyz and dxz:
            fy = self.basis_names(x, y)
            gy = self.basis_names(y, z)
            out_index = {n: i for i, n in enumerate(self.basis_names(x, z))}
            for gi, g in enumerate(gy):
                for fi, f in enumerate(fy):
                    for name, coeff in self.sparse_compose.get((g, f), ()):
                        t[gi, fi, out_index[name]] = coeff
        self._tensors[key] = t
        return t

    def compose_vectors(self, x: str, y: str, z: str,
                        g: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Coordinates of g . f for coefficient vectors g over hom(y,z) and
        f over hom(x,y)."""
        t = self.tensor(x, y, z)
        ops = self.ops
        if t.size == 0:
            return ops.zeros(self.dim(x, z))
        if ops.prime:
            return np.einsum("g,f,gfo->o", g, f, t) % ops.p
        out = ops.zeros(self.dim(x, z))
        for gi in range(t.shape[0]):
            if g[gi] == 0:
                continue
            for fi in range(t.shape[1]):
                if f[fi] == 0:
                    continue
                out = ops.add(out, ops.mul(t[gi, fi], ops.mul(g[gi], f[fi])))
        return out

    def left_mult_matrix(self, x: str, y: str, z: str, g: np.ndarray) -> np.ndarray:
        """Matrix of post-composition with g in hom(y,z): hom(x,y) -> hom(x,z).
        Rows are target coordinates."""
        t = self.tensor(x, y, z)
        ops = self.ops
        if t.size == 0:
            return ops.zeros(self.dim(x, z), self.dim(x, y))
        if ops.prime:
            return np.einsum("g,gfo->of", g, t) % ops.p
        out = ops.zeros(self.dim(x, z), self.dim(x, y))
        for gi in range(t.shape[0]):
            if g[gi] == 0:
                continue
            out = ops.add(out, ops.mul(t[gi].T, g[gi]))
        return out

    def right_mult_matrix(self, w: str, x: str, y: str, f: np.ndarray) -> np.ndarray:
        """Matrix of pre-composition with f in hom(w,x): hom(x,y) -> hom(w,y)."""
        t = self.tensor(w, x, y)
        ops = self.ops
        if t.size == 0:
            return ops.zeros(self.dim(w, y), self.dim(x, y))
        if ops.prime:
            return np.einsum("f,gfo->og", f, t) % ops.p
        out = ops.zeros(self.dim(w, y), self.dim(x, y))
        for fi in range(t.shape[1]):
            if f[fi] == 0:
                continue
            out = ops.add(out, ops.mul(t[:, fi, :].T, f[fi]))
        return out

    def radical_space(self, pid: str) -> RowSpace:
        rs = RowSpace(self.ops, self.dim(pid, pid))
        rs.add_many(self.radicals.get(pid, self.ops.zeros(0, self.dim(pid, pid))))
        return rs


# ---------------------------------------------------------------------------
# JSON load / save
# ---------------------------------------------------------------------------

DATUM_SCHEMA = "stable-cat-datum/1"


def _require_keys(obj: dict, required: set, optional: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    missing = required - set(obj)
    if missing:
        raise InputError(f"{where}: missing keys {sorted(missing)}")
    unknown = set(obj) - required - optional
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")


def datum_from_payload(payload: dict) -> CategoryDatum:
    _require_keys(payload, {"schema", "field", "points", "hom", "compose",
                            "identities", "radical"}, set(), "datum")
    if payload["schema"] != DATUM_SCHEMA:
        raise InputError(f"datum: expected schema {DATUM_SCHEMA!r}")
    field = FieldSpec.from_payload(payload["field"])
    ops = field.ops()

    points: list[PointInfo] = []
    seen = set()
    for i, p in enumerate(payload["points"]):
        _require_keys(p, {"id", "locally_free"}, set(), f"points[{i}]")
        if p["id"] in seen:
            raise InputError(f"points[{i}]: duplicate id {p['id']!r}")
        seen.add(p["id"])
        points.append(PointInfo(str(p["id"]), bool(p["locally_free"])))
    ids = {p.id for p in points}

    hom_basis: dict[tuple[str, str], list[str]] = {}
    for i, h in enumerate(payload["hom"]):
        _require_keys(h, {"src", "dst", "dim", "basis"}, set(), f"hom[{i}]")
        if h["src"] not in ids or h["dst"] not in ids:
            raise InputError(f"hom[{i}]: unknown point")
        if (h["src"], h["dst"]) in hom_basis:
            raise InputError(f"hom[{i}]: duplicate pair")
        names = [str(n) for n in h["basis"]]
        if len(names) != int(h["dim"]):
            raise InputError(f"hom[{i}]: dim does not match basis length")
        hom_basis[(h["src"], h["dst"])] = names

    datum = CategoryDatum(field, points, hom_basis, {}, {}, {})

    for i, c in enumerate(payload["compose"]):
        _require_keys(c, {"g", "f", "result"}, set(), f"compose[{i}]")
        gs, gd, _ = datum.name_info(c["g"])
        fs, fd, _ = datum.name_info(c["f"])
        if fd != gs:
            raise InputError(f"compose[{i}]: g and f are not composable")
        if (c["g"], c["f"]) in datum.sparse_compose:
            raise InputError(f"compose[{i}]: duplicate pair")
        out_names = set(datum.basis_names(fs, gd))
        result = []
        for j, term in enumerate(c["result"]):
            _require_keys(term, {"basis", "coeff"}, set(), f"compose[{i}].result[{j}]")
            if term["basis"] not in out_names:
                raise InputError(
                    f"compose[{i}].result[{j}]: basis {term['basis']!r} "
                    f"not in hom({fs},{gd})")
            result.append((term["basis"], ops.parse_scalar(term["coeff"])))
        datum.sparse_compose[(c["g"], c["f"])] = result

    for i, e in enumerate(payload["identities"]):
        _require_keys(e, {"point", "element"}, set(), f"identities[{i}]")
        pid = e["point"]
        if pid not in ids:
            raise InputError(f"identities[{i}]: unknown point")
        d = datum.dim(pid, pid)
        if len(e["element"]) != d:
            raise InputError(f"identities[{i}]: element length != dim End")
        vec = ops.zeros(d)
        for j, s in enumerate(e["element"]):
            vec[j] = ops.parse_scalar(s)
        datum.identities[pid] = vec
    missing_ids = ids - set(datum.identities)
    if missing_ids:
        raise InputError(f"identities: missing points {sorted(missing_ids)}")

    for i, r in enumerate(payload["radical"]):
        _require_keys(r, {"point", "basis_elements"}, set(), f"radical[{i}]")
        pid = r["point"]
        if pid not in ids:
            raise InputError(f"radical[{i}]: unknown point")
        d = datum.dim(pid, pid)
        mat = ops.zeros(len(r["basis_elements"]), d)
        for j, row in enumerate(r["basis_elements"]):
            if len(row) != d:
                raise InputError(f"radical[{i}].basis_elements[{j}]: bad length")
            for k, s in enumerate(row):
                mat[j, k] = ops.parse_scalar(s)
        datum.radicals[pid] = mat
    for pid in ids:
        datum.radicals.setdefault(pid, ops.zeros(0, datum.dim(pid, pid)))
    return datum


def datum_to_payload(d: CategoryDatum) -> dict:
    ops = d.ops
    hom_entries = []
    order = []
    for src in d.point_ids():
        for dst in d.point_ids():
            names = d.basis_names(src, dst)
            if names:
                hom_entries.append({"src": src, "dst": dst, "dim": len(names),
                                    "basis": list(names)})
                order.extend(names)
    name_rank = {n: i for i, n in enumerate(order)}
    compose_entries = []
    for (g, f) in sorted(d.sparse_compose, key=lambda k: (name_rank[k[0]], name_rank[k[1]])):
        result = [{"basis": n, "coeff": ops.format_scalar(c)}
                  for n, c in d.sparse_compose[(g, f)]
                  if not ops.is_zero_scalar(c)]
        if result:
            compose_entries.append({"g": g, "f": f, "result": result})
    return {
        "schema": DATUM_SCHEMA,
        "field": d.field.to_payload(),
        "points": [{"id": p.id, "locally_free": p.locally_free} for p in d.points],
        "hom": hom_entries,
        "compose": compose_entries,
        "identities": [{"point": p.id,
                        "element": [ops.format_scalar(v) for v in d.identities[p.id]]}
                       for p in d.points],
        "radical": [{"point": p.id,
                     "basis_elements": [[ops.format_scalar(v) for v in row]
                                        for row in d.radicals[p.id]]}
                    for p in d.points],
    }


def load_datum(path: str | Path) -> CategoryDatum:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None
    return datum_from_payload(payload)


def save_datum(d: CategoryDatum, path: str | Path) -> None:
    Path(path).write_text(json.dumps(datum_to_payload(d), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_payload(self) -> dict:
        return {"valid": self.ok,
                "violations": [{"kind": v.kind, "location": v.location,
                                "detail": v.detail} for v in self.violations]}


def _sparse_products(d: CategoryDatum, x: str, y: str, z: str) -> np.ndarray:
    """All basis products g.f for f in hom(x,y), g in hom(y,z), flattened to
    rows over hom(x,z)."""
    t = d.tensor(x, y, z)
    return t.reshape(t.shape[0] * t.shape[1], t.shape[2])


def validate_datum(d: CategoryDatum, *, sample_seed: int = 0,
                   coset_enum_limit: int = 10**4,
                   unit_samples: int = 64) -> ValidationReport:
    """Check every category axiom the downstream proofs rely on: unitality,
    associativity on all basis triples, declared radicals being nilpotent
    two-sided ideals with division quotients, and pairwise non-isomorphic
    points.  Returns a report naming each violated axiom; an empty list of
    violations means the datum is valid."""
    ops = d.ops
    out: list[Violation] = []
    pts = d.point_ids()

    # identity laws
    for x in pts:
        ide = d.identities[x]
        if all(ops.is_zero_scalar(v) for v in ide):
            out.append(Violation("identity_zero", f"identities[{x}]",
                                 "identity element is zero"))
    for x in pts:
        for y in pts:
            names = d.basis_names(x, y)
            if not names:
                continue
            dxy = d.dim(x, y)
            idy = d.identities[y]
            idx = d.identities[x]
            eyef = d.left_mult_matrix(x, y, y, idy)       # id_y . f
            feid = d.right_mult_matrix(x, x, y, idx)      # f . id_x
            eye = ops.eye(dxy)
            if not ops.equal(eyef, eye):
                out.append(Violation("identity_law", f"hom({x},{y})",
                                     "id_target . f != f on some basis element"))
            if not ops.equal(feid, eye):
                out.append(Violation("identity_law", f"hom({x},{y})",
                                     "f . id_source != f on some basis element"))

    # associativity on all basis triples (h.g).f = h.(g.f)
    for w in pts:
        for x in pts:
            if d.dim(w, x) == 0:
                continue
            for y in pts:
                if d.dim(x, y) == 0:
                    continue
                for z in pts:
                    if d.dim(y, z) == 0:
                        continue
                    c_xyz = d.tensor(x, y, z)
                    c_wxz = d.tensor(w, x, z)
                    c_wxy = d.tensor(w, x, y)
                    c_wyz = d.tensor(w, y, z)
                    if ops.prime:
                        left = np.einsum("hgm,mfo->hgfo", c_xyz, c_wxz) % ops.p
                        right = np.einsum("gfl,hlo->hgfo", c_wxy, c_wyz) % ops.p
                        if not np.array_equal(left, right):
                            bad = np.argwhere(left != right)[0]
                            hn = d.basis_names(y, z)[bad[0]]
                            gn = d.basis_names(x, y)[bad[1]]
                            fn = d.basis_names(w, x)[bad[2]]
                            out.append(Violation(
                                "associativity", f"({w},{x},{y},{z})",
                                f"(h.g).f != h.(g.f) for h={hn}, g={gn}, f={fn}"))
                    else:
                        for hi in range(d.dim(y, z)):
                            for gi in range(d.dim(x, y)):
                                hg = c_xyz[hi, gi]
                                for fi in range(d.dim(w, x)):
                                    gf = c_wxy[gi, fi]
                                    lvec = ops.zeros(d.dim(w, z))
                                    for m in range(d.dim(x, z)):
                                        if hg[m] != 0:
                                            lvec = ops.add(lvec, ops.mul(c_wxz[m, fi], hg[m]))
                                    rvec = ops.zeros(d.dim(w, z))
                                    for l in range(d.dim(w, y)):
                                        if gf[l] != 0:
                                            rvec = ops.add(rvec, ops.mul(c_wyz[hi, l], gf[l]))
                                    if not ops.equal(lvec, rvec):
                                        hn = d.basis_names(y, z)[hi]
                                        gn = d.basis_names(x, y)[gi]
                                        fn = d.basis_names(w, x)[fi]
                                        out.append(Violation(
                                            "associativity", f"({w},{x},{y},{z})",
                                            f"(h.g).f != h.(g.f) for h={hn}, g={gn}, f={fn}"))

    # radicals: two-sided nilpotent ideals with division quotients
    for x in pts:
        out.extend(_check_radical(d, x, coset_enum_limit, unit_samples, sample_seed))

    # pairwise non-isomorphic points (requires validated radicals; run on the
    # declared data regardless and report what is checkable)
    for i, x in enumerate(pts):
        radx = d.radical_space(x)
        for y in pts[i + 1:]:
            if d.dim(x, y) == 0 or d.dim(y, x) == 0:
                continue
            # X iso Y iff some product g.f (f: X->Y, g: Y->X) is a unit of the
            # local ring End(X), i.e. lies outside the radical.
            prods = _sparse_products(d, x, y, x)
            for r in range(prods.shape[0]):
                if not radx.contains(prods[r]):
                    out.append(Violation("isomorphic_points", f"({x},{y})",
                                         "a composite X->Y->X is a unit"))
                    break
    return ValidationReport(out)


def _check_radical(d: CategoryDatum, x: str, coset_enum_limit: int,
                   unit_samples: int, sample_seed: int) -> list[Violation]:
    import random

    ops = d.ops
    out: list[Violation] = []
    dx = d.dim(x, x)
    rad = d.radicals[x]
    rs = d.radical_space(x)
    if rs.contains(d.identities[x]) and dx > 0:
        out.append(Violation("radical_contains_identity", f"radical[{x}]",
                             "declared radical contains the identity"))
        return out

    # two-sided ideal: b.r and r.b stay in the span for all basis b
    for bi in range(dx):
        b = ops.zeros(dx)
        b[bi] = ops.one
        for ri in range(rad.shape[0]):
            left = d.compose_vectors(x, x, x, b, rad[ri])
            right = d.compose_vectors(x, x, x, rad[ri], b)
            if not rs.contains(left) or not rs.contains(right):
                out.append(Violation("radical_not_ideal", f"radical[{x}]",
                                     f"product with basis element {bi} leaves the span"))
                break

    # nilpotent: powers of the span shrink to zero
    cur = rs.matrix()
    for _ in range(dx + 1):
        if cur.shape[0] == 0:
            break
        nxt = RowSpace(ops, dx)
        for i in range(cur.shape[0]):
            for j in range(rad.shape[0]):
                nxt.add(d.compose_vectors(x, x, x, cur[i], rad[j]))
        if nxt.dim >= cur.shape[0] and nxt.dim > 0:
            out.append(Violation("radical_not_nilpotent", f"radical[{x}]",
                                 "radical powers do not shrink"))
            break
        cur = nxt.matrix()
    else:
        if cur.shape[0]:
            out.append(Violation("radical_not_nilpotent", f"radical[{x}]",
                                 "radical power chain did not reach zero"))

    # division quotient: every nonzero coset of End(x)/rad invertible.
    # Quotient coordinates: complement positions of the radical row space.
    comp = rs.complement_positions()
    qdim = len(comp)
    if qdim == 0 and dx > 0:
        out.append(Violation("quotient_not_division", f"radical[{x}]",
                             "radical equals the whole endomorphism ring"))
        return out
    if qdim <= 1:
        return out  # quotient is the base field: division, nothing to check

    def quot_mult(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        lift_u = ops.zeros(dx)
        lift_v = ops.zeros(dx)
        for k, c in enumerate(comp):
            lift_u[c] = u[k]
            lift_v[c] = v[k]
        prod = rs.reduce(d.compose_vectors(x, x, x, lift_u, lift_v))
        w = ops.zeros(qdim)
        for k, c in enumerate(comp):
            w[k] = prod[c]
        return w

    def is_unit(u: np.ndarray) -> bool:
        m = ops.zeros(qdim, qdim)
        for j in range(qdim):
            v = ops.zeros(qdim)
            v[j] = ops.one
            m[:, j] = quot_mult(u, v)
        return rank_of(ops, m) == qdim

    if ops.prime and ops.p ** qdim <= coset_enum_limit:
        # exhaustive enumeration of nonzero cosets
        def rec(vec, pos):
            if pos == qdim:
                if any(not ops.is_zero_scalar(v) for v in vec) and not is_unit(vec):
                    out.append(Violation("quotient_not_division", f"radical[{x}]",
                                         f"non-unit coset {list(map(int, vec))}"))
                    return False
                return True
            for c in range(ops.p):
                vec[pos] = c
                if not rec(vec, pos + 1):
                    return False
            return True

        rec(ops.zeros(qdim), 0)
    else:
        rng = random.Random(sample_seed)
        for _ in range(unit_samples):
            if ops.prime:
                u = ops.array([rng.randrange(ops.p) for _ in range(qdim)])
            else:
                u = ops.array([rng.randint(-9, 9) for _ in range(qdim)])
            if all(ops.is_zero_scalar(v) for v in u):
                continue
            if not is_unit(u):
                out.append(Violation("quotient_not_division", f"radical[{x}]",
                                     "sampled non-unit coset found"))
                break
        for j in range(qdim):
            u = ops.zeros(qdim)
            u[j] = ops.one
            if not is_unit(u):
                out.append(Violation("quotient_not_division", f"radical[{x}]",
                                     f"basis coset {j} is not a unit"))
                break
    return out


# ---------------------------------------------------------------------------
# Formal direct sums and morphisms between them
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AddObject:
    """A formal finite direct sum of points, multiplicities in point order."""

    mults: tuple[tuple[str, int], ...]

    @staticmethod
    def make(d: CategoryDatum, counts: dict[str, int]) -> "AddObject":
        pairs = []
        for p in d.point_ids():
            c = int(counts.get(p, 0))
            if c < 0:
                raise InputError(f"negative multiplicity for {p}")
            if c:
                pairs.append((p, c))
        unknown = set(counts) - set(d.point_ids())
        if unknown:
            raise InputError(f"unknown points in add object: {sorted(unknown)}")
        return AddObject(tuple(pairs))

    def summands(self) -> list[str]:
        out = []
        for p, c in self.mults:
            out.extend([p] * c)
        return out

    def counts(self) -> dict[str, int]:
        return {p: c for p, c in self.mults}

    @property
    def total(self) -> int:
        return sum(c for _, c in self.mults)


@dataclass(frozen=True)
class AddMorphism:
    """A morphism between formal direct sums, stored as a block matrix of
    hom-space coefficient vectors: blocks[ti][sj] is the component from
    source summand sj into target summand ti."""

    source: AddObject
    target: AddObject
    blocks: tuple[tuple[np.ndarray, ...], ...]

    @staticmethod
    def build(d: CategoryDatum, source: AddObject, target: AddObject,
              block_map: dict[tuple[int, int], np.ndarray]) -> "AddMorphism":
        ops = d.ops
        src = source.summands()
        tgt = target.summands()
        rows = []
        for ti, tp in enumerate(tgt):
            row = []
            for sj, sp in enumerate(src):
                vec = block_map.get((ti, sj))
                if vec is None:
                    vec = ops.zeros(d.dim(sp, tp))
                else:
                    if vec.shape != (d.dim(sp, tp),):
                        raise InputError("block shape does not match hom dimension")
                    vec = ops.canon(vec)
                row.append(vec)
            rows.append(tuple(row))
        return AddMorphism(source, target, tuple(rows))

    @staticmethod
    def zero(d: CategoryDatum, source: AddObject, target: AddObject) -> "AddMorphism":
        return AddMorphism.build(d, source, target, {})

    @staticmethod
    def single(d: CategoryDatum, src_pt: str, dst_pt: str, vec: np.ndarray) -> "AddMorphism":
        return AddMorphism.build(
            d, AddObject(((src_pt, 1),)), AddObject(((dst_pt, 1),)), {(0, 0): vec})

    @staticmethod
    def columns(d: CategoryDatum, dst_pt: str,
                cols: Iterable[tuple[str, np.ndarray]]) -> "AddMorphism":
        """Assemble a morphism into a single point from (source point, hom
        coefficient vector) columns, preserving the given column order."""
        cols = list(cols)
        src = AddObject(tuple(_runlength([p for p, _ in cols])))
        tgt = AddObject(((dst_pt, 1),))
        return AddMorphism(src, tgt,
                           (tuple(d.ops.canon(v.copy()) for _, v in cols),))


def _runlength(items: list[str]) -> list[tuple[str, int]]:
    out: list[tuple[str, int]] = []
    for it in items:
        if out and out[-1][0] == it:
            out[-1] = (it, out[-1][1] + 1)
        else:
            out.append((it, 1))
    return out


def hom_matrix(d: CategoryDatum, z: str, g: AddMorphism) -> np.ndarray:
    """Scalar matrix of post-composition Hom(z, source) -> Hom(z, target) in
    the fixed hom bases; rows = dim Hom(z, target)."""
    d.require_point(z)
    ops = d.ops
    src = g.source.summands()
    tgt = g.target.summands()
    row_dims = [d.dim(z, t) for t in tgt]
    col_dims = [d.dim(z, s) for s in src]
    out = ops.zeros(sum(row_dims), sum(col_dims))
    r0 = 0
    for ti, tp in enumerate(tgt):
        c0 = 0
        for sj, sp in enumerate(src):
            blk = d.left_mult_matrix(z, sp, tp, g.blocks[ti][sj])
            out[r0:r0 + row_dims[ti], c0:c0 + col_dims[sj]] = blk
            c0 += col_dims[sj]
        r0 += row_dims[ti]
    return out


def identity_element(d: CategoryDatum, obj: AddObject) -> np.ndarray:
    """Coordinates of the identity of End(obj), blocks flattened in summand
    order; used as the right-hand side of split-epi systems."""
    ops = d.ops
    tgt = obj.summands()
    chunks = []
    for ti, tp in enumerate(tgt):
        for sj, sp in enumerate(tgt):
            dim = d.dim(sp, tp)
            if ti == sj:
                chunks.append(d.identities[tp].copy())
            else:
                chunks.append(ops.zeros(dim))
    return np.concatenate(chunks) if chunks else ops.zeros(0)


def is_split_epi(d: CategoryDatum, g: AddMorphism) -> bool:
    """True iff g has a right inverse: some s with g . s = id_target, solved
    as one linear system over all blocks simultaneously."""
    ops = d.ops
    src = g.source.summands()
    tgt = g.target.summands()
    if not tgt:
        return True
    # unknowns: blocks s[aj][bi] in hom(tgt[bi], src[aj])
    col_offsets = []
    total_cols = 0
    for aj, sp in enumerate(src):
        for bi, tp in enumerate(tgt):
            col_offsets.append(((aj, bi), total_cols, d.dim(tp, sp)))
            total_cols += d.dim(tp, sp)
    row_offsets = []
    total_rows = 0
    for bt, tp_t in enumerate(tgt):
        for bi, tp_i in enumerate(tgt):
            row_offsets.append(((bt, bi), total_rows, d.dim(tp_i, tp_t)))
            total_rows += d.dim(tp_i, tp_t)
    m = ops.zeros(total_rows, total_cols)
    for (bt, bi), r0, rdim in row_offsets:
        if rdim == 0:
            continue
        for (aj, bj), c0, cdim in col_offsets:
            if bj != bi or cdim == 0:
                continue
            blk = d.left_mult_matrix(tgt[bi], src[aj], tgt[bt], g.blocks[bt][aj])
            m[r0:r0 + rdim, c0:c0 + cdim] = blk
    rhs_chunks = []
    for (bt, bi), r0, rdim in row_offsets:
        if bt == bi:
            rhs_chunks.append(d.identities[tgt[bt]].copy())
        else:
            rhs_chunks.append(ops.zeros(rdim))
    rhs = np.concatenate(rhs_chunks).reshape(-1, 1) if rhs_chunks else ops.zeros(0, 1)
    return solve_right_arrays(ops, m, rhs) is not None


# ---------------------------------------------------------------------------
# Category algebra (projectivization) and idempotent ideals
# ---------------------------------------------------------------------------


@dataclass
class CategoryAlgebra:
    """The direct sum of all hom spaces with composition as multiplication.
    Finitely presented functors on the datum are exactly the finite
    dimensional right modules over this algebra."""

    datum: CategoryDatum
    dim: int
    order: list[tuple[str, str]]
    offsets: dict[tuple[str, str], tuple[int, int]]
    idempotents: dict[str, np.ndarray]

    def block(self, v: np.ndarray, pair: tuple[str, str]) -> np.ndarray:
        a, b = self.offsets[pair]
        return v[a:b]

    def embed(self, pair: tuple[str, str], vec: np.ndarray) -> np.ndarray:
        out = self.datum.ops.zeros(self.dim)
        a, b = self.offsets[pair]
        out[a:b] = vec
        return out

    def mult(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Algebra product u.v; morphism components compose as 'u after v'
        when composable and give zero otherwise."""
        d = self.datum
        out = d.ops.zeros(self.dim)
        for (y1, z) in self.order:
            ub = self.block(u, (y1, z))
            if not ub.shape[0] or all(d.ops.is_zero_scalar(t) for t in ub):
                continue
            for (x, y2) in self.order:
                if y2 != y1:
                    continue
                vb = self.block(v, (x, y2))
                if not vb.shape[0] or all(d.ops.is_zero_scalar(t) for t in vb):
                    continue
                prod = d.compose_vectors(x, y1, z, ub, vb)
                a, b = self.offsets[(x, z)]
                out[a:b] = d.ops.add(out[a:b], prod)
        return out


def build_algebra(d: CategoryDatum) -> CategoryAlgebra:
    order = []
    offsets = {}
    pos = 0
    for x in d.point_ids():
        for y in d.point_ids():
            dim = d.dim(x, y)
            if dim:
                order.append((x, y))
                offsets[(x, y)] = (pos, pos + dim)
                pos += dim
    alg = CategoryAlgebra(d, pos, order, offsets, {})
    for p in d.point_ids():
        if (p, p) in offsets:
            alg.idempotents[p] = alg.embed((p, p), d.identities[p])
        else:
            alg.idempotents[p] = d.ops.zeros(pos)
    return alg


@dataclass
class IdealBasis:
    """Blockwise echelon basis of a two-sided ideal of the category algebra.
    The ideal generated by idempotents decomposes along hom blocks, which
    keeps every membership test small."""

    blocks: dict[tuple[str, str], np.ndarray]

    def dim(self) -> int:
        return sum(m.shape[0] for m in self.blocks.values())

    def block_dim(self, pair: tuple[str, str]) -> int:
        m = self.blocks.get(pair)
        return 0 if m is None else m.shape[0]


def idempotent_ideal(alg: CategoryAlgebra, pts: Iterable[str]) -> IdealBasis:
    """Basis of the two-sided ideal generated by the idempotents of `pts`.
    Its (w,z) block is the span of all composites w -> x -> z through points
    x of `pts`, so the span closes after a single pass."""
    d = alg.datum
    pset = [d.require_point(p) for p in pts]
    blocks: dict[tuple[str, str], np.ndarray] = {}
    for w in d.point_ids():
        for z in d.point_ids():
            dwz = d.dim(w, z)
            if dwz == 0:
                continue
            rs = RowSpace(d.ops, dwz)
            for x in pset:
                if d.dim(w, x) == 0 or d.dim(x, z) == 0:
                    continue
                rs.add_many(_sparse_products(d, w, x, z))
                if rs.dim == dwz:
                    break
            if rs.dim:
                blocks[(w, z)] = rs.matrix()
    return IdealBasis(blocks)


def idempotent_in_ideal(alg: CategoryAlgebra, ideal: IdealBasis, pid: str) -> bool:
    d = alg.datum
    dpp = d.dim(pid, pid)
    if dpp == 0:
        return True
    mat = ideal.blocks.get((pid, pid))
    rs = RowSpace(d.ops, dpp)
    if mat is not None:
        rs.add_many(mat)
    return rs.contains(d.identities[pid])
