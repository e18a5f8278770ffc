"""Generation and certification of the shipped data packs.

Two independent ring-level oracles back the packs:

* the artinian family k[x]/(x^(n+1)): indecomposables are enumerated by
  normal form (k[x]/(x^i), i = 1..n+1), hom spaces are computed as matrix
  commutants, and stable homs as quotients by the subspace of maps factoring
  through the free module;

* a graded model of k[x,y]/(x^2) (x, y of degree 1): the modules are the
  ideal (x) and the two-generator ideals (x, y^n), presented by relation
  matrices; homs and factor-through-free subspaces are computed degree by
  degree up to a truncation bound T, and the finite category datum stores
  the stable homs of a fixed degree window.

Every pack ships with a manifest ("pack-manifest/1") recording oracle
parameters, content hashes, the change of basis to a reversed-enumeration
run (the certification gate re-derives everything in reversed order and
compares through that base change), and, for the graded family, per-degree
dimension tables at truncations T and T+1 as stabilization evidence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .catdatum import (
    CategoryDatum,
    PointInfo,
    datum_from_payload,
    datum_to_payload,
    load_datum,
)
from .core import (
    FieldOps,
    FieldSpec,
    InputError,
    RowSpace,
    kernel_basis,
    rank_of,
    solve_right_arrays,
)


class GenerationError(InputError):
    """The oracle could not certify its own output."""


MANIFEST_SCHEMA = "pack-manifest/1"
TOWER_SCHEMA = "stable-cat-tower/1"


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _canonical_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _coords_in(ops: FieldOps, basis_rows: list[np.ndarray],
               extra_rows: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Coordinates of `vec` over `basis_rows`, allowing an `extra_rows` span
    to be absorbed (the quotient denominator).  Raises if not in the span."""
    n_basis = len(basis_rows)
    width = vec.shape[0]
    total = n_basis + extra_rows.shape[0]
    if total == 0:
        if any(not ops.is_zero_scalar(v) for v in vec):
            raise GenerationError("vector outside empty span")
        return ops.zeros(0)
    m = ops.zeros(width, total)
    for j, row in enumerate(basis_rows):
        m[:, j] = row
    for j in range(extra_rows.shape[0]):
        m[:, n_basis + j] = extra_rows[j]
    sol = solve_right_arrays(ops, m, vec.reshape(-1, 1))
    if sol is None:
        raise GenerationError("vector outside span during coordinate extraction")
    return sol[:n_basis, 0]


def local_radical(ops: FieldOps, dim: int, left_mult, id_vec: np.ndarray) -> np.ndarray:
    """Radical basis of a local algebra with residue field k.

    For each basis element b the residue scalar is trace(L_b)/dim (L_b is
    the sole-eigenvalue map lambda + nilpotent); the radical is the span of
    b - lambda(b) . 1.  Requires the characteristic not to divide dim; the
    generators guard their parameters accordingly and the datum validator
    re-checks the output independently."""
    if dim == 0:
        return ops.zeros(0, 0)
    if ops.prime and dim % ops.p == 0:
        raise GenerationError(
            f"cannot split the residue field: p={ops.p} divides dim End={dim}; "
            "choose a larger prime")
    inv_dim = ops.inv(ops.array([dim])[0])
    rs = RowSpace(ops, dim)
    for i in range(dim):
        b = ops.zeros(dim)
        b[i] = ops.one
        lb = left_mult(b)
        tr = ops.zero
        for k in range(dim):
            tr = ops.add(tr, lb[k, k])
        lam = ops.mul(tr, inv_dim)
        cand = ops.sub(b, ops.mul(id_vec, lam))
        rs.add(cand)
    if rs.dim != dim - 1 or rs.contains(id_vec):
        raise GenerationError("endomorphism algebra is not local as expected")
    return rs.matrix()


@dataclass
class StableHomTable:
    """Stable hom data for one ordered pair of points, in one enumeration
    order: representative vectors live in the oracle's ambient hom
    coordinates; `free_rows` spans the factor-through-free subspace."""

    reps: list[np.ndarray]
    free_rows: np.ndarray
    degrees: Optional[list[int]] = None  # graded oracle only

    @property
    def dim(self) -> int:
        return len(self.reps)


def _stable_from(ops: FieldOps, hom_rows: list[np.ndarray],
                 free_rows: np.ndarray, reverse: bool,
                 degrees: Optional[list[int]] = None) -> StableHomTable:
    width = free_rows.shape[1] if free_rows.size else (
        hom_rows[0].shape[0] if hom_rows else 0)
    span = RowSpace(ops, width)
    order = range(free_rows.shape[0])
    for i in (reversed(order) if reverse else order):
        span.add(free_rows[i])
    free_reduced = span.matrix()
    reps: list[np.ndarray] = []
    degs: list[int] = []
    idx = range(len(hom_rows))
    for i in (reversed(idx) if reverse else idx):
        red = span.reduce(hom_rows[i])
        if span.add(red.copy()):
            reps.append(red)
            if degrees is not None:
                degs.append(degrees[i])
    return StableHomTable(reps, free_reduced, degs if degrees is not None else None)


# ---------------------------------------------------------------------------
# the artinian oracle: k[x]/(x^(n+1))
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArtinianRingSpec:
    """The ring k[x]/(x^(n+1)); its modules are classified by normal form."""

    n: int
    field: FieldSpec

    def __post_init__(self):
        if self.n < 1:
            raise InputError("artinian family parameter must be >= 1")


class ArtinianOracle:
    """Brute-force module oracle over k[x]/(x^(n+1)).

    Module i is k[x]/(x^i) with x acting as the nilpotent shift on the
    monomial basis; module homomorphisms are the solutions of the commutation
    equation A . X_i = X_j . A solved by exact linear algebra, and maps
    factoring through the free module (i = n+1) span the stable-zero
    subspace."""

    def __init__(self, spec: ArtinianRingSpec, reverse: bool = False):
        self.spec = spec
        self.ops = spec.field.ops()
        self.n = spec.n
        self.reverse = reverse
        self._hom_cache: dict[tuple[int, int], list[np.ndarray]] = {}
        self._stable: dict[tuple[int, int], StableHomTable] = {}

    def shift(self, i: int) -> np.ndarray:
        m = self.ops.zeros(i, i)
        for a in range(i - 1):
            m[a + 1, a] = self.ops.one
        return m

    def hom_basis(self, i: int, j: int) -> list[np.ndarray]:
        """Basis of Hom(M_i, M_j) as flattened j x i matrices."""
        key = (i, j)
        if key in self._hom_cache:
            return self._hom_cache[key]
        ops = self.ops
        xi, xj = self.shift(i), self.shift(j)
        rows = []
        for r in range(j):
            for c in range(i):
                # coefficient of unknown A[r, c] in every equation of AX - XA
                e = ops.zeros(j, i)
                e[r, c] = ops.one
                eq = ops.sub(ops.matmul(e, xi), ops.matmul(xj, e))
                rows.append(eq.reshape(-1))
        m = ops.zeros(j * i, j * i)
        for col, row in enumerate(rows):
            m[:, col] = row
        perm = list(reversed(range(j * i))) if self.reverse else None
        basis = kernel_basis(ops, m, col_perm=perm)
        out = [basis[k] for k in range(basis.shape[0])]
        self._hom_cache[key] = out
        return out

    def free_through(self, i: int, j: int) -> np.ndarray:
        """Span of composites M_i -> R -> M_j with R the free module."""
        ops = self.ops
        r = self.n + 1
        into = self.hom_basis(i, r)
        outof = self.hom_basis(r, j)
        rows = []
        for b in outof:
            bm = b.reshape(j, r)
            for c in into:
                cm = c.reshape(r, i)
                rows.append(ops.matmul(bm, cm).reshape(-1))
        if not rows:
            return ops.zeros(0, j * i)
        out = ops.zeros(len(rows), j * i)
        for k, row in enumerate(rows):
            out[k] = row
        return out

    def stable(self, i: int, j: int) -> StableHomTable:
        key = (i, j)
        if key not in self._stable:
            self._stable[key] = _stable_from(
                self.ops, self.hom_basis(i, j), self.free_through(i, j),
                self.reverse)
        return self._stable[key]

    def compose_coords(self, i: int, j: int, l: int,
                       g: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Stable coordinates of (g: M_j -> M_l) . (f: M_i -> M_j)."""
        ops = self.ops
        comp = ops.matmul(g.reshape(l, j), f.reshape(j, i)).reshape(-1)
        st = self.stable(i, l)
        return _coords_in(ops, st.reps, st.free_rows, comp)

    def identity_coords(self, i: int) -> np.ndarray:
        st = self.stable(i, i)
        return _coords_in(self.ops, st.reps, st.free_rows,
                          self.ops.eye(i).reshape(-1))


def _point_name(i: int) -> str:
    return f"M{i}"


def _build_datum_from_tables(field: FieldSpec, point_list: list[PointInfo],
                             stable_dims: dict[tuple[str, str], int],
                             compose_fn, identity_fn, radical_fn) -> CategoryDatum:
    ops = field.ops()
    hom_basis = {}
    for (x, y), dim in stable_dims.items():
        if dim:
            hom_basis[(x, y)] = [f"{x}_{y}_{k}" for k in range(dim)]
    datum = CategoryDatum(field, point_list, hom_basis, {}, {}, {})
    pts = [p.id for p in point_list]
    for x in pts:
        for y in pts:
            for z in pts:
                dxy = datum.dim(x, y)
                dyz = datum.dim(y, z)
                dxz = datum.dim(x, z)
                if dxy == 0 or dyz == 0:
                    continue
                for gi in range(dyz):
                    for fi in range(dxy):
                        coords = compose_fn(x, y, z, gi, fi)
                        terms = [(f"{x}_{z}_{k}", coords[k])
                                 for k in range(dxz)
                                 if not ops.is_zero_scalar(coords[k])]
                        if terms:
                            datum.sparse_compose[
                                (f"{y}_{z}_{gi}", f"{x}_{y}_{fi}")] = terms
    for x in pts:
        datum.identities[x] = identity_fn(x)
    for x in pts:
        datum.radicals[x] = radical_fn(datum, x)
    return datum


def _end_radical(datum: CategoryDatum, x: str) -> np.ndarray:
    d = datum.dim(x, x)
    ops = datum.ops

    def left_mult(b):
        return datum.left_mult_matrix(x, x, x, b)

    return local_radical(ops, d, left_mult, datum.identities[x])


def gen_an_pack(spec: ArtinianRingSpec, *, reverse: bool = False) -> tuple[CategoryDatum, ArtinianOracle]:
    """Generate the datum of the stable module category of k[x]/(x^(n+1)):
    points M_1..M_n (the free module is dropped), stable hom spaces,
    composition tables and endomorphism radicals, all computed by the
    brute-force oracle and emitted in a deterministic basis order."""
    oracle = ArtinianOracle(spec, reverse=reverse)
    n = spec.n
    if spec.field.kind == "prime" and spec.field.p <= n + 1:
        raise GenerationError("prime too small for the requested family; "
                              "residue-field splitting needs p > n + 1")
    points = [PointInfo(_point_name(i), True) for i in range(1, n + 1)]
    dims = {}
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            dims[(_point_name(i), _point_name(j))] = oracle.stable(i, j).dim

    def compose_fn(x, y, z, gi, fi):
        i, j, l = int(x[1:]), int(y[1:]), int(z[1:])
        g = oracle.stable(j, l).reps[gi]
        f = oracle.stable(i, j).reps[fi]
        return oracle.compose_coords(i, j, l, g, f)

    def identity_fn(x):
        return oracle.identity_coords(int(x[1:]))

    datum = _build_datum_from_tables(spec.field, points, dims, compose_fn,
                                     identity_fn, _end_radical)
    return datum, oracle


def _base_change_tables(ops: FieldOps, fwd: dict, rev: dict,
                        pair_names: list[tuple[str, str]]) -> dict[str, list[list[str]]]:
    """For each hom pair, the matrix whose columns express the reversed-run
    stable basis in forward stable coordinates."""
    out = {}
    for (x, y) in pair_names:
        ft: StableHomTable = fwd[(x, y)]
        rt: StableHomTable = rev[(x, y)]
        if ft.dim != rt.dim:
            raise GenerationError(
                f"enumeration orders disagree on dim stHom({x},{y})")
        if ft.dim == 0:
            continue
        b = ops.zeros(ft.dim, rt.dim)
        for col, rep in enumerate(rt.reps):
            b[:, col] = _coords_in(ops, ft.reps, ft.free_rows, rep)
        out[f"{x}->{y}"] = [[ops.format_scalar(v) for v in row] for row in b]
    return out


def an_pack_manifest(spec: ArtinianRingSpec, datum: CategoryDatum,
                     fwd: ArtinianOracle) -> dict:
    rev_datum, rev_oracle = gen_an_pack(spec, reverse=True)
    ops = spec.field.ops()
    pair_names = []
    fwd_tables, rev_tables = {}, {}
    for i in range(1, spec.n + 1):
        for j in range(1, spec.n + 1):
            x, y = _point_name(i), _point_name(j)
            pair_names.append((x, y))
            fwd_tables[(x, y)] = fwd.stable(i, j)
            rev_tables[(x, y)] = rev_oracle.stable(i, j)
    return {
        "schema": MANIFEST_SCHEMA,
        "pack_id": f"an{spec.n}-{_field_tag(spec.field)}",
        "generator_version": __version__,
        "oracle": {"family": "an", "n": spec.n,
                   "field": spec.field.to_payload()},
        "oracle_hashes": {"datum_sha256": _canonical_hash(datum_to_payload(datum))},
        "base_change": _base_change_tables(ops, fwd_tables, rev_tables, pair_names),
    }


def _field_tag(field: FieldSpec) -> str:
    return f"p{field.p}" if field.kind == "prime" else "q"


def write_an_pack(spec: ArtinianRingSpec, path: str | Path) -> Path:
    datum, oracle = gen_an_pack(spec)
    path = Path(path)
    payload = datum_to_payload(datum)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    manifest = an_pack_manifest(spec, datum, oracle)
    manifest_path = path.with_name(path.stem + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# the graded oracle: k[x,y]/(x^2)
# ---------------------------------------------------------------------------

Monomial = tuple[int, int]  # (x exponent <= 1, y exponent)


@dataclass(frozen=True)
class GradedModulePresentation:
    """A graded module over k[x,y]/(x^2) given by generators with degrees and
    homogeneous relation columns; entry (i, j) is an element of degree
    rel_degrees[j] - gen_degrees[i], stored as (coeff, x_exp, y_exp) terms."""

    name: str
    gen_degrees: tuple[int, ...]
    rel_degrees: tuple[int, ...]
    entries: tuple[tuple[tuple[tuple[int, int, int], ...], ...], ...]
    # entries[i][j] = terms of the (gen i, relation j) entry


def _ideal_x() -> GradedModulePresentation:
    # (x) = coker( S(-2) --x--> S(-1) )
    return GradedModulePresentation("I", (1,), (2,), ((((1, 1, 0),),),))


def _ideal_x_yn(n: int) -> GradedModulePresentation:
    # (x, y^n) = coker of [[x, -y^n], [0, x]]
    return GradedModulePresentation(
        f"I{n}", (1, n), (2, n + 1),
        (
            (((1, 1, 0),), ((-1, 0, n),)),   # row of generator u = x
            ((), ((1, 1, 0),)),              # row of generator v = y^n
        ))


def _free_module() -> GradedModulePresentation:
    return GradedModulePresentation("S", (0,), (), ((),))


def _s_basis(d: int) -> list[Monomial]:
    if d < 0:
        return []
    if d == 0:
        return [(0, 0)]
    return [(0, d), (1, d - 1)]


class GradedModule:
    """Degreewise exact model of a presented graded module, truncated at
    total degree T."""

    def __init__(self, world: "GradedWorld", pres: GradedModulePresentation):
        self.world = world
        self.pres = pres
        self.ops = world.ops
        self.T = world.T
        self._piece: dict[int, dict] = {}

    def ambient_basis(self, d: int) -> list[tuple[int, Monomial]]:
        out = []
        for i, gd in enumerate(self.pres.gen_degrees):
            for mon in _s_basis(d - gd):
                out.append((i, mon))
        return out

    def piece(self, d: int) -> dict:
        """Quotient data of the degree-d piece: relation row space, ambient
        positions of the canonical piece basis, and the piece dimension."""
        if d in self._piece:
            return self._piece[d]
        if d > self.T:
            raise GenerationError(
                f"module piece beyond truncation requested ({d} > {self.T})")
        ops = self.ops
        amb = self.ambient_basis(d)
        index = {key: k for k, key in enumerate(amb)}
        width = len(amb)
        rel = RowSpace(ops, width)
        for j, rd in enumerate(self.pres.rel_degrees):
            for mon in _s_basis(d - rd):
                vec = ops.zeros(width)
                any_term = False
                for i in range(len(self.pres.gen_degrees)):
                    for coeff, xe, ye in self.pres.entries[i][j]:
                        nxe, nye = mon[0] + xe, mon[1] + ye
                        if nxe > 1:
                            continue
                        pos = index.get((i, (nxe, nye)))
                        if pos is None:
                            continue
                        vec[pos] = ops.add(vec[pos], ops.array([coeff])[0])
                        any_term = True
                if any_term:
                    rel.add(vec)
        positions = rel.complement_positions()
        data = {"ambient": amb, "index": index, "rel": rel,
                "positions": positions, "dim": len(positions)}
        self._piece[d] = data
        return data

    def dim(self, d: int) -> int:
        if d < 0:
            return 0
        return self.piece(d)["dim"]

    def project(self, d: int, ambient_vec: np.ndarray) -> np.ndarray:
        data = self.piece(d)
        red = data["rel"].reduce(ambient_vec)
        out = self.ops.zeros(data["dim"])
        for k, pos in enumerate(data["positions"]):
            out[k] = red[pos]
        return out

    def monomial_action(self, xe: int, ye: int, from_deg: int) -> np.ndarray:
        """Matrix of multiplication by x^xe y^ye: piece(from) -> piece(from +
        xe + ye), in piece coordinates."""
        if not hasattr(self, "_act_cache"):
            self._act_cache = {}
        ckey = (xe, ye, from_deg)
        if ckey in self._act_cache:
            return self._act_cache[ckey]
        ops = self.ops
        to_deg = from_deg + xe + ye
        src = self.piece(from_deg)
        tgt = self.piece(to_deg)
        out = ops.zeros(tgt["dim"], src["dim"])
        for col, pos in enumerate(src["positions"]):
            i, (mxe, mye) = src["ambient"][pos]
            nxe, nye = mxe + xe, mye + ye
            if nxe > 1:
                continue
            amb = ops.zeros(len(tgt["ambient"]))
            tpos = tgt["index"].get((i, (nxe, nye)))
            if tpos is None:
                continue
            amb[tpos] = ops.one
            out[:, col] = self.project(to_deg, amb)
        self._act_cache[ckey] = out
        return out

    def element_action(self, terms, from_deg: int, to_dim: int) -> np.ndarray:
        """Action of a homogeneous ring element given as (coeff, xe, ye)
        terms, from piece(from_deg)."""
        ops = self.ops
        out = None
        for coeff, xe, ye in terms:
            m = self.monomial_action(xe, ye, from_deg)
            m = ops.mul(m, ops.array([coeff])[0])
            out = m if out is None else ops.add(out, m)
        if out is None:
            return ops.zeros(to_dim, self.piece(from_deg)["dim"])
        return out


@dataclass
class GradedHom:
    """A homogeneous degree-d homomorphism, stored by gen-image piece
    vectors and by the flattened concatenation of those vectors."""

    degree: int
    gen_images: list[np.ndarray]
    flat: np.ndarray


class GradedWorld:
    """All modules, hom spaces and stable quotients of one truncation run."""

    def __init__(self, field: FieldSpec, levels: int, T: int,
                 reverse: bool = False):
        self.field = field
        self.ops = field.ops()
        self.levels = levels
        self.T = T
        self.reverse = reverse
        self.window_lo = 1 - levels
        self.window_hi = levels
        self.modules: dict[str, GradedModule] = {}
        for pres in [_free_module(), _ideal_x()] + [
                _ideal_x_yn(n) for n in range(1, levels + 1)]:
            self.modules[pres.name] = GradedModule(self, pres)
        self._hom: dict = {}
        self._free_sub: dict = {}
        self._stable: dict = {}

    def point_names(self) -> list[str]:
        return ["I"] + [f"I{n}" for n in range(1, self.levels + 1)]

    # -- hom spaces ------------------------------------------------------

    def hom_space(self, mname: str, nname: str, d: int) -> list[GradedHom]:
        key = (mname, nname, d)
        if key in self._hom:
            return self._hom[key]
        ops = self.ops
        m = self.modules[mname]
        n = self.modules[nname]
        gdims = [n.dim(gd + d) for gd in m.pres.gen_degrees]
        offsets = np.cumsum([0] + gdims)
        total = int(offsets[-1])
        if total == 0:
            self._hom[key] = []
            return []
        eq_rows = []
        for j, rd in enumerate(m.pres.rel_degrees):
            tgt_dim = n.dim(rd + d)
            if tgt_dim == 0:
                continue
            block = ops.zeros(tgt_dim, total)
            for i, gd in enumerate(m.pres.gen_degrees):
                if gdims[i] == 0:
                    continue
                act = n.element_action(m.pres.entries[i][j], gd + d, tgt_dim)
                block[:, offsets[i]:offsets[i + 1]] = act
            eq_rows.append(block)
        if eq_rows:
            eq = ops.zeros(sum(b.shape[0] for b in eq_rows), total)
            r0 = 0
            for b in eq_rows:
                eq[r0:r0 + b.shape[0]] = b
                r0 += b.shape[0]
        else:
            eq = ops.zeros(0, total)
        perm = list(reversed(range(total))) if self.reverse else None
        basis = kernel_basis(ops, eq, col_perm=perm)
        homs = []
        for k in range(basis.shape[0]):
            flat = basis[k]
            gens = [flat[offsets[i]:offsets[i + 1]].copy()
                    for i in range(len(gdims))]
            homs.append(GradedHom(d, gens, flat.copy()))
        self._hom[key] = homs
        return homs

    def free_through(self, mname: str, nname: str, d: int) -> np.ndarray:
        """Span of composites M -> S(-a) -> N in degree d, in flattened
        gen-image coordinates."""
        key = (mname, nname, d)
        if key in self._free_sub:
            return self._free_sub[key]
        ops = self.ops
        m = self.modules[mname]
        n = self.modules[nname]
        gdims = [n.dim(gd + d) for gd in m.pres.gen_degrees]
        offsets = np.cumsum([0] + gdims)
        total = int(offsets[-1])
        rows = []
        e_lo = -max(m.pres.gen_degrees)
        for e in range(e_lo, d + 1):
            alphas = self.hom_space(mname, "S", e)
            if not alphas:
                continue
            w_deg = d - e
            wdim = n.dim(w_deg)
            if wdim == 0:
                continue
            for alpha in alphas:
                for wk in range(wdim):
                    flat = ops.zeros(total)
                    for i, gd in enumerate(m.pres.gen_degrees):
                        if gdims[i] == 0:
                            continue
                        s_img = alpha.gen_images[i]  # vector over S piece gd+e
                        s_piece = self.modules["S"].piece(gd + e)
                        acc = ops.zeros(gdims[i])
                        for pos_idx, pos in enumerate(s_piece["positions"]):
                            coeff = s_img[pos_idx]
                            if ops.is_zero_scalar(coeff):
                                continue
                            _, (xe, ye) = s_piece["ambient"][pos]
                            act = n.monomial_action(xe, ye, w_deg)
                            wvec = ops.zeros(wdim)
                            wvec[wk] = ops.one
                            acc = ops.add(acc, ops.mul(
                                ops.matmul(act, wvec.reshape(-1, 1)).reshape(-1),
                                coeff))
                        flat[offsets[i]:offsets[i + 1]] = acc
                    rows.append(flat)
        if rows:
            out = ops.zeros(len(rows), total)
            for k, r in enumerate(rows):
                out[k] = r
        else:
            out = ops.zeros(0, total)
        self._free_sub[key] = out
        return out

    def stable(self, mname: str, nname: str, d: int) -> StableHomTable:
        key = (mname, nname, d)
        if key not in self._stable:
            homs = self.hom_space(mname, nname, d)
            self._stable[key] = _stable_from(
                self.ops, [h.flat for h in homs],
                self.free_through(mname, nname, d), self.reverse)
        return self._stable[key]

    def stable_pair(self, mname: str, nname: str) -> list[tuple[int, np.ndarray]]:
        """All stable basis representatives of the stored degree window, as
        (degree, flattened rep) in degree-ascending order."""
        key = (mname, nname)
        if key in getattr(self, "_pair_cache", {}):
            return self._pair_cache[key]
        if not hasattr(self, "_pair_cache"):
            self._pair_cache = {}
        out = []
        for d in range(self.window_lo, self.window_hi + 1):
            st = self.stable(mname, nname, d)
            for rep in st.reps:
                out.append((d, rep))
        self._pair_cache[key] = out
        return out

    def compose_coords_indexed(self, x: str, y: str, z: str,
                               gi: int, fi: int) -> Optional[np.ndarray]:
        """Coordinates of the basis composite gi . fi over the full stable
        basis of the pair (x, z); None when the composite degree leaves the
        stored window.  Cached across level restrictions."""
        if not hasattr(self, "_ccache"):
            self._ccache = {}
        key = (x, y, z, gi, fi)
        if key in self._ccache:
            return self._ccache[key]
        f_deg, f_rep = self.stable_pair(x, y)[fi]
        g_deg, g_rep = self.stable_pair(y, z)[gi]
        coords = self.stable_compose_coords(x, y, z, f_deg, f_rep, g_deg, g_rep)
        if coords is None:
            self._ccache[key] = None
            return None
        out_deg = f_deg + g_deg
        pair = self.stable_pair(x, z)
        full = self.ops.zeros(len(pair))
        offset = sum(1 for d, _ in pair if d < out_deg)
        full[offset:offset + coords.shape[0]] = coords
        self._ccache[key] = full
        return full

    # -- composition ------------------------------------------------------

    def _gen_splits(self, mname: str, nname: str, d: int):
        m = self.modules[mname]
        n = self.modules[nname]
        gdims = [n.dim(gd + d) for gd in m.pres.gen_degrees]
        offsets = np.cumsum([0] + gdims)
        return m, n, gdims, offsets

    def piecewise_matrix(self, nname: str, pname: str, hom_flat: np.ndarray,
                         hom_deg: int, at_deg: int) -> np.ndarray:
        """Matrix of the hom N -> P (given by gen images) on the degree
        `at_deg` piece of N."""
        ops = self.ops
        n = self.modules[nname]
        p = self.modules[pname]
        _, _, gdims, offsets = self._gen_splits(nname, pname, hom_deg)
        src = n.piece(at_deg)
        tgt_dim = p.dim(at_deg + hom_deg)
        out = ops.zeros(tgt_dim, src["dim"])
        for col, pos in enumerate(src["positions"]):
            i, (xe, ye) = src["ambient"][pos]
            gi_img = hom_flat[offsets[i]:offsets[i + 1]]
            if gdims[i] == 0:
                continue
            act = p.monomial_action(xe, ye, n.pres.gen_degrees[i] + hom_deg)
            out[:, col] = ops.matmul(act, gi_img.reshape(-1, 1)).reshape(-1)
        return out

    def compose_flat(self, mname: str, nname: str, pname: str,
                     f_flat: np.ndarray, f_deg: int,
                     g_flat: np.ndarray, g_deg: int) -> np.ndarray:
        """Flattened gen-image vector of g . f at degree f_deg + g_deg."""
        ops = self.ops
        m = self.modules[mname]
        out_deg = f_deg + g_deg
        _, _, f_gdims, f_offsets = self._gen_splits(mname, nname, f_deg)
        _, _, o_gdims, o_offsets = self._gen_splits(mname, pname, out_deg)
        total = int(o_offsets[-1])
        flat = ops.zeros(total)
        for i, gd in enumerate(m.pres.gen_degrees):
            fi = f_flat[f_offsets[i]:f_offsets[i + 1]]
            if f_gdims[i] == 0 or o_gdims[i] == 0:
                continue
            pw = self.piecewise_matrix(nname, pname, g_flat, g_deg, gd + f_deg)
            flat[o_offsets[i]:o_offsets[i + 1]] = ops.matmul(
                pw, fi.reshape(-1, 1)).reshape(-1)
        return flat

    def stable_compose_coords(self, mname: str, nname: str, pname: str,
                              f_deg: int, f_rep: np.ndarray,
                              g_deg: int, g_rep: np.ndarray) -> Optional[np.ndarray]:
        """Coordinates of g . f over the stable basis of (M, P); None when
        the composite degree falls outside the stored window (the truncation
        ideal of the finite datum)."""
        out_deg = f_deg + g_deg
        if out_deg < self.window_lo or out_deg > self.window_hi:
            return None
        comp = self.compose_flat(mname, nname, pname, f_rep, f_deg, g_rep, g_deg)
        st = self.stable(mname, pname, out_deg)
        return _coords_in(self.ops, st.reps, st.free_rows, comp)

    def identity_flat(self, mname: str) -> np.ndarray:
        ops = self.ops
        m = self.modules[mname]
        gdims = [m.dim(gd) for gd in m.pres.gen_degrees]
        offsets = np.cumsum([0] + gdims)
        flat = ops.zeros(int(offsets[-1]))
        for i, gd in enumerate(m.pres.gen_degrees):
            amb = ops.zeros(len(m.piece(gd)["ambient"]))
            pos = m.piece(gd)["index"][(i, (0, 0))]
            amb[pos] = ops.one
            flat[offsets[i]:offsets[i + 1]] = m.project(gd, amb)
        return flat

    def dimension_table(self) -> dict:
        """Per-pair, per-degree dims of hom / factor-through-free / stable
        spaces over the stored window: the stabilization evidence."""
        table = {}
        for x in self.point_names():
            for y in self.point_names():
                per = {}
                for d in range(self.window_lo, self.window_hi + 1):
                    homs = self.hom_space(x, y, d)
                    free = self.free_through(x, y, d)
                    rs = RowSpace(self.ops, free.shape[1] if free.size else (
                        homs[0].flat.shape[0] if homs else 0))
                    rs.add_many(free)
                    st = self.stable(x, y, d)
                    per[str(d)] = {"hom": len(homs), "free": rs.dim,
                                   "stable": st.dim}
                table[f"{x}->{y}"] = per
        return table


# ---------------------------------------------------------------------------
# tower assembly
# ---------------------------------------------------------------------------


def _world_datum(world: GradedWorld, point_subset: list[str]) -> CategoryDatum:
    """The finite category datum of the window-truncated stable category on
    the given points (a full subcategory of the top-level one)."""
    field = world.field
    ops = world.ops
    points = [PointInfo(p, p != "I") for p in point_subset]
    pair_reps = {(x, y): world.stable_pair(x, y)
                 for x in point_subset for y in point_subset}
    dims = {pair: len(reps) for pair, reps in pair_reps.items()}

    def compose_fn(x, y, z, gi, fi):
        coords = world.compose_coords_indexed(x, y, z, gi, fi)
        if coords is None:
            return ops.zeros(dims[(x, z)])
        return coords

    def identity_fn(x):
        flat = world.identity_flat(x)
        st = world.stable(x, x, 0)
        coords0 = _coords_in(ops, st.reps, st.free_rows, flat)
        out = ops.zeros(dims[(x, x)])
        k = 0
        for d, _ in pair_reps[(x, x)]:
            if d == 0:
                break
            k += 1
        out[k:k + coords0.shape[0]] = coords0
        return out

    return _build_datum_from_tables(field, points, dims, compose_fn,
                                    identity_fn, _end_radical)


@dataclass
class TowerGenResult:
    levels: list[CategoryDatum]
    tower_payload: dict
    manifest: dict
    level_payloads: list[dict]


def gen_ainf_tower(levels: int, trunc_degree: Optional[int] = None,
                   field: Optional[FieldSpec] = None) -> TowerGenResult:
    """Generate the truncation tower of the graded countable-type family:
    level N holds the points {I, I_1..I_N}.  Hom data between fixed points is
    computed once at the top and restricted, so stabilization across levels
    is exact; the manifest carries T vs T+1 dimension agreement as evidence
    that the truncation degree saw the full window."""
    field = field or FieldSpec("prime", 32003)
    if field.kind == "prime" and field.p == 2:
        raise GenerationError("p = 2 is refused for this family "
                              "(the defining relation is a square)")
    if levels < 1:
        raise InputError("levels must be >= 1")
    T = trunc_degree if trunc_degree is not None else 3 * levels
    if T < 3 * levels:
        raise InputError(f"truncation degree must be >= {3 * levels}")

    world = GradedWorld(field, levels, T)
    world_next = GradedWorld(field, levels, T + 1)
    table = world.dimension_table()
    table_next = world_next.dimension_table()
    if table != table_next:
        raise GenerationError(
            "dimension tables at T and T+1 disagree; increase the truncation degree")

    world_rev = GradedWorld(field, levels, T, reverse=True)
    point_order = world.point_names()
    level_datums = []
    level_payloads = []
    for n in range(1, levels + 1):
        subset = ["I"] + [f"I{k}" for k in range(1, n + 1)]
        datum = _world_datum(world, subset)
        level_datums.append(datum)
        level_payloads.append(datum_to_payload(datum))

    base_change = _graded_base_change(world, world_rev)

    tower_payload = {
        "schema": TOWER_SCHEMA,
        "levels": [{"level": n, "datum": f"level{n}.json"}
                   for n in range(1, levels + 1)],
        "embeddings": [
            {"from_level": n, "to_level": n + 1,
             "map": {p: p for p in ["I"] + [f"I{k}" for k in range(1, n + 1)]}}
            for n in range(1, levels)],
        "points": [
            {"id": "I", "locally_free": False, "appears_at_level": 1,
             "stabilizes_at_level": 1, "family_index": None}] + [
            {"id": f"I{n}", "locally_free": True, "appears_at_level": n,
             "stabilizes_at_level": n, "family_index": n}
            for n in range(1, levels + 1)],
    }
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "pack_id": f"ainf-L{levels}-T{T}-{_field_tag(field)}",
        "generator_version": __version__,
        "oracle": {"family": "ainf", "levels": levels, "trunc_degree": T,
                   "degree_window": [world.window_lo, world.window_hi],
                   "field": field.to_payload()},
        "oracle_hashes": {"level_sha256": {
            str(n + 1): _canonical_hash(level_payloads[n])
            for n in range(levels)}},
        "stabilization": {"agrees_with_next_truncation": True,
                          "dimension_table": table},
        "base_change": base_change,
    }
    return TowerGenResult(level_datums, tower_payload, manifest, level_payloads)


def _graded_base_change(world: GradedWorld,
                        world_rev: GradedWorld) -> dict[str, list[list[str]]]:
    """Per-pair change of basis from the reversed run to the forward run.
    Homogeneous homs of different degrees live in different ambient spaces,
    so the matrix is block diagonal over degrees (both runs order bases by
    ascending degree)."""
    ops = world.ops
    out = {}
    for x in world.point_names():
        for y in world.point_names():
            fwd = world.stable_pair(x, y)
            rev = world_rev.stable_pair(x, y)
            if len(fwd) != len(rev):
                raise GenerationError(
                    f"enumeration orders disagree on dim stHom({x},{y})")
            n = len(fwd)
            if n == 0:
                continue
            b = ops.zeros(n, n)
            row_off = 0
            col_off = 0
            for d in range(world.window_lo, world.window_hi + 1):
                st_f = world.stable(x, y, d)
                st_r = world_rev.stable(x, y, d)
                if st_f.dim != st_r.dim:
                    raise GenerationError(
                        f"enumeration orders disagree on stHom({x},{y})_{d}")
                for k, rep in enumerate(st_r.reps):
                    coords = _coords_in(ops, st_f.reps, st_f.free_rows, rep)
                    b[row_off:row_off + st_f.dim, col_off + k] = coords
                row_off += st_f.dim
                col_off += st_r.dim
            out[f"{x}->{y}"] = [[ops.format_scalar(v) for v in row] for row in b]
    return out


def write_ainf_tower(levels: int, trunc_degree: Optional[int],
                     out_dir: str | Path,
                     field: Optional[FieldSpec] = None) -> Path:
    result = gen_ainf_tower(levels, trunc_degree, field)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, payload in enumerate(result.level_payloads, start=1):
        (out / f"level{n}.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / "tower.json").write_text(
        json.dumps(result.tower_payload, indent=2) + "\n")
    (out / "manifest.json").write_text(
        json.dumps(result.manifest, indent=2) + "\n")
    return out


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    passed: bool
    detail: str
    mismatches: list[str]

    def to_payload(self) -> dict:
        return {"passed": self.passed, "detail": self.detail,
                "mismatches": self.mismatches}


def _parse_base_change(ops: FieldOps, manifest: dict,
                       pair: tuple[str, str]) -> Optional[np.ndarray]:
    raw = manifest.get("base_change", {}).get(f"{pair[0]}->{pair[1]}")
    if raw is None:
        return None
    b = ops.zeros(len(raw), len(raw[0]) if raw else 0)
    for i, row in enumerate(raw):
        for j, s in enumerate(row):
            b[i, j] = ops.parse_scalar(s)
    return b


def _compare_through_base_change(shipped: CategoryDatum, manifest: dict,
                                 rev: CategoryDatum) -> list[str]:
    """Certification core: transport the reversed-run structure constants
    through the recorded base change and demand exact agreement with the
    shipped tables."""
    ops = shipped.ops
    mismatches: list[str] = []
    pts = shipped.point_ids()
    if pts != rev.point_ids():
        return [f"point lists differ: {pts} vs {rev.point_ids()}"]
    bmats: dict[tuple[str, str], np.ndarray] = {}
    for x in pts:
        for y in pts:
            ds, dr = shipped.dim(x, y), rev.dim(x, y)
            if ds != dr:
                mismatches.append(f"dim stHom({x},{y}) differs: {ds} vs {dr}")
                continue
            if ds == 0:
                continue
            b = _parse_base_change(ops, manifest, (x, y))
            if b is None or b.shape != (ds, ds):
                mismatches.append(f"missing or misshapen base change for ({x},{y})")
                continue
            if rank_of(ops, b) != ds:
                mismatches.append(f"base change for ({x},{y}) is singular")
                continue
            bmats[(x, y)] = b
    if mismatches:
        return mismatches

    for x in pts:
        bm = bmats.get((x, x))
        if bm is None:
            continue
        lhs = ops.matmul(bm, rev.identities[x].reshape(-1, 1)).reshape(-1)
        if not ops.equal(lhs, shipped.identities[x]):
            mismatches.append(f"identity of {x} differs after base change")
        # radical spans must agree
        ship_rs = shipped.radical_space(x)
        rev_rows = rev.radicals[x]
        moved = ops.matmul(bm, rev_rows.T).T if rev_rows.shape[0] else rev_rows
        rev_rs = RowSpace(ops, shipped.dim(x, x))
        rev_rs.add_many(moved)
        same = ship_rs.dim == rev_rs.dim and all(
            rev_rs.contains(r) for r in ship_rs.matrix())
        if not same:
            mismatches.append(f"radical span of {x} differs after base change")

    for x in pts:
        for y in pts:
            if shipped.dim(x, y) == 0:
                continue
            for z in pts:
                if shipped.dim(y, z) == 0:
                    continue
                c_rev = rev.tensor(x, y, z)
                c_fwd = shipped.tensor(x, y, z)
                b_yz, b_xy, b_xz = bmats.get((y, z)), bmats.get((x, y)), bmats.get((x, z))
                if b_yz is None or b_xy is None:
                    continue
                if ops.prime:
                    lhs = (np.einsum("abO,oO->abo", c_rev, b_xz)
                           if b_xz is not None else c_rev) % ops.p
                    rhs = np.einsum("Aa,Bb,ABo->abo", b_yz, b_xy, c_fwd) % ops.p
                    if not np.array_equal(lhs, rhs):
                        a, b_, o = map(int, np.argwhere(lhs != rhs)[0])
                        gname = shipped.basis_names(y, z)[a]
                        fname = shipped.basis_names(x, y)[b_]
                        oname = shipped.basis_names(x, z)[o]
                        mismatches.append(
                            f"compose({gname},{fname}) diverges at {oname}")
                        return mismatches
                else:
                    for a in range(shipped.dim(y, z)):
                        for b_ in range(shipped.dim(x, y)):
                            lhs = c_rev[a, b_]
                            if b_xz is not None:
                                lhs = ops.matmul(b_xz, lhs.reshape(-1, 1)).reshape(-1)
                            rhs = ops.zeros(shipped.dim(x, z))
                            for a2 in range(shipped.dim(y, z)):
                                for b2 in range(shipped.dim(x, y)):
                                    coeff = ops.mul(b_yz[a2, a], b_xy[b2, b_])
                                    rhs = ops.add(rhs, ops.mul(c_fwd[a2, b2], coeff))
                            if not ops.equal(lhs, rhs):
                                gname = shipped.basis_names(y, z)[a]
                                fname = shipped.basis_names(x, y)[b_]
                                mismatches.append(
                                    f"compose({gname},{fname}) diverges")
                                return mismatches
    return mismatches


def verify_pack(path: str | Path, recompute: bool = True) -> VerifyReport:
    """Certify a shipped pack against an independent re-derivation.

    The oracle is re-run with the reversed basis enumeration order and the
    resulting structure constants are transported through the base change
    recorded in the manifest; any single divergent constant fails the pack.
    With recompute=False only content hashes are checked."""
    path = Path(path)
    if path.is_dir():
        return _verify_tower_dir(path, recompute)
    manifest_path = path.with_name(path.stem + ".manifest.json")
    if not manifest_path.exists():
        raise InputError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    shipped = load_datum(path)
    recorded = manifest.get("oracle_hashes", {}).get("datum_sha256")
    actual = _canonical_hash(datum_to_payload(shipped))
    mismatches = []
    if recorded != actual:
        mismatches.append("datum hash differs from the manifest record")
    if recompute and manifest.get("oracle", {}).get("family") == "an":
        spec = ArtinianRingSpec(int(manifest["oracle"]["n"]),
                                FieldSpec.from_payload(manifest["oracle"]["field"]))
        rev_datum, _ = gen_an_pack(spec, reverse=True)
        mismatches.extend(_compare_through_base_change(shipped, manifest, rev_datum))
    passed = not mismatches
    return VerifyReport(passed, "ok" if passed else "certification failure",
                        mismatches)


def _verify_tower_dir(path: Path, recompute: bool) -> VerifyReport:
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    oracle = manifest.get("oracle", {})
    levels = int(oracle["levels"])
    mismatches: list[str] = []
    level_payloads = []
    for n in range(1, levels + 1):
        lp = json.loads((path / f"level{n}.json").read_text())
        level_payloads.append(lp)
        recorded = manifest["oracle_hashes"]["level_sha256"].get(str(n))
        if _canonical_hash(lp) != recorded:
            mismatches.append(f"level {n} hash differs from the manifest record")
    if recompute:
        field = FieldSpec.from_payload(oracle["field"])
        T = int(oracle["trunc_degree"])
        world_rev = GradedWorld(field, levels, T, reverse=True)
        top_rev = _world_datum(world_rev, world_rev.point_names())
        top_shipped = datum_from_payload(level_payloads[-1])
        mismatches.extend(
            _compare_through_base_change(top_shipped, manifest, top_rev))
        # every lower level must be the exact restriction of the top level
        for n in range(1, levels):
            sub = datum_from_payload(level_payloads[n - 1])
            for (pair, names) in sub.hom_basis.items():
                if top_shipped.basis_names(*pair) != names:
                    mismatches.append(
                        f"level {n}: hom basis of {pair} is not the top-level one")
            for key, terms in sub.sparse_compose.items():
                if top_shipped.sparse_compose.get(key) != terms:
                    mismatches.append(
                        f"level {n}: compose entry {key} differs from the top level")
                    break
        # recomputed dimension table must match the recorded evidence
        world_chk = GradedWorld(field, levels, T)
        if world_chk.dimension_table() != manifest["stabilization"]["dimension_table"]:
            mismatches.append("recomputed dimension table differs from the manifest")
    passed = not mismatches
    return VerifyReport(passed, "ok" if passed else "certification failure",
                        mismatches)
