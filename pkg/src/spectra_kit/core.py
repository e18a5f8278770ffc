"""Exact scalar arithmetic and dense linear algebra over F_p or the rationals.

Every rank / surjectivity / solvability decision in the repository reduces to
the routines here.  Matrices are dense; scalars are canonical representatives
(0 <= e < p for a prime field, fully reduced fractions for the rationals).
All routines are deterministic pure functions on immutable inputs, so they
are safe to call concurrently.

Scalar string encodings are fixed in this module: "0", "1", ..., "p-1" for a
prime field, and "a/b" (reduced, b > 0) for the rationals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np


class SpectraError(Exception):
    """Base class for errors carrying a CLI exit-code contract."""

    exit_code = 1


class InputError(SpectraError):
    """Malformed or inconsistent user input (CLI exit code 2)."""

    exit_code = 2


class InconsistencyError(SpectraError):
    """Two independent computation routes disagreed: a code or data defect."""

    exit_code = 1


class ResourceLimitError(SpectraError):
    """A configured resource budget was exhausted (CLI exit code 3)."""

    exit_code = 3


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin primality test (exact for n < 3.3e24)."""
    if n < 2:
        return False
    for q in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    """An exact coefficient field: a prime field F_p or the rationals."""

    kind: str
    p: Optional[int] = None

    def __post_init__(self):
        if self.kind == "prime":
            if self.p is None or self.p < 2 or not is_prime(self.p):
                raise InputError(f"field modulus must be prime, got {self.p!r}")
        elif self.kind == "rational":
            if self.p is not None:
                raise InputError("rational field carries no modulus")
        else:
            raise InputError(f"unknown field kind {self.kind!r}")

    def ops(self) -> "FieldOps":
        key = (self.kind, self.p)
        cached = _OPS_CACHE.get(key)
        if cached is None:
            cached = FieldOps(self)
            _OPS_CACHE[key] = cached
        return cached

    def to_payload(self) -> dict:
        if self.kind == "prime":
            return {"kind": "prime", "p": self.p}
        return {"kind": "rational"}

    @staticmethod
    def from_payload(obj: dict) -> "FieldSpec":
        if not isinstance(obj, dict):
            raise InputError("field: expected an object")
        unknown = set(obj) - {"kind", "p"}
        if unknown:
            raise InputError(f"field: unknown keys {sorted(unknown)}")
        kind = obj.get("kind")
        if kind == "prime":
            return FieldSpec("prime", int(obj.get("p", 0)))
        if kind == "rational":
            if "p" in obj:
                raise InputError("field: rational kind carries no modulus")
            return FieldSpec("rational")
        raise InputError(f"field: unknown kind {kind!r}")


_OPS_CACHE: dict = {}


class FieldOps:
    """Vectorized exact arithmetic for one field.

    Prime fields use int64 numpy arrays with canonical entries in [0, p).
    p is capped so that a dot product of length ~10^4 cannot overflow int64.
    The rationals use object arrays of Fraction.
    """

    def __init__(self, spec: FieldSpec):
        self.spec = spec
        self.prime = spec.kind == "prime"
        if self.prime:
            if spec.p > 2**26:
                raise InputError("prime modulus too large for the int64 backend")
            self.p = spec.p
            self.dtype = np.int64
            self.zero = 0
            self.one = 1
        else:
            self.p = None
            self.dtype = object
            self.zero = Fraction(0)
            self.one = Fraction(1)

    # -- construction ------------------------------------------------------

    def zeros(self, *shape) -> np.ndarray:
        if self.prime:
            return np.zeros(shape, dtype=np.int64)
        a = np.empty(shape, dtype=object)
        a[...] = Fraction(0)
        return a

    def eye(self, n: int) -> np.ndarray:
        a = self.zeros(n, n)
        for i in range(n):
            a[i, i] = self.one
        return a

    def array(self, nested) -> np.ndarray:
        if self.prime:
            return np.asarray(nested, dtype=np.int64) % self.p
        a = np.array(nested, dtype=object)
        flat = a.reshape(-1)
        for i, v in enumerate(flat):
            flat[i] = Fraction(v)
        return flat.reshape(a.shape)

    def canon(self, a: np.ndarray) -> np.ndarray:
        return a % self.p if self.prime else a

    # -- arithmetic --------------------------------------------------------

    def add(self, a, b):
        return (a + b) % self.p if self.prime else a + b

    def sub(self, a, b):
        return (a - b) % self.p if self.prime else a - b

    def mul(self, a, b):
        return (a * b) % self.p if self.prime else a * b

    def neg(self, a):
        return (-a) % self.p if self.prime else -a

    def inv(self, a):
        if self.prime:
            a = int(a) % self.p
            if a == 0:
                raise ZeroDivisionError("no inverse of 0")
            return pow(a, self.p - 2, self.p)
        if a == 0:
            raise ZeroDivisionError("no inverse of 0")
        return Fraction(1) / a

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape[1] != b.shape[0]:
            raise InputError(f"matmul shape mismatch {a.shape} x {b.shape}")
        if a.shape[0] == 0 or b.shape[1] == 0 or a.shape[1] == 0:
            return self.zeros(a.shape[0], b.shape[1])
        return np.dot(a, b) % self.p if self.prime else np.dot(a, b)

    def is_zero_scalar(self, v) -> bool:
        return (int(v) % self.p == 0) if self.prime else v == 0

    def equal(self, a: np.ndarray, b: np.ndarray) -> bool:
        if a.shape != b.shape:
            return False
        if self.prime:
            return bool(np.array_equal(a % self.p, b % self.p))
        return bool(np.array_equal(a, b))

    # -- scalar strings ----------------------------------------------------

    def parse_scalar(self, s: str):
        if not isinstance(s, str):
            raise InputError(f"scalar must be a string, got {type(s).__name__}")
        try:
            if self.prime:
                v = int(s)
                if not 0 <= v < self.p:
                    raise ValueError
                return v
            f = Fraction(s)
            return f
        except (ValueError, ZeroDivisionError):
            raise InputError(f"bad scalar string {s!r}") from None

    def format_scalar(self, v) -> str:
        if self.prime:
            return str(int(v) % self.p)
        f = Fraction(v)
        return f"{f.numerator}/{f.denominator}"


# ---------------------------------------------------------------------------
# Row reduction, kernels, solving
# ---------------------------------------------------------------------------


def rref(ops: FieldOps, a: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form.  Pivot choice is the first nonzero entry in
    column order, so the result is deterministic."""
    r = a.copy()
    rows, cols = r.shape
    pivots: list[int] = []
    cur = 0
    for c in range(cols):
        if cur >= rows:
            break
        piv = -1
        for i in range(cur, rows):
            if not ops.is_zero_scalar(r[i, c]):
                piv = i
                break
        if piv < 0:
            continue
        if piv != cur:
            r[[cur, piv]] = r[[piv, cur]]
        inv = ops.inv(r[cur, c])
        r[cur] = ops.mul(r[cur], inv)
        for i in range(rows):
            if i != cur and not ops.is_zero_scalar(r[i, c]):
                r[i] = ops.sub(r[i], ops.mul(r[cur], r[i, c]))
        pivots.append(c)
        cur += 1
    return r, pivots


def rank_of(ops: FieldOps, a: np.ndarray) -> int:
    if 0 in a.shape:
        return 0
    return len(rref(ops, a)[1])


def kernel_basis(ops: FieldOps, a: np.ndarray, col_perm=None) -> np.ndarray:
    """Basis of the right kernel {x : a @ x = 0}, one row per basis vector.

    The basis is the standard free-variable parametrization of the RREF; with
    `col_perm` the reduction runs in permuted coordinate order (used by the
    reversed-enumeration pack oracle)."""
    rows, cols = a.shape
    if cols == 0:
        return ops.zeros(0, 0)
    if col_perm is None:
        col_perm = list(range(cols))
    work = a[:, col_perm] if rows else ops.zeros(0, cols)
    r, pivots = rref(ops, work) if rows else (ops.zeros(0, cols), [])
    pivset = set(pivots)
    free = [c for c in range(cols) if c not in pivset]
    out = ops.zeros(len(free), cols)
    for k, fc in enumerate(free):
        out[k, fc] = ops.one
        for i, pc in enumerate(pivots):
            out[k, pc] = ops.neg(r[i, fc])
    inv_perm = np.argsort(np.asarray(col_perm))
    return out[:, inv_perm] if len(free) else ops.zeros(0, cols)


def solve_right_arrays(ops: FieldOps, a: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """Solve a @ x = b.  Returns the particular solution with all free
    variables set to zero (lexicographically first under the column echelon
    parametrization), or None when no solution exists."""
    if a.shape[0] != b.shape[0]:
        raise InputError(f"solve: row mismatch {a.shape[0]} != {b.shape[0]}")
    rows, cols = a.shape
    k = b.shape[1]
    if rows == 0:
        return ops.zeros(cols, k)
    aug = ops.zeros(rows, cols + k)
    aug[:, :cols] = a
    aug[:, cols:] = b
    r, pivots = rref(ops, aug)
    for p in pivots:
        if p >= cols:
            return None
    x = ops.zeros(cols, k)
    for i, p in enumerate(pivots):
        x[p] = r[i, cols:]
    return x


class RowSpace:
    """An incrementally maintained row space in reduced echelon form.

    Used for span growth, membership tests and canonical quotient
    representatives.  Deterministic: pivots depend only on insertion order."""

    def __init__(self, ops: FieldOps, width: int):
        self.ops = ops
        self.width = width
        self.rows: list[np.ndarray] = []
        self.pivots: list[int] = []

    @property
    def dim(self) -> int:
        return len(self.rows)

    def reduce(self, v: np.ndarray) -> np.ndarray:
        ops = self.ops
        v = ops.canon(v.copy())
        for row, p in zip(self.rows, self.pivots):
            if not ops.is_zero_scalar(v[p]):
                v = ops.sub(v, ops.mul(row, v[p]))
        return v

    def add(self, v: np.ndarray) -> bool:
        """Insert a vector; returns True when it enlarged the span."""
        ops = self.ops
        v = self.reduce(v)
        piv = -1
        for c in range(self.width):
            if not ops.is_zero_scalar(v[c]):
                piv = c
                break
        if piv < 0:
            return False
        v = ops.mul(v, ops.inv(v[piv]))
        for i, row in enumerate(self.rows):
            if not ops.is_zero_scalar(row[piv]):
                self.rows[i] = ops.sub(row, ops.mul(v, row[piv]))
        slot = 0
        while slot < len(self.pivots) and self.pivots[slot] < piv:
            slot += 1
        self.rows.insert(slot, v)
        self.pivots.insert(slot, piv)
        return True

    def add_many(self, mat: np.ndarray) -> None:
        for i in range(mat.shape[0]):
            self.add(mat[i])

    def contains(self, v: np.ndarray) -> bool:
        red = self.reduce(v)
        return all(self.ops.is_zero_scalar(red[c]) for c in range(self.width))

    def matrix(self) -> np.ndarray:
        if not self.rows:
            return self.ops.zeros(0, self.width)
        out = self.ops.zeros(len(self.rows), self.width)
        for i, row in enumerate(self.rows):
            out[i] = row
        return out

    def complement_positions(self) -> list[int]:
        pivset = set(self.pivots)
        return [c for c in range(self.width) if c not in pivset]


# ---------------------------------------------------------------------------
# Public matrix API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactMatrix:
    """A dense matrix over an exact field, entries in canonical form."""

    field: FieldSpec
    rows: int
    cols: int
    data: np.ndarray

    @staticmethod
    def from_rows(field: FieldSpec, nested) -> "ExactMatrix":
        ops = field.ops()
        a = ops.array(nested)
        if a.ndim != 2:
            raise InputError("matrix literal must be two-dimensional")
        return ExactMatrix(field, a.shape[0], a.shape[1], a)

    @staticmethod
    def from_array(field: FieldSpec, a: np.ndarray) -> "ExactMatrix":
        a = field.ops().canon(a)
        return ExactMatrix(field, a.shape[0], a.shape[1], a)

    @staticmethod
    def from_strings(field: FieldSpec, nested: list[list[str]]) -> "ExactMatrix":
        ops = field.ops()
        rows = len(nested)
        cols = len(nested[0]) if rows else 0
        a = ops.zeros(rows, cols)
        for i, row in enumerate(nested):
            if len(row) != cols:
                raise InputError("ragged matrix literal")
            for j, s in enumerate(row):
                a[i, j] = ops.parse_scalar(s)
        return ExactMatrix(field, rows, cols, a)

    def to_strings(self) -> list[list[str]]:
        ops = self.field.ops()
        return [[ops.format_scalar(self.data[i, j]) for j in range(self.cols)]
                for i in range(self.rows)]

    def transpose(self) -> "ExactMatrix":
        return ExactMatrix(self.field, self.cols, self.rows, self.data.T.copy())

    def mul(self, other: "ExactMatrix") -> "ExactMatrix":
        a = self.field.ops().matmul(self.data, other.data)
        return ExactMatrix(self.field, a.shape[0], a.shape[1], a)


def rank(m: ExactMatrix) -> int:
    """Rank of the matrix over its field."""
    return rank_of(m.field.ops(), m.data)


def is_surjective(m: ExactMatrix) -> bool:
    """True iff the matrix, read as a linear map into a space of dimension
    `rows`, is onto; a 0-row matrix is onto the zero space."""
    return rank(m) == m.rows


def solve_right(a: ExactMatrix, b: ExactMatrix) -> Optional[ExactMatrix]:
    """Solve a @ x = b exactly; see solve_right_arrays for the tie-break."""
    if a.field != b.field:
        raise InputError("solve: operands over different fields")
    x = solve_right_arrays(a.field.ops(), a.data, b.data)
    if x is None:
        return None
    return ExactMatrix(a.field, x.shape[0], x.shape[1], x)
