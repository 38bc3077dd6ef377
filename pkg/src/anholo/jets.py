"""Truncated multivariate Taylor arithmetic.

A `Jet` stores the Taylor coefficients f_alpha = (d^alpha f) / alpha! of a
smooth function at a point, densely, for every multi-index with
|alpha| <= order. Arithmetic on jets is exact through the stored order (up
to float roundoff), which is what lets derived quantities several
derivative-layers deep (metric -> connection -> curvature) come out with
machine-accurate partials and no symbolic work.

The central calling convention used across the package: a "jet field" is a
callable `(point, order) -> Jet` (or an object array of Jets) whose result
is exact to the requested order. A consumer that needs k derivatives of an
upstream field asks for `order + k` and differentiates down. `Jet.deriv`
refuses to differentiate an order-0 jet, so an underestimated depth fails
loudly instead of silently returning truncated garbage.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

__all__ = [
    "Jet",
    "JetDomainError",
    "ScalarField",
    "jet_space",
    "var_jets",
    "jet_eval",
    "fd_oracle",
    "jet_matrix_inverse",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
]

MAX_DIM = 16


class JetDomainError(ValueError):
    """A function left its domain during jet evaluation (log of a
    nonpositive value, division by zero, |.| at zero, ...)."""


def _monomials(dim: int, order: int) -> list[tuple[int, ...]]:
    # graded-lex: all degree-d monomials precede degree d+1, so truncation
    # to a lower order is a prefix slice
    out: list[tuple[int, ...]] = []

    def gen(deg):
        def rec(prefix, remaining, slots):
            if slots == 1:
                out.append(prefix + (remaining,))
                return
            for k in range(remaining, -1, -1):
                rec(prefix + (k,), remaining - k, slots - 1)

        rec((), deg, dim)

    for d in range(order + 1):
        gen(d)
    return out


class JetSpace:
    """Shared per-(dim, order) tables: monomial list, index map,
    multiplication triples, per-variable derivative maps."""

    __slots__ = (
        "dim",
        "order",
        "monomials",
        "index",
        "size",
        "grades",
        "_mul",
        "_deriv",
        "_trunc_sizes",
    )

    def __init__(self, dim: int, order: int):
        if dim < 1 or dim > MAX_DIM:
            raise ValueError(f"jet dimension {dim} outside 1..{MAX_DIM}")
        if order < 0:
            raise ValueError(f"negative jet order {order}")
        self.dim = dim
        self.order = order
        self.monomials = _monomials(dim, order)
        self.index = {mono: k for k, mono in enumerate(self.monomials)}
        self.size = len(self.monomials)
        self.grades = np.array([sum(m) for m in self.monomials], dtype=np.int64)
        self._trunc_sizes = [
            int(np.searchsorted(self.grades, d, side="right")) for d in range(order + 1)
        ]
        self._mul = None
        self._deriv: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def trunc_size(self, order: int) -> int:
        return self._trunc_sizes[order]

    def mul_table(self):
        if self._mul is None:
            I, J, K = [], [], []
            for i, mi in enumerate(self.monomials):
                di = sum(mi)
                for j, mj in enumerate(self.monomials):
                    if di + sum(mj) > self.order:
                        continue
                    I.append(i)
                    J.append(j)
                    K.append(self.index[tuple(a + b for a, b in zip(mi, mj))])
            self._mul = (
                np.array(I, dtype=np.int64),
                np.array(J, dtype=np.int64),
                np.array(K, dtype=np.int64),
            )
        return self._mul

    def deriv_table(self, i: int):
        # maps coefficients into the (dim, order-1) space; with Taylor
        # normalization the factor is alpha_i * ... / ... = alpha_i scaled:
        # d/dx_i (x^alpha / alpha!) -> coefficient c_alpha * alpha_i maps to
        # slot alpha - e_i whose own normalization divides by (alpha - e_i)!,
        # net factor alpha_i
        tab = self._deriv.get(i)
        if tab is None:
            target = jet_space(self.dim, self.order - 1)
            src, dst, fac = [], [], []
            for k, mono in enumerate(self.monomials):
                if mono[i] == 0:
                    continue
                lowered = tuple(
                    (a - 1 if j == i else a) for j, a in enumerate(mono)
                )
                if sum(lowered) > target.order:
                    continue
                src.append(k)
                dst.append(target.index[lowered])
                fac.append(float(mono[i]))
            tab = (
                np.array(src, dtype=np.int64),
                np.array(dst, dtype=np.int64),
                np.array(fac, dtype=float),
            )
            self._deriv[i] = tab
        return tab


@lru_cache(maxsize=None)
def jet_space(dim: int, order: int) -> JetSpace:
    return JetSpace(dim, order)


def _as_float(x) -> float:
    if isinstance(x, Jet):
        raise TypeError("expected a number, got a Jet")
    return float(x)


class Jet:
    __slots__ = ("space", "coeffs")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = coeffs

    # -- construction ----------------------------------------------------

    @staticmethod
    def constant(value: float, dim: int, order: int) -> "Jet":
        sp = jet_space(dim, order)
        c = np.zeros(sp.size)
        c[0] = float(value)
        return Jet(sp, c)

    @staticmethod
    def variable(value: float, i: int, dim: int, order: int) -> "Jet":
        sp = jet_space(dim, order)
        c = np.zeros(sp.size)
        c[0] = float(value)
        if order >= 1:
            c[1 + i] = 1.0  # graded-lex: degree-1 block starts at slot 1
        return Jet(sp, c)

    # -- basic queries ----------------------------------------------------

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def dim(self) -> int:
        return self.space.dim

    def partial(self, alpha) -> float:
        """The actual partial derivative d^alpha f (not the Taylor
        coefficient) at the base point."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim:
            raise ValueError("multi-index length does not match dimension")
        if sum(alpha) > self.order:
            raise ValueError(
                f"partial of total degree {sum(alpha)} not stored at order {self.order}"
            )
        fac = 1.0
        for a in alpha:
            fac *= math.factorial(a)
        return float(self.coeffs[self.space.index[alpha]]) * fac

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            return self
        sp = jet_space(self.dim, order)
        return Jet(sp, self.coeffs[: sp.size].copy())

    def deriv(self, i: int) -> "Jet":
        """Partial derivative in variable i, as a jet one order lower.

        Refuses at order 0: the caller did not evaluate deeply enough to
        know this derivative."""
        if self.order == 0:
            raise JetDomainError(
                "cannot differentiate an order-0 jet; evaluate the upstream "
                "field at a higher order"
            )
        if not 0 <= i < self.dim:
            raise ValueError(f"variable index {i} outside 0..{self.dim - 1}")
        src, dst, fac = self.space.deriv_table(i)
        target = jet_space(self.dim, self.order - 1)
        c = np.zeros(target.size)
        np.add.at(c, dst, self.coeffs[src] * fac)
        return Jet(target, c)

    # -- arithmetic --------------------------------------------------------

    def _align(self, other: "Jet"):
        if self.dim != other.dim:
            raise ValueError("jet dimensions differ")
        k = min(self.order, other.order)
        return self.truncate(k), other.truncate(k)

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return Jet(a.space, a.coeffs + b.coeffs)
        c = self.coeffs.copy()
        c[0] += _as_float(other)
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __sub__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return Jet(a.space, a.coeffs - b.coeffs)
        c = self.coeffs.copy()
        c[0] -= _as_float(other)
        return Jet(self.space, c)

    def __rsub__(self, other):
        c = -self.coeffs
        c[0] += _as_float(other)
        return Jet(self.space, c)

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            I, J, K = a.space.mul_table()
            c = np.bincount(K, weights=a.coeffs[I] * b.coeffs[J], minlength=a.space.size)
            return Jet(a.space, c)
        return Jet(self.space, self.coeffs * _as_float(other))

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        a = self.value
        if a == 0.0:
            raise JetDomainError("division by a jet with zero value part")
        # 1/(a + w) = (1/a) sum_k (-w/a)^k
        coeffs = [(-1.0) ** k / a ** (k + 1) for k in range(self.order + 1)]
        return self._apply_series(coeffs)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return a * b.reciprocal()
        d = _as_float(other)
        if d == 0.0:
            raise ZeroDivisionError("jet divided by zero scalar")
        return Jet(self.space, self.coeffs / d)

    def __rtruediv__(self, other):
        return _as_float(other) * self.reciprocal()

    def __pow__(self, k):
        if isinstance(k, int) or (isinstance(k, float) and k.is_integer()):
            k = int(k)
            if k == 0:
                return Jet.constant(1.0, self.dim, self.order)
            base = self if k > 0 else self.reciprocal()
            e = abs(k)
            result = None
            acc = base
            while e:
                if e & 1:
                    result = acc if result is None else result * acc
                e >>= 1
                if e:
                    acc = acc * acc
            return result
        # real exponent: binomial series around the value part
        a = self.value
        if a <= 0.0:
            raise JetDomainError(
                f"non-integer power of a jet with nonpositive value {a}"
            )
        r = float(k)
        coeffs = []
        binom = 1.0
        for j in range(self.order + 1):
            coeffs.append(binom * a ** (r - j))
            binom *= (r - j) / (j + 1)
        return self._apply_series(coeffs)

    # -- composition with univariate functions ----------------------------

    def _apply_series(self, coeffs: list[float]) -> "Jet":
        """Horner evaluation of sum_k coeffs[k] * (self - value)^k.

        coeffs[k] must be f^(k)(value)/k! of the univariate function being
        composed; the result is then the exact truncated composition."""
        w = Jet(self.space, self.coeffs.copy())
        w.coeffs[0] = 0.0
        acc = Jet.constant(coeffs[-1], self.dim, self.order)
        for k in range(len(coeffs) - 2, -1, -1):
            acc = acc * w + coeffs[k]
        return acc

    def exp(self) -> "Jet":
        e = math.exp(self.value)
        coeffs = [e / math.factorial(k) for k in range(self.order + 1)]
        return self._apply_series(coeffs)

    def log(self) -> "Jet":
        a = self.value
        if a <= 0.0:
            raise JetDomainError(f"log of a jet with nonpositive value {a}")
        coeffs = [math.log(a)]
        for k in range(1, self.order + 1):
            coeffs.append((-1.0) ** (k + 1) / (k * a**k))
        return self._apply_series(coeffs)

    def sqrt(self) -> "Jet":
        a = self.value
        if a <= 0.0:
            raise JetDomainError(f"sqrt of a jet with nonpositive value {a}")
        return self.__pow__(0.5)

    def sin(self) -> "Jet":
        a = self.value
        cycle = [math.sin(a), math.cos(a), -math.sin(a), -math.cos(a)]
        coeffs = [cycle[k % 4] / math.factorial(k) for k in range(self.order + 1)]
        return self._apply_series(coeffs)

    def cos(self) -> "Jet":
        a = self.value
        cycle = [math.cos(a), -math.sin(a), -math.cos(a), math.sin(a)]
        coeffs = [cycle[k % 4] / math.factorial(k) for k in range(self.order + 1)]
        return self._apply_series(coeffs)

    def __abs__(self) -> "Jet":
        a = self.value
        if a == 0.0:
            raise JetDomainError("abs of a jet with zero value part")
        return self if a > 0 else -self

    def __repr__(self):
        return f"Jet(dim={self.dim}, order={self.order}, value={self.value!r})"


# -- module-level helpers ---------------------------------------------------


def sin(x):
    return x.sin() if isinstance(x, Jet) else math.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Jet) else math.cos(x)


def exp(x):
    return x.exp() if isinstance(x, Jet) else math.exp(x)


def log(x):
    if isinstance(x, Jet):
        return x.log()
    if x <= 0.0:
        raise JetDomainError(f"log of nonpositive value {x}")
    return math.log(x)


def sqrt(x):
    if isinstance(x, Jet):
        return x.sqrt()
    if x <= 0.0:
        raise JetDomainError(f"sqrt of nonpositive value {x}")
    return math.sqrt(x)


def var_jets(point, order: int, dim: int | None = None) -> np.ndarray:
    """Coordinate jets seeded at `point`: the identity chart as jets."""
    point = tuple(float(p) for p in point)
    if dim is None:
        dim = len(point)
    if dim != len(point):
        raise ValueError("point length does not match dimension")
    out = np.empty(dim, dtype=object)
    for i, p in enumerate(point):
        out[i] = Jet.variable(p, i, dim, order)
    return out


def jet_eval(f, point, order: int) -> Jet:
    """Evaluate a callable of scalars on coordinate jets."""
    args = var_jets(point, order)
    res = f(*args)
    if not isinstance(res, Jet):
        res = Jet.constant(float(res), len(point), order)
    return res


def _extend(jet: Jet, extra: int, order: int) -> Jet:
    """Re-embed a jet into a space with `extra` appended variables (the new
    variables carry no seed)."""
    src = jet.truncate(order)
    sp = jet_space(src.dim + extra, order)
    c = np.zeros(sp.size)
    pad = (0,) * extra
    for k, mono in enumerate(src.space.monomials):
        c[sp.index[mono + pad]] = src.coeffs[k]
    return Jet(sp, c)


def _restrict(jet: Jet, base_dim: int) -> Jet:
    """Project back onto the first base_dim variables (drop every monomial
    that touches the appended ones)."""
    sp = jet_space(base_dim, jet.order)
    c = np.zeros(sp.size)
    for k, mono in enumerate(jet.space.monomials):
        if any(mono[base_dim:]):
            continue
        c[sp.index[mono[:base_dim]]] = jet.coeffs[k]
    return Jet(sp, c)


class ScalarField:
    """A scalar function of `arity` ordered slots that evaluates uniformly
    on floats or on jets.

    `fn` receives the slot values (floats or Jets, all of one kind) and must
    use only arithmetic the Jet type supports. `partial_fn`, when provided
    (the expression compiler supplies one), returns the exact slot-partial
    as another ScalarField; otherwise partials at jet arguments fall back to
    evaluation in a temporarily extended jet space.
    """

    __slots__ = ("arity", "fn", "name", "const_value", "partial_fn", "ast")

    def __init__(self, arity, fn, name=None, const_value=None, partial_fn=None):
        self.arity = int(arity)
        self.fn = fn
        self.name = name
        self.const_value = const_value
        self.partial_fn = partial_fn
        self.ast = None  # set by the expression compiler

    @staticmethod
    def constant(value: float, arity: int, name=None) -> "ScalarField":
        v = float(value)
        return ScalarField(arity, lambda *a: v, name=name, const_value=v)

    @staticmethod
    def coordinate(i: int, arity: int, name=None) -> "ScalarField":
        return ScalarField(arity, lambda *a: a[i], name=name)

    @property
    def is_constant(self) -> bool:
        return self.const_value is not None

    def __call__(self, *args):
        if len(args) == 1 and not isinstance(args[0], (Jet, int, float)):
            args = tuple(args[0])
        if len(args) != self.arity:
            raise ValueError(
                f"field {self.name or ''} expects {self.arity} arguments, got {len(args)}"
            )
        return self.fn(*args)

    def jet(self, point, order: int) -> Jet:
        if self.is_constant:
            return Jet.constant(self.const_value, len(tuple(point)), order)
        res = self(*var_jets(point, order))
        if not isinstance(res, Jet):
            res = Jet.constant(float(res), len(tuple(point)), order)
        return res

    def value(self, point) -> float:
        if self.is_constant:
            return self.const_value
        res = self(*(float(p) for p in point))
        return res.value if isinstance(res, Jet) else float(res)

    def partial(self, slot: int) -> "ScalarField":
        """d(field)/d(slot), itself a ScalarField usable on jets."""
        if not 0 <= slot < self.arity:
            raise ValueError(f"slot {slot} outside 0..{self.arity - 1}")
        if self.is_constant:
            return ScalarField.constant(0.0, self.arity)
        if self.partial_fn is not None:
            return self.partial_fn(slot)
        return ScalarField(
            self.arity,
            _ExtensionPartial(self, slot),
            name=f"d{slot}({self.name})" if self.name else None,
        )


class _ExtensionPartial:
    """Slot-partial of a black-box field at arbitrary jet arguments, via
    evaluation in a jet space extended by one perturbation variable."""

    __slots__ = ("field", "slot")

    def __init__(self, field: ScalarField, slot: int):
        self.field = field
        self.slot = slot

    def __call__(self, *args):
        if not any(isinstance(a, Jet) for a in args):
            h = Jet.variable(float(args[self.slot]), 0, 1, 1)
            lifted = [h if k == self.slot else float(a) for k, a in enumerate(args)]
            res = self.field(*lifted)
            return res.deriv(0).value if isinstance(res, Jet) else 0.0
        dim = order = None
        for a in args:
            if isinstance(a, Jet):
                dim = a.dim
                order = a.order if order is None else min(order, a.order)
        lifted = []
        for k, a in enumerate(args):
            if isinstance(a, Jet):
                j = _extend(a, 1, order)
            else:
                j = Jet.constant(float(a), dim + 1, order)
            if k == self.slot:
                bump = np.zeros(j.space.size)
                bump[1 + dim] = 1.0  # seed the appended variable
                j = Jet(j.space, j.coeffs + bump)
            lifted.append(j)
        res = self.field(*lifted)
        if not isinstance(res, Jet):
            return Jet.constant(0.0, dim, order - 1)
        return _restrict(res.deriv(dim), dim)


def fd_oracle(f, point, multi_index, step: float = 1e-3) -> float:
    """Finite-difference partial for tests: nested central differences with
    one Richardson refinement (leading error O(step^4))."""
    point = [float(p) for p in point]
    mi = [int(a) for a in multi_index]

    def cd(pt, rem, h):
        for i, a in enumerate(rem):
            if a > 0:
                lower = rem.copy()
                lower[i] -= 1
                up = pt.copy()
                up[i] += h
                dn = pt.copy()
                dn[i] -= h
                return (cd(up, lower, h) - cd(dn, lower, h)) / (2 * h)
        return float(f(*pt))

    f1 = cd(point, mi, step)
    f2 = cd(point, mi, step / 2)
    return (4.0 * f2 - f1) / 3.0


def jet_matrix_inverse(M) -> np.ndarray:
    """Invert a small square matrix of jets/floats by Gauss-Jordan with
    partial pivoting on the value parts."""
    M = np.asarray(M, dtype=object)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("matrix must be square")
    A = [[M[i, j] for j in range(n)] for i in range(n)]
    B = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    def val(x):
        return x.value if isinstance(x, Jet) else float(x)

    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(val(A[r][col])))
        if abs(val(A[piv][col])) == 0.0:
            raise JetDomainError("singular matrix in jet inversion")
        if piv != col:
            A[col], A[piv] = A[piv], A[col]
            B[col], B[piv] = B[piv], B[col]
        d = A[col][col]
        inv = (1.0 / d) if not isinstance(d, Jet) else d.reciprocal()
        A[col] = [x * inv for x in A[col]]
        B[col] = [x * inv for x in B[col]]
        for r in range(n):
            if r == col:
                continue
            factor = A[r][col]
            if not isinstance(factor, Jet) and factor == 0.0:
                continue
            A[r] = [x - factor * y for x, y in zip(A[r], A[col])]
            B[r] = [x - factor * y for x, y in zip(B[r], B[col])]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = B[i][j]
    return out
