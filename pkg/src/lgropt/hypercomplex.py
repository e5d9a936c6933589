"""Bicomplex and hyper-dual scalar numbers.

Both types carry four double-precision components.  A bicomplex number has
two commuting imaginary units i1, i2 with i1**2 = i2**2 = -1, so its
imaginary channels hold derivative values with O(h**2) truncation error.
A hyper-dual number has two nilpotent units e1, e2 (e1**2 = e2**2 = 0),
which makes its derivative channels exact.

Functions written against the generic helpers at the bottom of this module
(``sin``, ``exp``, ...) can be evaluated with plain floats, ``Bicomplex``
or ``HyperDual`` inputs without modification.  Comparisons and ``abs``
branch on the real part only, so seeding a derivative direction never
changes control flow.
"""

import cmath
import math


class DomainError(ValueError):
    """Raised when a function (or a required derivative) is undefined at the
    real part of the input."""


def _real_guard(value, name):
    if math.isinf(value) or math.isnan(value):
        raise DomainError(f"{name}: derivative undefined (got {value})")
    return value


class Bicomplex:
    """z = re + i1*im1 + i2*im2 + i1*i2*im12, with i1**2 = i2**2 = -1.

    Internally handled as a pair of ordinary complex numbers c1 + i2*c2
    (c1 = re + i1*im1, c2 = im2 + i1*im12).  Elementary functions are
    evaluated through the equivalent componentwise form on
    u = c1 - i*c2, v = c1 + i*c2, which reduces every function to two
    standard complex evaluations.
    """

    __slots__ = ("c1", "c2")

    def __init__(self, re, im1=0.0, im2=0.0, im12=0.0):
        self.c1 = complex(re, im1)
        self.c2 = complex(im2, im12)

    @classmethod
    def from_pair(cls, c1, c2):
        z = cls.__new__(cls)
        z.c1 = c1
        z.c2 = c2
        return z

    @property
    def re(self):
        return self.c1.real

    @property
    def im1(self):
        return self.c1.imag

    @property
    def im2(self):
        return self.c2.real

    @property
    def im12(self):
        return self.c2.imag

    def components(self):
        return (self.c1.real, self.c1.imag, self.c2.real, self.c2.imag)

    def __repr__(self):
        return "Bicomplex(re=%r, im1=%r, im2=%r, im12=%r)" % self.components()

    # -- arithmetic (pair-of-complex formulas) --

    def __add__(self, other):
        if isinstance(other, Bicomplex):
            return Bicomplex.from_pair(self.c1 + other.c1, self.c2 + other.c2)
        if isinstance(other, (int, float)):
            return Bicomplex.from_pair(self.c1 + other, self.c2)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Bicomplex):
            return Bicomplex.from_pair(self.c1 - other.c1, self.c2 - other.c2)
        if isinstance(other, (int, float)):
            return Bicomplex.from_pair(self.c1 - other, self.c2)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return Bicomplex.from_pair(other - self.c1, -self.c2)
        return NotImplemented

    def __neg__(self):
        return Bicomplex.from_pair(-self.c1, -self.c2)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Bicomplex):
            return Bicomplex.from_pair(
                self.c1 * other.c1 - self.c2 * other.c2,
                self.c1 * other.c2 + self.c2 * other.c1,
            )
        if isinstance(other, (int, float)):
            return Bicomplex.from_pair(self.c1 * other, self.c2 * other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return Bicomplex.from_pair(self.c1 / other, self.c2 / other)
        if isinstance(other, Bicomplex):
            if (other.c2 == 0 and other.c1.imag == 0.0
                    and self.c2 == 0 and self.c1.imag == 0.0):
                # keep the real restriction bit-identical to float division
                return Bicomplex(self.c1.real / other.c1.real)
            den = other.c1 * other.c1 + other.c2 * other.c2
            if den == 0:
                raise ZeroDivisionError(
                    "division by a non-invertible bicomplex (zero divisor: "
                    "c1**2 + c2**2 == 0)"
                )
            return Bicomplex.from_pair(
                (self.c1 * other.c1 + self.c2 * other.c2) / den,
                (self.c2 * other.c1 - self.c1 * other.c2) / den,
            )
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return Bicomplex(other).__truediv__(self)
        return NotImplemented

    def __pow__(self, p):
        if isinstance(p, int) or (isinstance(p, float) and p.is_integer()):
            return self._int_pow(int(p))
        if isinstance(p, (int, float)):
            return (self.log() * p).exp()
        if isinstance(p, Bicomplex):
            return (self.log() * p).exp()
        return NotImplemented

    def __rpow__(self, base):
        if isinstance(base, (int, float)):
            if base <= 0.0:
                raise DomainError("bicomplex x**y needs a positive real base")
            return (self * math.log(base)).exp()
        return NotImplemented

    def _int_pow(self, n):
        if n < 0:
            return Bicomplex(1.0) / self._int_pow(-n)
        result = Bicomplex(1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # -- comparisons on the real part only --

    def __lt__(self, other):
        return self.re < _real_of(other)

    def __le__(self, other):
        return self.re <= _real_of(other)

    def __gt__(self, other):
        return self.re > _real_of(other)

    def __ge__(self, other):
        return self.re >= _real_of(other)

    def __eq__(self, other):
        if isinstance(other, Bicomplex):
            return self.c1 == other.c1 and self.c2 == other.c2
        if isinstance(other, (int, float)):
            return self.c1 == other and self.c2 == 0
        return NotImplemented

    def __hash__(self):
        return hash((self.c1, self.c2))

    def __abs__(self):
        return self if self.re >= 0.0 else -self

    def __float__(self):
        raise TypeError("refusing to coerce Bicomplex to float; use .re")

    # -- elementary functions --

    def _apply(self, cfun, rfun, name, domain=None):
        if domain is not None and not domain(self.re):
            raise DomainError(f"{name}: real part {self.re} outside domain")
        if self.c1.imag == 0.0 and self.c2 == 0.0:
            # real restriction must match the plain real function bit-for-bit
            return Bicomplex(rfun(self.re))
        u = cfun(self.c1 - 1j * self.c2)
        v = cfun(self.c1 + 1j * self.c2)
        return Bicomplex.from_pair(0.5 * (u + v), 0.5j * (u - v))

    def exp(self):
        return self._apply(cmath.exp, math.exp, "exp")

    def log(self):
        return self._apply(cmath.log, math.log, "log", domain=lambda x: x > 0.0)

    def sqrt(self):
        return self._apply(cmath.sqrt, math.sqrt, "sqrt", domain=lambda x: x > 0.0)

    def sin(self):
        return self._apply(cmath.sin, math.sin, "sin")

    def cos(self):
        return self._apply(cmath.cos, math.cos, "cos")

    def tan(self):
        return self._apply(cmath.tan, math.tan, "tan")

    def arcsin(self):
        return self._apply(cmath.asin, math.asin, "asin",
                           domain=lambda x: -1.0 < x < 1.0)

    def arccos(self):
        return self._apply(cmath.acos, math.acos, "acos",
                           domain=lambda x: -1.0 < x < 1.0)

    def arctan(self):
        return self._apply(cmath.atan, math.atan, "atan")


class HyperDual:
    """w = re + e1*ep1 + e2*ep2 + e1*e2*ep12, with e1**2 = e2**2 = 0.

    For any twice-differentiable f,
    f(w) = f(re) + f'(re)*(ep1*e1 + ep2*e2 + ep12*e1e2) + f''(re)*ep1*ep2*e1e2
    exactly; no higher-order terms survive the nilpotent algebra.
    """

    __slots__ = ("re", "ep1", "ep2", "ep12")

    def __init__(self, re, ep1=0.0, ep2=0.0, ep12=0.0):
        self.re = re
        self.ep1 = ep1
        self.ep2 = ep2
        self.ep12 = ep12

    def components(self):
        return (self.re, self.ep1, self.ep2, self.ep12)

    def __repr__(self):
        return "HyperDual(re=%r, ep1=%r, ep2=%r, ep12=%r)" % self.components()

    def __add__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.re + other.re, self.ep1 + other.ep1,
                             self.ep2 + other.ep2, self.ep12 + other.ep12)
        if isinstance(other, (int, float)):
            return HyperDual(self.re + other, self.ep1, self.ep2, self.ep12)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.re - other.re, self.ep1 - other.ep1,
                             self.ep2 - other.ep2, self.ep12 - other.ep12)
        if isinstance(other, (int, float)):
            return HyperDual(self.re - other, self.ep1, self.ep2, self.ep12)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return HyperDual(other - self.re, -self.ep1, -self.ep2, -self.ep12)
        return NotImplemented

    def __neg__(self):
        return HyperDual(-self.re, -self.ep1, -self.ep2, -self.ep12)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(
                self.re * other.re,
                self.re * other.ep1 + self.ep1 * other.re,
                self.re * other.ep2 + self.ep2 * other.re,
                self.re * other.ep12 + self.ep1 * other.ep2
                + self.ep2 * other.ep1 + self.ep12 * other.re,
            )
        if isinstance(other, (int, float)):
            return HyperDual(self.re * other, self.ep1 * other,
                             self.ep2 * other, self.ep12 * other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return HyperDual(self.re / other, self.ep1 / other,
                             self.ep2 / other, self.ep12 / other)
        if isinstance(other, HyperDual):
            br = other.re
            if br == 0.0:
                raise ZeroDivisionError(
                    "hyper-dual division by zero real part (nilpotent part "
                    "cannot rescue a singular leading term)"
                )
            # quotient rule written so the real channel is a plain division
            q = self.re / br
            q1 = (self.ep1 - q * other.ep1) / br
            q2 = (self.ep2 - q * other.ep2) / br
            q12 = (self.ep12 - q * other.ep12 - q1 * other.ep2
                   - q2 * other.ep1) / br
            return HyperDual(q, q1, q2, q12)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return HyperDual(other).__truediv__(self)
        return NotImplemented

    def _reciprocal(self):
        if self.re == 0.0:
            raise ZeroDivisionError(
                "hyper-dual division by zero real part (nilpotent part "
                "cannot rescue a singular leading term)"
            )
        inv = 1.0 / self.re
        inv2 = inv * inv
        return HyperDual(inv, -self.ep1 * inv2, -self.ep2 * inv2,
                         -self.ep12 * inv2 + 2.0 * self.ep1 * self.ep2 * inv2 * inv)

    def __pow__(self, p):
        if isinstance(p, int) or (isinstance(p, float) and p.is_integer()):
            n = int(p)
            if n == 0:
                return HyperDual(1.0)
            if n < 0:
                return self._reciprocal() ** (-n)
            result = self
            for _ in range(n - 1):
                result = result * self
            return result
        if isinstance(p, (int, float)):
            if self.re <= 0.0:
                raise DomainError("hyper-dual x**p with non-integer p needs re > 0")
            fp = p * math.pow(self.re, p - 1.0)
            fpp = p * (p - 1.0) * math.pow(self.re, p - 2.0)
            return self._chain(math.pow(self.re, p), fp, fpp)
        if isinstance(p, HyperDual):
            return (self.log() * p).exp()
        return NotImplemented

    def __rpow__(self, base):
        if isinstance(base, (int, float)):
            if base <= 0.0:
                raise DomainError("hyper-dual base**w needs a positive real base")
            return (self * math.log(base)).exp()
        return NotImplemented

    def __lt__(self, other):
        return self.re < _real_of(other)

    def __le__(self, other):
        return self.re <= _real_of(other)

    def __gt__(self, other):
        return self.re > _real_of(other)

    def __ge__(self, other):
        return self.re >= _real_of(other)

    def __eq__(self, other):
        if isinstance(other, HyperDual):
            return self.components() == other.components()
        if isinstance(other, (int, float)):
            return self.components() == (other, 0.0, 0.0, 0.0)
        return NotImplemented

    def __hash__(self):
        return hash(self.components())

    def __abs__(self):
        # derivative at re == 0 is defined as +1 (fixed convention)
        return self if self.re >= 0.0 else -self

    def __float__(self):
        raise TypeError("refusing to coerce HyperDual to float; use .re")

    def _chain(self, f, fp, fpp):
        """Second-order chain rule: exact for hyper-dual arguments."""
        _real_guard(fp, "f'")
        _real_guard(fpp, "f''")
        return HyperDual(f, fp * self.ep1, fp * self.ep2,
                         fp * self.ep12 + fpp * self.ep1 * self.ep2)

    def exp(self):
        e = math.exp(self.re)
        return self._chain(e, e, e)

    def log(self):
        if self.re <= 0.0:
            raise DomainError(f"log: real part {self.re} outside domain")
        inv = 1.0 / self.re
        return self._chain(math.log(self.re), inv, -inv * inv)

    def sqrt(self):
        if self.re <= 0.0:
            raise DomainError(f"sqrt: real part {self.re} outside domain "
                              "(derivative unbounded at 0)")
        r = math.sqrt(self.re)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.re))

    def sin(self):
        s, c = math.sin(self.re), math.cos(self.re)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = math.sin(self.re), math.cos(self.re)
        return self._chain(c, -s, -c)

    def tan(self):
        t = math.tan(self.re)
        sec2 = 1.0 + t * t
        return self._chain(t, sec2, 2.0 * t * sec2)

    def arcsin(self):
        if not -1.0 < self.re < 1.0:
            raise DomainError(f"asin: real part {self.re} outside (-1, 1)")
        d = 1.0 - self.re * self.re
        fp = 1.0 / math.sqrt(d)
        return self._chain(math.asin(self.re), fp, self.re * fp / d)

    def arccos(self):
        if not -1.0 < self.re < 1.0:
            raise DomainError(f"acos: real part {self.re} outside (-1, 1)")
        d = 1.0 - self.re * self.re
        fp = -1.0 / math.sqrt(d)
        return self._chain(math.acos(self.re), fp, self.re * fp / d)

    def arctan(self):
        d = 1.0 + self.re * self.re
        return self._chain(math.atan(self.re), 1.0 / d,
                           -2.0 * self.re / (d * d))


_HYPER = (Bicomplex, HyperDual)


def _real_of(x):
    return x.re if isinstance(x, _HYPER) else x


def real_part(x):
    """Real component of a float, Bicomplex, or HyperDual."""
    return x.re if isinstance(x, _HYPER) else float(x)


# ---------------------------------------------------------------------------
# Generic elementary functions.  Problem callbacks written with these helpers
# evaluate identically for float, Bicomplex, and HyperDual inputs (numpy
# ufuncs also dispatch to the same-named methods on object arrays).
# ---------------------------------------------------------------------------

def _generic(name, rfun):
    def fun(x):
        if isinstance(x, _HYPER):
            return getattr(x, name)()
        return rfun(x)
    fun.__name__ = name
    return fun


exp = _generic("exp", math.exp)
log = _generic("log", math.log)
sqrt = _generic("sqrt", math.sqrt)
sin = _generic("sin", math.sin)
cos = _generic("cos", math.cos)
tan = _generic("tan", math.tan)
arcsin = _generic("arcsin", math.asin)
arccos = _generic("arccos", math.acos)
arctan = _generic("arctan", math.atan)


def arctan2(y, x):
    """Two-argument arctangent; branches on real parts only."""
    if not isinstance(y, _HYPER) and not isinstance(x, _HYPER):
        return math.atan2(y, x)
    xr, yr = real_part(x), real_part(y)
    if xr > 0.0:
        return arctan(y / x)
    if xr < 0.0:
        shift = math.pi if yr >= 0.0 else -math.pi
        return arctan(y / x) + shift
    if yr == 0.0:
        raise DomainError("atan2(0, 0) undefined")
    shift = 0.5 * math.pi if yr > 0.0 else -0.5 * math.pi
    return shift - arctan(x / y)
