"""Exact algebra for "Gaussian-Laurent" series.

A series represents

    sum_j c_j * z**e_j * u**k_j * eps1**(n_j/2) * exp(-lam * u),   u = K z**(2*sgn)

where z is the era time variable (x = -k eta during inflation, y = k(eta - eta_r)
during radiation), u is the squared smearing ratio (k r_c / a)^2 and ``lam`` is
1/2 for the couplings themselves and 1 for their bilinears. Products and
z-derivatives stay inside this family, so the source S and every derivative the
dynamics needs are built term by term before any number is plugged in. Keeping
the slow-roll power n_j symbolic lets the leading-order truncation be applied
per monomial.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

_ROUND = 12
_SNAP = 1e-13


def _key(e, k, n):
    return (round(float(e), _ROUND), int(k), int(n))


class GLSeries:
    __slots__ = ("terms", "lam", "sgn")

    def __init__(self, terms=None, lam=0.0, sgn=1):
        self.terms = {}
        self.lam = float(lam)
        self.sgn = int(sgn)
        for key, c in (terms or {}).items():
            if c != 0.0:
                k = _key(*key)
                self.terms[k] = self.terms.get(k, 0.0) + float(c)

    @classmethod
    def monomial(cls, c, e=0.0, k=0, n=0, lam=0.0, sgn=1):
        return cls({(e, k, n): c}, lam=lam, sgn=sgn)

    def _new(self, terms, lam=None):
        return GLSeries(terms, lam=self.lam if lam is None else lam, sgn=self.sgn)

    def __add__(self, other):
        if not isinstance(other, GLSeries):
            return self + GLSeries.monomial(other, lam=self.lam, sgn=self.sgn)
        if self.terms and other.terms and (self.lam != other.lam or self.sgn != other.sgn):
            raise ValueError("cannot add series with different Gaussian factors")
        lam = self.lam if self.terms else other.lam
        out = defaultdict(float, self.terms)
        for key, c in other.terms.items():
            prev = out[key]
            tot = prev + c
            # terms that cancel analytically must cancel exactly, not to round-off
            out[key] = 0.0 if abs(tot) <= _SNAP * max(abs(prev), abs(c)) else tot
        return GLSeries(dict(out), lam=lam, sgn=self.sgn)

    __radd__ = __add__

    def __neg__(self):
        return self._new({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, GLSeries):
            return self._new({k: c * other for k, c in self.terms.items()})
        if self.sgn != other.sgn:
            raise ValueError("cannot multiply series of different eras")
        out = defaultdict(float)
        for (e1, k1, n1), c1 in self.terms.items():
            for (e2, k2, n2), c2 in other.terms.items():
                out[_key(e1 + e2, k1 + k2, n1 + n2)] += c1 * c2
        return GLSeries(dict(out), lam=self.lam + other.lam, sgn=self.sgn)

    __rmul__ = __mul__

    def shift(self, de):
        """Multiply by z**de."""
        return self._new({(e + de, k, n): c for (e, k, n), c in self.terms.items()})

    def deriv(self):
        """d/dz, using du/dz = 2 sgn u / z."""
        out = defaultdict(float)
        s2 = 2.0 * self.sgn
        for (e, k, n), c in self.terms.items():
            # z**e u**k -> (e + 2 sgn k) z**(e-1) u**k ;  exp(-lam u) -> -lam 2 sgn u/z
            f = e + s2 * k
            if f != 0.0:
                out[_key(e - 1.0, k, n)] += c * f
            if self.lam != 0.0:
                out[_key(e - 1.0, k + 1, n)] -= c * self.lam * s2
        return self._new(dict(out))

    def leading_order(self):
        """Keep, for each (z, u) monomial, only its lowest power of eps1."""
        best = {}
        for (e, k, n), c in self.terms.items():
            if c == 0.0:
                continue
            if (e, k) not in best or n < best[(e, k)]:
                best[(e, k)] = n
        return self._new({(e, k, n): c for (e, k, n), c in self.terms.items() if best.get((e, k)) == n})

    def flatten(self, eps1):
        """Numeric arrays (exponent of z, power of u, coefficient) with eps1 folded in."""
        merged = defaultdict(float)
        for (e, k, n), c in self.terms.items():
            merged[(e, k)] += c * eps1 ** (0.5 * n)
        keys = sorted(k for k, v in merged.items() if v != 0.0)
        e = np.array([k[0] for k in keys], dtype=np.float64)
        kk = np.array([k[1] for k in keys], dtype=np.float64)
        c = np.array([merged[k] for k in keys], dtype=np.float64)
        return e, kk, c

    def evaluate(self, z, K, eps1):
        """Reference (slow) evaluation, used by tests and small callers."""
        z = np.asarray(z, dtype=np.float64)
        u = K * z ** (2 * self.sgn)
        e, kk, c = self.flatten(eps1)
        tot = np.zeros_like(z)
        for ej, kj, cj in zip(e, kk, c):
            tot = tot + cj * z**ej * u**kj
        return tot * np.exp(-self.lam * u)

    def __repr__(self):
        return f"GLSeries({len(self.terms)} terms, lam={self.lam}, sgn={self.sgn})"
