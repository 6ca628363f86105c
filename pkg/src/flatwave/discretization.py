"""Computational grid and spectral calculus on the reference layer.

The reference domain is a horizontally periodic box of period ``L`` in each
of the ``d - 1`` horizontal directions, times the vertical interval
``(-b, 0)``.  Horizontal directions are discretized with ``n_h`` uniformly
spaced points (Fourier collocation); the vertical direction with ``n_v``
Chebyshev-Gauss-Lobatto nodes mapped to ``[-b, 0]``, so that the first
vertical node is the free surface ``y = 0`` and the last is the rigid
bottom ``y = -b``.

Array layout convention used throughout the package:

* volume fields carry their spatial axes last, shaped ``(*H, n_v)`` with
  ``H = (n_h,) * (d - 1)``; leading axes (if any) are tensor components;
* surface fields are shaped ``(*H,)`` plus optional leading component axes.

All derivative operators act on those trailing spatial axes, so vector and
matrix fields broadcast without special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Grid",
    "make_grid",
    "chebyshev_lobatto",
    "clenshaw_curtis_weights",
]


def chebyshev_lobatto(n):
    """Gauss-Lobatto nodes on [-1, 1] (descending) and the collocation
    differentiation matrix, with the negative-sum trick on the diagonal."""
    if n < 2:
        raise ValueError("need at least two nodes")
    j = np.arange(n)
    x = np.cos(np.pi * j / (n - 1))
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    return x, D


def clenshaw_curtis_weights(n):
    """Quadrature weights for the Gauss-Lobatto nodes on [-1, 1].

    Exact for polynomials of degree < n.
    """
    m = n - 1
    w = np.zeros(n)
    theta = np.pi * np.arange(1, m) / m
    v = np.ones(m - 1)
    if m % 2 == 0:
        w[0] = w[m] = 1.0 / (m * m - 1.0)
        for k in range(1, m // 2):
            v -= 2.0 * np.cos(2.0 * k * theta) / (4.0 * k * k - 1.0)
        v -= np.cos(m * theta) / (m * m - 1.0)
    else:
        w[0] = w[m] = 1.0 / (m * m)
        for k in range(1, (m - 1) // 2 + 1):
            v -= 2.0 * np.cos(2.0 * k * theta) / (4.0 * k * k - 1.0)
    w[1:m] = 2.0 * v / m
    return w


@dataclass
class Grid:
    """Immutable spectral grid; build through :func:`make_grid`."""

    d: int
    L: float
    n_h: int
    n_v: int
    b: float
    nodes: np.ndarray = field(repr=False)          # vertical nodes, 0 .. -b
    Dv: np.ndarray = field(repr=False)             # mapped Chebyshev D
    vweights: np.ndarray = field(repr=False)       # vertical quadrature weights
    kappa: np.ndarray = field(repr=False)          # physical wavenumbers, fft order

    def __post_init__(self):
        self._Dv_pow = {1: self.Dv}
        for p in (2, 3, 4):
            self._Dv_pow[p] = self._Dv_pow[p - 1] @ self.Dv
        n = self.n_h
        kint = np.fft.fftfreq(n, d=1.0 / n)
        self._kint = kint
        self._kint_r = np.arange(n // 2 + 1, dtype=float)
        self._kcut = (n - 1) // 3
        self._hax_v = tuple(range(-self.d, -1))
        self._hax_s = tuple(range(-(self.d - 1), 0))
        self._dx = self.L / n

    # -- basic geometry -------------------------------------------------

    @property
    def shape_volume(self):
        return (self.n_h,) * (self.d - 1) + (self.n_v,)

    @property
    def shape_surface(self):
        return (self.n_h,) * (self.d - 1)

    @property
    def volume(self):
        return self.L ** (self.d - 1) * self.b

    @property
    def cell_area(self):
        """Horizontal quadrature weight per grid column."""
        return self._dx ** (self.d - 1)

    def zeros_volume(self, components=()):
        return np.zeros(tuple(components) + self.shape_volume)

    def zeros_surface(self, components=()):
        return np.zeros(tuple(components) + self.shape_surface)

    # -- transforms ------------------------------------------------------

    def _haxes(self, surface):
        return self._hax_s if surface else self._hax_v

    def hfft(self, f, surface=False):
        return np.fft.rfftn(f, axes=self._haxes(surface))

    def hifft(self, F, surface=False):
        axes = self._haxes(surface)
        shape = tuple(self.n_h for _ in axes)
        return np.fft.irfftn(F, s=shape, axes=axes)

    def wavenumbers_r(self):
        """Physical wavenumber component arrays on the rfft layout."""
        axes = []
        for i in range(self.d - 1):
            k = self._kint_r if i == self.d - 2 else self._kint
            axes.append(2.0 * np.pi * k / self.L)
        return axes

    def kappa_mag_r(self, surface=False):
        """|kappa| on the rfft layout, broadcast over trailing spatial axes."""
        comps = self.wavenumbers_r()
        mag2 = 0.0
        for i, k in enumerate(comps):
            shape = [1] * (self.d - 1)
            shape[i] = k.size
            mag2 = mag2 + k.reshape(shape) ** 2
        mag = np.sqrt(mag2)
        if not surface:
            mag = mag[..., None]
        return mag

    # -- differentiation -------------------------------------------------

    def hderiv(self, f, direction, order=1, surface=False):
        """Spectral derivative along horizontal ``direction`` (0-based).

        The unpaired Nyquist mode is annihilated at every order so that
        repeated first derivatives compose exactly into higher orders.
        """
        if not 0 <= direction < self.d - 1:
            raise ValueError(f"direction {direction} out of range for d={self.d}")
        if order == 0:
            return np.array(f, copy=True)
        axes = self._haxes(surface)
        ax = axes[direction]
        F = np.fft.fft(f, axis=ax)
        k = 2.0 * np.pi * self._kint / self.L
        mult = (1j * k) ** order
        if self.n_h % 2 == 0:
            mult[self.n_h // 2] = 0.0
        shape = [1] * F.ndim
        shape[ax] = self.n_h
        F *= mult.reshape(shape)
        return np.fft.ifft(F, axis=ax).real

    def vderiv(self, f, order=1):
        """Chebyshev collocation derivative in the vertical direction."""
        if order == 0:
            return np.array(f, copy=True)
        if order not in self._Dv_pow:
            raise ValueError("vertical derivative order limited to 4")
        return np.tensordot(f, self._Dv_pow[order].T, axes=([-1], [0]))

    def deriv(self, f, alpha):
        """Mixed derivative for a full spatial multi-index ``alpha``
        (length d, vertical component last)."""
        out = f
        for direction in range(self.d - 1):
            if alpha[direction]:
                out = self.hderiv(out, direction, alpha[direction])
        if alpha[-1]:
            out = self.vderiv(out, alpha[-1])
        return out

    def horizontal_gradient(self, f, surface=False):
        """Stack of the d-1 horizontal derivatives (leading axis)."""
        return np.stack(
            [self.hderiv(f, i, 1, surface=surface) for i in range(self.d - 1)]
        )

    def gradient(self, f):
        """Full spatial gradient of a volume scalar, shape (d, *vol)."""
        parts = [self.hderiv(f, i) for i in range(self.d - 1)]
        parts.append(self.vderiv(f))
        return np.stack(parts)

    def horizontal_power(self, f, p, surface=False):
        """Apply the Fourier multiplier |kappa|**p (fractional p allowed)."""
        F = self.hfft(f, surface=surface)
        mag = self.kappa_mag_r(surface=surface)
        mult = np.zeros_like(mag)
        nz = mag > 0
        mult[nz] = mag[nz] ** p
        if p == 0:
            mult[~nz] = 1.0
        return self.hifft(F * mult, surface=surface)

    # -- dealiasing -------------------------------------------------------

    def dealias_mask_r(self, surface=False):
        comps = []
        for i in range(self.d - 1):
            k = self._kint if i < self.d - 2 else self._kint_r
            comps.append(np.abs(k) <= self._kcut)
        mask = comps[0]
        if self.d == 3:
            mask = comps[0][:, None] & comps[1][None, :]
        if not surface:
            mask = mask[..., None]
        return mask

    def dealias(self, f, surface=False):
        """Project onto the 2/3-rule band (|k| <= (n_h-1)//3 per direction)."""
        F = self.hfft(f, surface=surface)
        F *= self.dealias_mask_r(surface=surface)
        return self.hifft(F, surface=surface)

    def product(self, a, b, dealias=True, surface=False):
        """Pointwise product, optionally projected back onto the kept band."""
        p = a * b
        return self.dealias(p, surface=surface) if dealias else p

    # -- quadrature and norms ---------------------------------------------

    def integrate_volume(self, f):
        col = np.tensordot(f, self.vweights, axes=([-1], [0]))
        axes = tuple(range(col.ndim - (self.d - 1), col.ndim))
        return col.sum(axis=axes) * self.cell_area

    def integrate_surface(self, f):
        axes = tuple(range(f.ndim - (self.d - 1), f.ndim))
        return f.sum(axis=axes) * self.cell_area

    def l2_volume_sq(self, f):
        """Squared L2 norm over the layer, summed over any component axes,
        computed by horizontal Parseval and vertical quadrature."""
        F = self.hfft(f)
        dens = np.abs(F) ** 2 * self._rfft_dup_weights()[..., None]
        col = np.tensordot(dens, self.vweights, axes=([-1], [0]))
        n_cols = self.n_h ** (self.d - 1)
        return float(np.sum(col)) * self.L ** (self.d - 1) / n_cols**2

    def l2_surface_sq(self, f):
        return float(np.sum(self.integrate_surface(f * f)))

    def sobolev_volume_sq(self, f, k):
        """Squared H^k norm: sum of squared L2 norms of all derivatives of
        total order <= k (mixed horizontal/vertical)."""
        if k < 0 or k > 4:
            raise ValueError("volume Sobolev order limited to 0 <= k <= 4")
        total = 0.0
        for alpha in _multi_indices(self.d, k):
            total += self.l2_volume_sq(self.deriv(f, alpha))
        return total

    def sobolev_surface_sq(self, f, s):
        """Squared H^s norm on the surface via the Bessel multiplier
        (1 + |kappa|^2)^s on the discrete torus."""
        if abs(s) > 8:
            raise ValueError("surface Sobolev order limited to |s| <= 8")
        F = self.hfft(f, surface=True)
        mag2 = self.kappa_mag_r(surface=True) ** 2
        mult = (1.0 + mag2) ** s
        # rfft stores only half the modes; weight the doubled columns.
        dup = self._rfft_dup_weights()
        dens = (np.abs(F) ** 2) * mult * dup
        n_cols = self.n_h ** (self.d - 1)
        total = dens.sum(axis=tuple(range(dens.ndim - (self.d - 1), dens.ndim)))
        return float(np.sum(total)) * self.L ** (self.d - 1) / n_cols**2

    def _rfft_dup_weights(self):
        w_last = np.full(self.n_h // 2 + 1, 2.0)
        w_last[0] = 1.0
        if self.n_h % 2 == 0:
            w_last[-1] = 1.0
        if self.d == 2:
            return w_last
        return np.ones((self.n_h, 1)) * w_last[None, :]

    def anisotropic_norm(self, f, k, ell):
        """Sum over horizontal multi-indices |alpha| <= ell of the H^k norm
        of the corresponding horizontal derivative (norms, not squares)."""
        if ell < 0 or ell > 4:
            raise ValueError("horizontal order limited to 0 <= ell <= 4")
        total = 0.0
        for alpha_h in _multi_indices(self.d - 1, ell):
            g = f
            for direction, o in enumerate(alpha_h):
                if o:
                    g = self.hderiv(g, direction, o)
            total += math.sqrt(self.sobolev_volume_sq(g, k))
        return total

    # -- mode utilities ----------------------------------------------------

    def iter_modes_r(self):
        """Yield (flat index tuple, kappa vector) over the rfft mode set."""
        comps = self.wavenumbers_r()
        if self.d == 2:
            for i, k in enumerate(comps[0]):
                yield (i,), np.array([k])
        else:
            for i, k1 in enumerate(comps[0]):
                for j, k2 in enumerate(comps[1]):
                    yield (i, j), np.array([k1, k2])

    @property
    def n_modes_r(self):
        return (self.n_h // 2 + 1) * (self.n_h if self.d == 3 else 1)

    def dilate_modes(self, f, lam, surface=False):
        """Relabel mode k -> lam*k (realizes f(lam x) on the torus).

        Requires every occupied mode to stay below the Nyquist limit.
        """
        if lam < 1 or int(lam) != lam:
            raise ValueError("dilation factor must be a positive integer")
        lam = int(lam)
        if lam == 1:
            return np.array(f, copy=True)
        axes = self._haxes(surface)
        F = np.fft.fftn(f, axes=axes)
        n = self.n_h
        half = n // 2
        for ax in axes:
            mapped = np.zeros_like(F)
            for k in range(n):
                ks = _signed(k, n)
                kt = ks * lam
                if abs(kt) > half - 1 and kt != 0:
                    coef = np.take(F, k, axis=ax)
                    if np.max(np.abs(coef)) > 1e-13 * (1.0 + np.max(np.abs(F))):
                        raise ValueError("dilation pushes occupied mode past Nyquist")
                    continue
                mapped_idx = kt % n
                sl_src = [slice(None)] * F.ndim
                sl_dst = [slice(None)] * F.ndim
                sl_src[ax] = k
                sl_dst[ax] = mapped_idx
                mapped[tuple(sl_dst)] += F[tuple(sl_src)]
            F = mapped
        return np.fft.ifftn(F, axes=axes).real

    def random_smooth_field(self, rng, amplitude, kmax=3, surface=False,
                            bottom_zero=False):
        """Random band-limited field with a smooth low-degree vertical
        profile; used by the verification suites."""
        kmax = min(kmax, self._kcut)
        spec_shape = tuple(self.n_h for _ in range(self.d - 1))
        base = np.zeros(spec_shape)
        # fill low modes in physical space by summing a few cosines
        coords = np.meshgrid(
            *[np.arange(self.n_h) * self._dx for _ in range(self.d - 1)],
            indexing="ij",
        )
        for wave_i in range(3):
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal()
            kvec = rng.integers(0, kmax + 1, size=self.d - 1)
            if wave_i == 0:
                kvec[0] = max(kvec[0], 1)
            wave = np.zeros_like(base)
            for i, x in enumerate(coords):
                wave = wave + 2 * np.pi * kvec[i] * x / self.L
            base = base + amp * np.cos(wave + phase)
        mx = np.max(np.abs(base))
        if mx > 0:
            base = base * (amplitude / mx)
        if surface:
            return base
        yy = self.nodes / self.b  # in [-1, 0]
        coeffs = rng.normal(size=5)
        prof = sum(c * yy**m for m, c in enumerate(coeffs))
        if bottom_zero:
            prof = prof * (1.0 + yy)
        mx = np.max(np.abs(prof))
        if mx > 0:
            prof = prof / mx
        return base[..., None] * prof


def _signed(k, n):
    return k - n if k > n // 2 else k


def _multi_indices(m, kmax):
    """All multi-indices of length m with total order <= kmax."""
    if m == 0:
        yield ()
        return
    for first in range(kmax + 1):
        for rest in _multi_indices(m - 1, kmax - first):
            yield (first,) + rest


def make_grid(d, L, n_h, n_v, b):
    """Validate parameters and build a :class:`Grid`.

    Raises :class:`ConfigurationError` on invalid sizes.
    """
    problems = []
    if d not in (2, 3):
        problems.append(f"d must be 2 or 3, got {d}")
    if not (isinstance(n_h, (int, np.integer)) and n_h >= 8):
        problems.append(f"n_h must be an integer >= 8, got {n_h}")
    elif n_h & (n_h - 1) != 0:
        problems.append(f"n_h must be a power of two, got {n_h}")
    if not (isinstance(n_v, (int, np.integer)) and n_v >= 9):
        problems.append(f"n_v must be an integer >= 9, got {n_v}")
    if not L > 0:
        problems.append(f"L must be positive, got {L}")
    if not b > 0:
        problems.append(f"b must be positive, got {b}")
    if problems:
        raise ConfigurationError("invalid grid parameters", problems)

    x, Dx = chebyshev_lobatto(n_v)
    nodes = (x - 1.0) * (b / 2.0)           # y = 0 at the surface, -b at bottom
    Dv = Dx * (2.0 / b)
    w = clenshaw_curtis_weights(n_v) * (b / 2.0)
    kint = np.fft.fftfreq(n_h, d=1.0 / n_h)
    kappa = 2.0 * np.pi * kint / L
    return Grid(d=int(d), L=float(L), n_h=int(n_h), n_v=int(n_v), b=float(b),
                nodes=nodes, Dv=Dv, vweights=w, kappa=kappa)
