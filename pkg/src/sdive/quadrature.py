"""Quadrature engine shared by every integral in the package.

Two rules live here:

* :func:`integrate` / :func:`integrate_batch` -- globally vectorised adaptive
  composite Simpson.  Many independent integrals (one per ``k``) are refined
  side by side so that the integrand is always called on large arrays.
* :func:`gauss_legendre_panels` -- a fixed composite Gauss-Legendre rule used
  where an integral must be a smooth function of a parameter (optimiser
  objectives, finite differences in theta).
"""

from __future__ import annotations

from dataclasses import dataclass
import os

import numpy as np

from .exceptions import InvalidInputError, QuadratureError


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the adaptive engine.

    ``truncation_mass`` is the tail mass excluded on each side when an
    integral over the real line is replaced by one over a finite interval.
    """

    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    truncation_mass: float = 1e-10
    max_subdivisions: int = 2**16

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "truncation_mass"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise InvalidInputError(f"{name} must lie in (0, 1), got {v!r}")
        if int(self.max_subdivisions) < 1:
            raise InvalidInputError("max_subdivisions must be a positive integer")

    @classmethod
    def from_env(cls, **overrides) -> "QuadratureSpec":
        """Default spec, with ``abs_tol`` taken from ``SDIVE_QUAD_TOL`` if set."""
        env = os.environ.get("SDIVE_QUAD_TOL")
        if env and "abs_tol" not in overrides:
            try:
                overrides["abs_tol"] = float(env)
            except ValueError:
                raise InvalidInputError(f"SDIVE_QUAD_TOL is not a number: {env!r}") from None
        return cls(**overrides)


DEFAULT_QUAD = QuadratureSpec()


def _eval(func, x, k):
    vals = np.asarray(func(x, k), dtype=float)
    vals = np.broadcast_to(vals, vals.shape[:-1] + (x.size,)) if vals.ndim else np.full(x.size, float(vals))
    return np.moveaxis(vals, -1, 0)


def _norm(v):
    # max-abs over the value axes; v has shape (N, ...)
    if v.ndim == 1:
        return np.abs(v)
    return np.abs(v.reshape(v.shape[0], -1)).max(axis=1)


def integrate_batch(func, a, b, *, quad: QuadratureSpec = DEFAULT_QUAD, panels=16,
                    edges=None, return_error=False):
    """Integrate ``func`` over ``[a[k], b[k]]`` for every ``k`` at once.

    Parameters
    ----------
    func : callable
        ``func(x, k)`` receives flat arrays of abscissae and integral indices
        of equal length ``N`` and returns values of shape ``(..., N)``.
    a, b : array_like, shape (K,)
        Integration limits.
    quad : QuadratureSpec
        Tolerances.  The local acceptance tolerance of a subinterval is its
        share (by width) of ``max(abs_tol, rel_tol * |I_k|)``.  The
        subinterval budget ``max_subdivisions`` applies to each integral.
    panels : int or array_like of int
        Number of equal initial panels per integral.
    edges : list of arrays, optional
        Extra breakpoints per integral (e.g. kernel centres).

    Returns
    -------
    ndarray of shape ``(K, ...)``, plus the summed error estimates when
    ``return_error`` is set.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("a and b must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("integration limits must be finite")
    K = a.size
    panels = np.broadcast_to(np.maximum(np.asarray(panels, dtype=int), 1), (K,))

    Ls, Rs, ids = [], [], []
    for k in range(K):
        e = np.linspace(a[k], b[k], panels[k] + 1)
        if edges is not None and edges[k] is not None and len(edges[k]):
            extra = np.asarray(edges[k], dtype=float)
            extra = extra[(extra > a[k]) & (extra < b[k])]
            e = np.unique(np.concatenate([e, extra]))
        if b[k] <= a[k]:
            continue
        Ls.append(e[:-1])
        Rs.append(e[1:])
        ids.append(np.full(e.size - 1, k))
    if not Ls:
        probe = _eval(func, np.array([0.5 * (a[0] + b[0])]), np.array([0]))
        out = np.zeros((K,) + probe.shape[1:])
        return (out, np.zeros(K)) if return_error else out

    L = np.concatenate(Ls)
    R = np.concatenate(Rs)
    idx = np.concatenate(ids)
    M = 0.5 * (L + R)
    f3 = _eval(func, np.concatenate([L, M, R]), np.concatenate([idx, idx, idx]))
    n0 = L.size
    fa, fm, fb = f3[:n0], f3[n0:2 * n0], f3[2 * n0:]
    ext = (slice(None),) + (None,) * (fa.ndim - 1)
    S = ((R - L) / 6.0)[ext] * (fa + 4.0 * fm + fb)

    value_shape = fa.shape[1:]
    result = np.zeros((K,) + value_shape)
    errsum = np.zeros(K)
    width = b - a
    created = np.bincount(idx, minlength=K)

    while L.size:
        M = 0.5 * (L + R)
        ql = 0.5 * (L + M)
        qr = 0.5 * (M + R)
        f2 = _eval(func, np.concatenate([ql, qr]), np.concatenate([idx, idx]))
        n = L.size
        fl, fr = f2[:n], f2[n:]
        Sl = ((M - L) / 6.0)[ext] * (fa + 4.0 * fl + fm)
        Sr = ((R - M) / 6.0)[ext] * (fm + 4.0 * fr + fb)
        err = Sl + Sr - S
        errn = _norm(err)

        estimate = result.copy()
        np.add.at(estimate, idx, Sl + Sr)
        scale = _norm(estimate) if estimate.ndim > 1 else np.abs(estimate)
        tol_k = np.maximum(quad.abs_tol, quad.rel_tol * scale)
        tol_i = tol_k[idx] * (R - L) / width[idx]
        tiny = (R - L) <= 1e-13 * np.maximum(1.0, np.abs(M))
        if not np.all(np.isfinite(errn)):
            bad = ~np.isfinite(errn)
            j = np.flatnonzero(bad)[0]
            raise QuadratureError("integrand is not finite on the integration interval",
                                  worst=(L[j], R[j], np.nan, np.inf))
        acc = (errn <= 15.0 * tol_i) | tiny

        if np.any(acc):
            np.add.at(result, idx[acc], (Sl + Sr + err / 15.0)[acc])
            np.add.at(errsum, idx[acc], errn[acc] / 15.0)
        rej = ~acc
        if not np.any(rej):
            break
        created += 2 * np.bincount(idx[rej], minlength=K)
        if np.any(created > quad.max_subdivisions):
            over = np.isin(idx, np.flatnonzero(created > quad.max_subdivisions)) & rej
            j = np.flatnonzero(over)[np.argmax(errn[over])]
            raise QuadratureError(
                f"adaptive Simpson exceeded {quad.max_subdivisions} subintervals; "
                f"worst [{L[j]:.6g}, {R[j]:.6g}] error {errn[j]:.3g}",
                worst=(L[j], R[j], float(_norm((Sl + Sr)[j:j + 1])[0]), float(errn[j])))
        Lr, Mr, Rr, ir = L[rej], M[rej], R[rej], idx[rej]
        L = np.concatenate([Lr, Mr])
        R = np.concatenate([Mr, Rr])
        idx = np.concatenate([ir, ir])
        fa, fm, fb = (np.concatenate([fa[rej], fm[rej]]),
                      np.concatenate([fl[rej], fr[rej]]),
                      np.concatenate([fm[rej], fb[rej]]))
        S = np.concatenate([Sl[rej], Sr[rej]])

    if return_error:
        return result, errsum
    return result


def integrate(func, a, b, *, quad: QuadratureSpec = DEFAULT_QUAD, panels=16, points=None,
              return_error=False):
    """Adaptive Simpson integral of a vectorised ``func(x)`` over ``[a, b]``.

    ``func`` may return shape ``(..., N)`` for vector or matrix valued
    integrands; the result then has shape ``(...)``.
    """
    out = integrate_batch(lambda x, k: func(x), [a], [b], quad=quad, panels=panels,
                          edges=None if points is None else [points], return_error=return_error)
    if return_error:
        val, err = out
        return val[0], float(err[0])
    return out[0]


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def gauss_legendre_panels(lo, hi, width, order=8):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[lo, hi]``.

    Panels are equal and no wider than ``width``.
    """
    if not hi > lo:
        raise InvalidInputError("gauss_legendre_panels needs hi > lo")
    m = max(1, int(np.ceil((hi - lo) / width)))
    t, w = _gl(order)
    edges = np.linspace(lo, hi, m + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def union_interval(*intervals):
    lo = min(i[0] for i in intervals)
    hi = max(i[1] for i in intervals)
    return lo, hi
