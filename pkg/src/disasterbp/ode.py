"""Dormand-Prince 5(4) flow engine and p-jump path kernels.

The kernels are built per drift by :func:`get_kernels`. When numba can compile
the drift (and the optional functional ``f``) every kernel is compiled with
``nogil=True`` so chunks of replicas can run on threads; otherwise the same
source runs as plain Python.

Status codes returned by the kernels: 0 ok, 1 step-size underflow,
2 domain escape, 3 NaN encountered.
"""

from __future__ import annotations

import math
import threading
from types import SimpleNamespace

import numpy as np

from ._jit import maybe_jit, njit
from .errors import DomainEscapeError, IntegrationError, NumericalError

RTOL = 1e-9
ATOL = 1e-12
DOMAIN_SLACK = 1e-7
ZERO_STATE = 1e-300

OK, UNDERFLOW, ESCAPE, NAN = 0, 1, 2, 3

KIND_START, KIND_JUMP, KIND_CHECK, KIND_END = 0, 1, 2, 3
KIND_NAMES = ("start", "disaster", "ode-checkpoint", "end")

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)


def raise_for_status(status: int, where: str = "flow") -> None:
    if status == OK:
        return
    if status == UNDERFLOW:
        raise IntegrationError(f"{where}: step size underflow, tolerance cannot be met")
    if status == ESCAPE:
        raise DomainEscapeError(f"{where}: state left its interval by more than {DOMAIN_SLACK}")
    if status == NAN:
        raise NumericalError(f"{where}: drift produced NaN")
    raise NumericalError(f"{where}: unknown status {status}")


def g_size(K: int, with_f: bool) -> int:
    return 2 + 2 * K + (1 if with_f else 0)


def _build(alpha, f, jit: bool):
    dec = njit(nogil=True, cache=False) if jit else (lambda fn: fn)
    has_f = f is not None
    if not has_f:
        def f(x):  # noqa: F811 - placeholder never called
            return 0.0
        if jit:
            f = njit(f)
    alpha0_zero = float(alpha(0.0)) == 0.0

    @dec
    def eval_g(x, K, out):
        a = alpha(x)
        out[0] = 1.0
        out[1] = a / x if x > 0.0 else 0.0
        xp = 1.0
        for j in range(K):
            out[2 + K + j] = xp * a
            xp *= x
            out[2 + j] = xp
        if has_f:
            out[2 + 2 * K] = f(x)

    @dec
    def flow(x, T, h, hmax, upper, acc, K):
        """Integrate dx/dt = alpha(x) over duration T. Returns (x, h, status)."""
        use_acc = acc.shape[0] > 0
        if T <= 0.0:
            return x, h, 0
        if x <= ZERO_STATE and alpha0_zero:
            if use_acc:
                g = np.empty(acc.shape[0])
                eval_g(0.0, K, g)
                for i in range(acc.shape[0]):
                    acc[i] += T * g[i]
            return 0.0, h, 0
        if h <= 0.0 or h > hmax:
            h = min(0.05, hmax)
        t = 0.0
        ng = acc.shape[0]
        g1 = np.empty(ng)
        g2 = np.empty(ng)
        g3 = np.empty(ng)
        g4 = np.empty(ng)
        g5 = np.empty(ng)
        g6 = np.empty(ng)
        k1 = alpha(x)
        while t < T:
            hs = min(h, T - t)
            last = hs >= T - t
            if hs < 1e-15 * max(1.0, T):
                return x, h, 1
            y2 = x + hs * A21 * k1
            k2 = alpha(y2)
            y3 = x + hs * (A31 * k1 + A32 * k2)
            k3 = alpha(y3)
            y4 = x + hs * (A41 * k1 + A42 * k2 + A43 * k3)
            k4 = alpha(y4)
            y5 = x + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)
            k5 = alpha(y5)
            y6 = x + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5)
            k6 = alpha(y6)
            xn = x + hs * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
            k7 = alpha(xn)
            if xn != xn or k7 != k7:
                return x, h, 3
            err_abs = abs(hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7))
            sc = ATOL + RTOL * max(abs(x), abs(xn))
            err = err_abs / sc
            if err <= 1.0:
                if use_acc:
                    eval_g(x, K, g1)
                    eval_g(y3, K, g3)
                    eval_g(y4, K, g4)
                    eval_g(y5, K, g5)
                    eval_g(y6, K, g6)
                    for i in range(ng):
                        acc[i] += hs * (B1 * g1[i] + B3 * g3[i] + B4 * g4[i]
                                        + B5 * g5[i] + B6 * g6[i])
                if xn < 0.0:
                    if xn < -DOMAIN_SLACK:
                        return xn, h, 2
                    xn = 0.0
                if xn > upper:
                    if xn > upper + DOMAIN_SLACK:
                        return xn, h, 2
                    xn = upper
                t = T if last else t + hs
                x = xn
                k1 = k7
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                if last and hs < h:
                    # a step cut short by the segment end says little about h
                    h = min(hmax, max(h, hs * fac))
                else:
                    h = min(hmax, hs * fac)
                if x <= ZERO_STATE and alpha0_zero:
                    x = 0.0
                    if use_acc and t < T:
                        eval_g(0.0, K, g2)
                        for i in range(ng):
                            acc[i] += (T - t) * g2[i]
                    return x, h, 0
            else:
                h = hs * max(0.2, 0.9 * err ** -0.2)
        return x, h, 0

    @dec
    def grow(buf, n):
        if n < buf.shape[0]:
            return buf
        nb = np.empty(2 * buf.shape[0], dtype=buf.dtype)
        nb[:n] = buf[:n]
        return nb

    @dec
    def sim_path(x0, p, kappa, t_end, checks, hmax, upper, rng):
        """One path with jump/checkpoint records."""
        cap = 64
        ts = np.empty(cap)
        vs = np.empty(cap)
        pre = np.empty(cap)
        kinds = np.empty(cap, dtype=np.int8)
        dummy = np.empty(0)
        n = 0
        ts[0] = 0.0
        vs[0] = x0
        pre[0] = x0
        kinds[0] = 0
        n = 1
        t = 0.0
        x = x0
        h = -1.0
        nj = t + rng.standard_exponential() / kappa if kappa > 0.0 else np.inf
        ci = 0
        nc = checks.shape[0]
        while True:
            tn = t_end
            kind = 3
            if ci < nc and checks[ci] < tn:
                tn = checks[ci]
                kind = 2
            if nj < tn:
                tn = nj
                kind = 1
            x, h, st = flow(x, tn - t, h, hmax, upper, dummy, 0)
            if st != 0:
                return ts[:n], vs[:n], pre[:n], kinds[:n], st
            t = tn
            if kind == 3 and t_end <= 0.0:
                break
            ts = grow(ts, n)
            vs = grow(vs, n)
            pre = grow(pre, n)
            kinds = grow(kinds, n)
            ts[n] = t
            pre[n] = x
            if kind == 1:
                x = p * x
                nj = t + rng.standard_exponential() / kappa
            elif kind == 2:
                ci += 1
            vs[n] = x
            kinds[n] = kind
            n += 1
            if kind == 3:
                break
        return ts[:n], vs[:n], pre[:n], kinds[:n], 0

    @dec
    def sample_at_times(x0, p, kappa_sim, times, hmax, upper, n_rep, rng):
        """States and jump counts at sorted ``times`` for ``n_rep`` replicas."""
        m = times.shape[0]
        X = np.empty((n_rep, m))
        N = np.zeros((n_rep, m), dtype=np.int64)
        dummy = np.empty(0)
        for r in range(n_rep):
            t = 0.0
            x = x0
            h = -1.0
            cnt = 0
            nj = rng.standard_exponential() / kappa_sim if kappa_sim > 0.0 else np.inf
            for j in range(m):
                target = times[j]
                while nj <= target:
                    if x == 0.0 and alpha0_zero:
                        # absorbed: only the jump count matters from here on
                        cnt += rng.poisson(kappa_sim * (target - nj)) + 1
                        t = target
                        nj = target + rng.standard_exponential() / kappa_sim
                        break
                    x, h, st = flow(x, nj - t, h, hmax, upper, dummy, 0)
                    if st != 0:
                        return X, N, st
                    t = nj
                    x = p * x
                    cnt += 1
                    nj = t + rng.standard_exponential() / kappa_sim
                x, h, st = flow(x, target - t, h, hmax, upper, dummy, 0)
                if st != 0:
                    return X, N, st
                t = target
                X[r, j] = x
                N[r, j] = cnt
        return X, N, 0

    @dec
    def ergodic(x0, p, kappa, t_burn, t_end, hmax, upper, K, ng, rng):
        """Time integrals of the moment functionals over [t_burn, t_end]."""
        acc = np.zeros(ng)
        dummy = np.empty(0)
        t = 0.0
        x = x0
        h = -1.0
        nj = rng.standard_exponential() / kappa
        while True:
            tn = min(nj, t_end)
            if t < t_burn:
                tb = min(tn, t_burn)
                x, h, st = flow(x, tb - t, h, hmax, upper, dummy, K)
                if st != 0:
                    return acc, x, st
                t = tb
            if t < tn:
                x, h, st = flow(x, tn - t, h, hmax, upper, acc, K)
                if st != 0:
                    return acc, x, st
                t = tn
            if t >= t_end:
                break
            x = p * x
            nj = t + rng.standard_exponential() / kappa
        return acc, x, 0

    return SimpleNamespace(flow=flow, sim_path=sim_path, sample_at_times=sample_at_times,
                           ergodic=ergodic, eval_g=eval_g, jitted=jit, has_f=has_f)


_CACHE: dict = {}
_LOCK = threading.Lock()


def get_kernels(alpha, f=None):
    """Kernels specialised to ``alpha`` (and optional functional ``f``)."""
    key = (id(alpha), id(f))
    with _LOCK:
        hit = _CACHE.get(key)
        if hit is not None and hit[0] is alpha and hit[1] is f:
            return hit[2]
    ja = maybe_jit(alpha)
    jf = maybe_jit(f) if f is not None else None
    jit = ja is not None and (f is None or jf is not None)
    if jit:
        kern = _build(ja, jf, True)
    else:
        kern = _build(alpha, f, False)
    with _LOCK:
        _CACHE[key] = (alpha, f, kern)
    return kern


def integrate(alpha, x0: float, T: float, *, hmax: float = math.inf,
              upper: float = math.inf) -> float:
    """Solve dx/dt = alpha(x) from x0 for duration T."""
    kern = get_kernels(alpha)
    x, _, st = kern.flow(float(x0), float(T), -1.0, float(hmax), float(upper), np.empty(0), 0)
    raise_for_status(st)
    return float(x)
