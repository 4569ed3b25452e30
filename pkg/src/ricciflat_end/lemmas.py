"""Finite-dimensional inequalities behind the pinch estimate, with samplers.

Each check returns a :class:`LemmaReport` whose ``worst_ratio`` is the
largest attained/allowed ratio; a check passes iff that ratio is <= 1.
Suites draw seeded random feasible samples and evaluate the same batched
kernels as the single-sample checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

HERMITIAN_TOL = 1e-12
PRODUCT_TOL = 1e-9


class InfeasibleSample(ValueError):
    pass


@dataclass(frozen=True)
class LemmaReport:
    name: str
    samples: int
    worst_ratio: float
    n: int | None = None
    seed: int | None = None
    worst_index: int | None = None
    failures: tuple = field(default=())

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("a report needs at least one sample")

    @property
    def passed(self) -> bool:
        return bool(self.worst_ratio <= 1.0)

    def as_dict(self):
        return {
            "name": self.name,
            "n": self.n,
            "seed": self.seed,
            "samples": self.samples,
            "worst_ratio": self.worst_ratio,
            "worst_index": self.worst_index,
            "failures": list(self.failures),
            "pass": self.passed,
        }


def _report(name, ratios, n=None, seed=None):
    ratios = np.atleast_1d(np.asarray(ratios, dtype=float))
    idx = int(np.argmax(ratios))
    bad = tuple(int(i) for i in np.flatnonzero(~(ratios <= 1.0))[:20])
    return LemmaReport(name, ratios.size, float(ratios[idx]), n, seed, idx, bad)


# ---------------------------------------------------------------------------
# sqrt(eps) lemma
# ---------------------------------------------------------------------------

def _extremes(n: int, eps: float):
    """Largest and smallest admissible coordinate for sum <= n(1+eps), prod = 1.

    Fixing a_1 = x, the remaining coordinates have product 1/x and their sum
    is smallest when they are equal (AM-GM), so the extremes solve
    x + (n-1) x^{-1/(n-1)} = n(1+eps).
    """
    S = n * (1.0 + eps)

    def g(logx):
        return math.exp(logx) + (n - 1) * math.exp(-logx / (n - 1)) - S

    hi = optimize.brentq(g, 0.0, math.log(S), xtol=1e-15, rtol=1e-15)
    lo_bracket = -(n - 1) * math.log(S / (n - 1))
    lo = optimize.brentq(g, lo_bracket, 0.0, xtol=1e-15, rtol=1e-15)
    return math.exp(hi), math.exp(lo)


@lru_cache(maxsize=None)
def sqrteps_constant(n: int) -> float:
    """Sharp constant C_n for the two-sided sqrt(eps) bound on 0 < eps < 1.

    The extremal ratio ``max(x_max - 1, 1/x_min - 1) / sqrt(eps)`` increases
    in eps, so the supremum is its limit at eps = 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return 0.0
    x_max, x_min = _extremes(n, 1.0)
    # nudge up so that boundary samples do not fail on the last ulp
    return max(x_max - 1.0, 1.0 / x_min - 1.0) * (1.0 + 1e-12)


def extremal_tuple(n: int, eps: float, which: str = "max") -> np.ndarray:
    """Feasible tuple attaining the largest (or smallest) coordinate."""
    x_max, x_min = _extremes(n, eps)
    x = x_max if which == "max" else x_min
    return np.r_[x, np.full(n - 1, x ** (-1.0 / (n - 1)))]


def project_product(a):
    """Rescale so that the product is exactly one (in log space)."""
    la = np.log(np.asarray(a, dtype=float))
    return np.exp(la - la.mean(axis=-1, keepdims=True))


def _sqrteps_ratio(a, eps, C):
    bound = C * np.sqrt(eps)
    dev = np.maximum(a.max(axis=-1) - 1.0, 1.0 / a.min(axis=-1) - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(dev <= 0.0, 0.0, dev / bound)
    return r


def check_sqrteps(a, eps: float, C: float | None = None) -> LemmaReport:
    """Check ``(1 + C sqrt(eps))^-1 <= a_i <= 1 + C sqrt(eps)``.

    ``a`` is projected onto ``prod a = 1``; a sample whose product is off by
    more than PRODUCT_TOL, or whose sum breaks ``sum <= n(1+eps)``, is
    rejected.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    if np.any(a <= 0):
        raise InfeasibleSample("entries must be positive")
    if not 0.0 < eps < 1.0:
        raise InfeasibleSample("eps must lie in (0, 1)")
    if abs(np.sum(np.log(a))) > PRODUCT_TOL:
        raise InfeasibleSample("product constraint violated beyond projection tolerance")
    a = project_product(a)
    if a.sum() > n * (1.0 + eps) * (1.0 + 1e-12):
        raise InfeasibleSample("sum constraint violated")
    C = sqrteps_constant(n) if C is None else C
    return _report("sqrteps", _sqrteps_ratio(a, eps, C), n=n)


def sqrteps_proof_inequality(a, eps: float) -> float:
    """``sum (sqrt a_i - 1)^2 + 2 (sum sqrt a_i - n prod^(1/2n)) - n eps``.

    Non-positive on the feasible set; the second summand is >= 0 by AM-GM.
    """
    a = np.asarray(a, dtype=float)
    return float(_proof_lhs(a) - a.shape[-1] * eps)


def _proof_lhs(a):
    n = a.shape[-1]
    r = np.sqrt(a)
    gm = np.exp(np.log(a).sum(axis=-1) / (2.0 * n))
    return ((r - 1.0) ** 2).sum(axis=-1) + 2.0 * (r.sum(axis=-1) - n * gm)


def sample_sqrteps(n: int, size: int, rng: np.random.Generator):
    """Feasible ``(a, eps)``: Gaussian log-coordinates, centred, rejection on the sum."""
    out_a, out_e, have = [], [], 0
    while have < size:
        m = 2 * (size - have) + 64
        eps = np.exp(rng.uniform(math.log(1e-6), 0.0, m))
        eps = np.minimum(eps, 1.0 - 1e-12)
        spread = np.sqrt(2.0 * eps / n) * rng.uniform(0.2, 3.0, m)
        la = rng.standard_normal((m, n)) * spread[:, None]
        la -= la.mean(axis=1, keepdims=True)
        a = np.exp(la)
        ok = a.sum(axis=1) <= n * (1.0 + eps)
        out_a.append(a[ok])
        out_e.append(eps[ok])
        have += int(ok.sum())
    return np.concatenate(out_a)[:size], np.concatenate(out_e)[:size]


# ---------------------------------------------------------------------------
# Laplacian bound -> eigenvalue pinch
# ---------------------------------------------------------------------------

def _pinch_bound(n, f_val, C, beta, t):
    """Allowed |mu_i| from the rescale-then-sqrt(eps) chain."""
    scale = np.exp(np.asarray(f_val) / n)
    eps_eff = np.maximum((1.0 + C * t ** (-beta) / n) / scale - 1.0, 0.0)
    w = 1.0 + sqrteps_constant(n) * np.sqrt(eps_eff)
    return np.maximum(scale * w - 1.0, 1.0 - scale / w), eps_eff


def pinch_from_laplacian(mu, f_val: float, C: float, beta: float, t: float, N: float | None = None) -> LemmaReport:
    """Check ``|mu_i| <= C' t^(-beta/2)`` given ``sum mu <= C t^-beta`` and ``prod(1+mu) = e^f``.

    The allowed bound comes from rescaling ``b_i = (1+mu_i) e^{-f/n}`` to
    unit product, applying the sqrt(eps) lemma with
    ``eps = e^{-f/n}(1 + C t^-beta / n) - 1``, and undoing the rescaling.
    """
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    a = 1.0 + mu
    if np.any(a <= 0):
        raise InfeasibleSample("1 + mu_i must be positive")
    if abs(np.sum(np.log(a)) - f_val) > PRODUCT_TOL:
        raise InfeasibleSample("product constraint prod(1+mu) = e^f violated")
    if mu.sum() > C * t ** (-beta) * (1.0 + 1e-12) + 1e-15:
        raise InfeasibleSample("Laplacian constraint sum mu <= C t^-beta violated")
    if N is not None and abs(f_val) > t ** (-N):
        raise InfeasibleSample("|f| exceeds t^-N")
    bound, eps_eff = _pinch_bound(n, f_val, C, beta, t)
    if eps_eff >= 1.0:
        raise InfeasibleSample("effective eps >= 1: outside the lemma's range")
    ratio = 0.0 if np.max(np.abs(mu)) == 0.0 else np.max(np.abs(mu)) / bound
    return _report("pinch", ratio, n=n)


def pinch_constant(n, f_val, C, beta, t) -> float:
    """C' such that the allowed pinch equals ``C' t^(-beta/2)``."""
    bound, _ = _pinch_bound(n, f_val, C, beta, t)
    return float(bound * t ** (beta / 2.0))


def sample_pinch(n: int, size: int, rng: np.random.Generator, ts=(1e2, 1e3, 1e4), N: float = 3.0):
    """Feasible ``(mu, f, C, beta, t)`` tuples."""
    t = rng.choice(np.asarray(ts, dtype=float), size)
    beta = rng.uniform(0.5, 2.0, size)
    C = np.exp(rng.uniform(math.log(0.1), math.log(10.0), size))
    f = rng.uniform(-1.0, 1.0, size) * t ** (-N)
    budget = C * t ** (-beta)
    eps_eff = np.maximum(np.exp(-f / n) * (1.0 + budget / n) - 1.0, 1e-300)
    mu = np.empty((size, n))
    todo = np.arange(size)
    while todo.size:
        e = eps_eff[todo]
        spread = np.sqrt(2.0 * e / n) * rng.uniform(0.2, 3.0, todo.size)
        lb = rng.standard_normal((todo.size, n)) * spread[:, None]
        lb -= lb.mean(axis=1, keepdims=True)
        m = np.expm1(lb + f[todo, None] / n)
        ok = m.sum(axis=1) <= budget[todo]
        mu[todo[ok]] = m[ok]
        todo = todo[~ok]
    return mu, f, C, beta, t


# ---------------------------------------------------------------------------
# entries of a Hermitian matrix vs its quadratic-form norm
# ---------------------------------------------------------------------------

def _as_batch(A):
    A = np.asarray(A, dtype=complex)
    return A[None] if A.ndim == 2 else A


def operator_norm(A, rng: np.random.Generator | None = None, rtol: float = 1e-10, max_iter: int = 20000):
    """``sup |(x, Ax)| / |x|^2`` for Hermitian A (batched over leading axis).

    Seeded by the best of ``2 n^2`` random unit vectors, refined by power
    iteration until the relative change is below ``rtol``.  Every estimate is
    a lower bound on the true norm.
    """
    A = _as_batch(A)
    B, n, _ = A.shape
    rng = np.random.default_rng(0) if rng is None else rng
    k = 2 * n * n
    X = rng.standard_normal((B, k, n)) + 1j * rng.standard_normal((B, k, n))
    X /= np.linalg.norm(X, axis=2, keepdims=True)
    q = np.abs(np.einsum("bki,bij,bkj->bk", X.conj(), A, X))
    best = q.argmax(axis=1)
    x = X[np.arange(B), best]
    est = q[np.arange(B), best]
    prev = est.copy()
    active = np.ones(B, dtype=bool)
    for _ in range(max_iter):
        y = np.einsum("bij,bj->bi", A[active], x[active])
        ny = np.linalg.norm(y, axis=1)
        cur = np.maximum(est[active], ny)
        done = np.abs(cur - prev[active]) <= rtol * np.maximum(cur, 1e-300)
        idx = np.flatnonzero(active)
        est[idx] = cur
        prev[idx] = cur
        safe = ny > 0
        x[idx[safe]] = y[safe] / ny[safe, None]
        finished = done | ~safe
        active[idx[finished]] = False
        if not active.any():
            break
    return est


def _entry_ratio(A, norms):
    n = A.shape[-1]
    top = np.abs(A).reshape(A.shape[0], -1).max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(top == 0.0, 0.0, top / (n * norms))


def hermitian_entry_bound(A) -> LemmaReport:
    """Check ``max |a_ij| <= n ||A||`` with the quadratic-form norm."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(A - A.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("matrix is not Hermitian")
    norms = operator_norm(A)
    return _report("hermitian", _entry_ratio(A[None], norms), n=A.shape[0])


def sample_hermitian(n: int, size: int, rng: np.random.Generator):
    X = rng.standard_normal((size, n, n)) + 1j * rng.standard_normal((size, n, n))
    A = 0.5 * (X + np.conj(np.swapaxes(X, 1, 2)))
    # mix in low-rank and diagonal-dominant shapes, where the entry bound is tightest
    kind = rng.integers(0, 3, size)
    v = rng.standard_normal((size, n)) + 1j * rng.standard_normal((size, n))
    rank1 = np.einsum("bi,bj->bij", v, v.conj())
    A = np.where((kind == 1)[:, None, None], rank1, A)
    A = np.where((kind == 2)[:, None, None], A + np.eye(n) * rng.uniform(-5, 5, size)[:, None, None], A)
    return A * np.exp(rng.uniform(-3, 3, size))[:, None, None]


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

SUITES = ("sqrteps", "proof_inequality", "pinch", "hermitian")


def run_suite(name: str, n: int, samples: int, seed: int) -> LemmaReport:
    # one independent stream per (suite, n) so each failure reproduces alone
    rng = np.random.default_rng([seed, SUITES.index(name), n])
    if name == "sqrteps":
        a, eps = sample_sqrteps(n, samples, rng)
        ratios = _sqrteps_ratio(a, eps, sqrteps_constant(n))
    elif name == "proof_inequality":
        a, eps = sample_sqrteps(n, samples, rng)
        # LHS / (n eps): <= 1 iff LHS - n eps <= 0; roundoff slack of a few ulps
        ratios = _proof_lhs(a) / (n * eps * (1.0 + 1e-12))
    elif name == "pinch":
        mu, f, C, beta, t = sample_pinch(n, samples, rng)
        bound, _ = _pinch_bound(n, f, C, beta, t)
        ratios = np.abs(mu).max(axis=1) / bound
    elif name == "hermitian":
        A = sample_hermitian(n, samples, rng)
        ratios = _entry_ratio(A, operator_norm(A, rng))
    else:
        raise ValueError(f"unknown suite {name!r}")
    return _report(name, ratios, n=n, seed=seed)


def run_all_suites(dims=range(2, 9), samples: int = 10_000, seed: int = 0) -> list:
    return [run_suite(name, n, samples, seed) for name in SUITES for n in dims]
