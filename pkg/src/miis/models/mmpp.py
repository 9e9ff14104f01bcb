"""Markov-modulated Poisson process: likelihood, posterior, simulator.

Events arrive with an intensity given by the current state of an
unobserved continuous-time Markov chain. The likelihood of an observed
event sequence is a product of matrix factors, one per inter-event gap,
evaluated by a forward recursion with per-factor renormalization so the
running vector never overflows or underflows.

For the two-state chain the gap factors share one eigendecomposition of
Q - diag(psi), computed in closed form, so the recursion reduces to a
scalar loop (compiled with numba when available). Other state counts
fall back to a scaling-and-squaring matrix exponential per gap.

Inference runs in an unconstrained parametrization
(log psi1, log(psi2 - psi1), log q12, log q21); the log posterior adds
exponential priors on the natural parameters and the log Jacobian of
the inverse map, which is just the sum of the transformed coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Functional, TargetDensity

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

__all__ = [
    "MmppModel",
    "mmpp_loglik",
    "mmpp_log_prior_tilde",
    "mmpp_log_posterior",
    "make_target",
    "simulate_mmpp",
    "transform",
    "inverse_transform",
    "generator_matrix",
    "stationary_distribution",
    "expm_ss",
    "functional",
    "functional_names",
    "write_event_times",
    "read_event_times",
]

_EIG_GAP_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class MmppModel:
    """Model structure and data-generating values.

    ``psi`` holds the per-state event intensities (strictly increasing),
    ``q`` the generator off-diagonals: a pair (q12, q21) for two states
    or a full (d, d) matrix with ignored diagonal otherwise.
    ``prior_means`` are the means of the exponential priors on the
    natural parameters, in the order (psi..., q off-diagonals row-wise).
    """

    n_states: int
    psi: np.ndarray
    q: np.ndarray
    prior_means: np.ndarray
    window: float

    def __post_init__(self):
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "prior_means", np.asarray(self.prior_means, dtype=float))
        if self.n_states < 1:
            raise ValueError("n_states must be at least 1")
        _validate_params(self.n_states, self.psi, self.q, strict=True)
        if self.window <= 0:
            raise ValueError("observation window must be positive")
        n_q = self.n_states * (self.n_states - 1)
        if self.prior_means.shape != (self.n_states + n_q,):
            raise ValueError(f"prior_means must have {self.n_states + n_q} entries")
        if (self.prior_means <= 0).any():
            raise ValueError("prior means must be positive")

    def generator(self) -> np.ndarray:
        return generator_matrix(self.n_states, self.q)

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.generator())


def _validate_params(d: int, psi: np.ndarray, q: np.ndarray, strict: bool):
    psi = np.asarray(psi, dtype=float)
    q = np.asarray(q, dtype=float)
    if psi.shape != (d,):
        raise ValueError(f"psi must have shape ({d},)")
    if (psi < 0).any():
        raise ValueError("intensities must be nonnegative")
    if strict and d > 1 and not (np.diff(psi) > 0).all():
        raise ValueError("psi must be strictly increasing (identification); pass strict=False to override")
    if d == 1:
        return
    if d == 2 and q.shape == (2,):
        if (q <= 0).any():
            raise ValueError("generator off-diagonals must be positive")
        return
    if q.shape != (d, d):
        raise ValueError(f"q must be a pair (two states) or a ({d}, {d}) matrix")
    off = q[~np.eye(d, dtype=bool)]
    if (off < 0).any():
        raise ValueError("generator off-diagonals must be nonnegative")


def generator_matrix(d: int, q: np.ndarray) -> np.ndarray:
    """Assemble the generator from its off-diagonals."""
    q = np.asarray(q, dtype=float)
    if d == 1:
        return np.zeros((1, 1))
    if d == 2 and q.shape == (2,):
        return np.array([[-q[0], q[0]], [q[1], -q[1]]])
    gen = np.array(q, dtype=float)
    np.fill_diagonal(gen, 0.0)
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return gen


def stationary_distribution(gen: np.ndarray) -> np.ndarray:
    """Stationary law of a generator (nu @ gen = 0, nu >= 0, sum 1)."""
    d = gen.shape[0]
    if d == 1:
        return np.ones(1)
    if d == 2:
        q12, q21 = gen[0, 1], gen[1, 0]
        return np.array([q21, q12]) / (q12 + q21)
    a = np.vstack([gen.T, np.ones(d)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    nu, *_ = np.linalg.lstsq(a, b, rcond=None)
    return nu


_PADE_M = 6
_PADE_C = [
    math.factorial(2 * _PADE_M - k)
    * math.factorial(_PADE_M)
    / (math.factorial(2 * _PADE_M) * math.factorial(k) * math.factorial(_PADE_M - k))
    for k in range(_PADE_M + 1)
]


def expm_ss(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a degree-6 approximant."""
    a = np.asarray(a, dtype=float)
    norm = float(np.abs(a).sum(axis=0).max()) if a.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = a / (2.0**s)
    d = a.shape[0]
    eye = np.eye(d)
    x2 = x @ x
    x4 = x2 @ x2
    even = _PADE_C[0] * eye + _PADE_C[2] * x2 + _PADE_C[4] * x4 + _PADE_C[6] * (x4 @ x2)
    odd = x @ (_PADE_C[1] * eye + _PADE_C[3] * x2 + _PADE_C[5] * x4)
    f = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        f = f @ f
    return f


@njit(cache=True)
def _forward_2state_jit(u0, u1, lam0, lam1, b00, b01, b10, b11, w0, w1, gaps, n_events, normalize_every):
    logz = 0.0
    count = 0
    for i in range(n_events):
        g = gaps[i]
        lmax = lam0 * g if lam0 > lam1 else lam1 * g
        logz += lmax
        u0 = u0 * math.exp(lam0 * g - lmax)
        u1 = u1 * math.exp(lam1 * g - lmax)
        v0 = u0 * b00 + u1 * b10
        v1 = u0 * b01 + u1 * b11
        u0 = v0
        u1 = v1
        count += 1
        if count == normalize_every:
            s = abs(u0) + abs(u1)
            if not (s > 0.0 and math.isfinite(s)):
                return -math.inf
            logz += math.log(s)
            u0 /= s
            u1 /= s
            count = 0
    g = gaps[n_events]
    lmax = lam0 * g if lam0 > lam1 else lam1 * g
    logz += lmax
    u0 = u0 * math.exp(lam0 * g - lmax)
    u1 = u1 * math.exp(lam1 * g - lmax)
    p = u0 * w0 + u1 * w1
    if not (p > 0.0 and math.isfinite(p)):
        return -math.inf
    return logz + math.log(p)


def _forward_2state_py(u0, u1, lam0, lam1, b00, b01, b10, b11, w0, w1, gaps, n_events, normalize_every):
    logz = 0.0
    count = 0
    for i in range(n_events):
        g = gaps[i]
        lmax = lam0 * g if lam0 > lam1 else lam1 * g
        logz += lmax
        u0 = u0 * math.exp(lam0 * g - lmax)
        u1 = u1 * math.exp(lam1 * g - lmax)
        u0, u1 = u0 * b00 + u1 * b10, u0 * b01 + u1 * b11
        count += 1
        if count == normalize_every:
            s = abs(u0) + abs(u1)
            if not (s > 0.0 and math.isfinite(s)):
                return -math.inf
            logz += math.log(s)
            u0 /= s
            u1 /= s
            count = 0
    g = gaps[n_events]
    lmax = lam0 * g if lam0 > lam1 else lam1 * g
    logz += lmax
    u0 = u0 * math.exp(lam0 * g - lmax)
    u1 = u1 * math.exp(lam1 * g - lmax)
    p = u0 * w0 + u1 * w1
    if not (p > 0.0 and math.isfinite(p)):
        return -math.inf
    return logz + math.log(p)


_forward_2state = _forward_2state_jit if _HAVE_NUMBA else _forward_2state_py


def _two_state_plumbing(psi: np.ndarray, q12: float, q21: float):
    """Eigendecomposition of Q - diag(psi) mapped to recursion constants.

    Returns None when the eigenvalues nearly coincide or the
    eigenvector basis degenerates, in which case the caller takes the
    generic matrix-exponential path.
    """
    a = -q12 - psi[0]
    b = q12
    c = q21
    d = -q21 - psi[1]
    mid = 0.5 * (a + d)
    disc = 0.25 * (a - d) ** 2 + b * c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    lam0 = mid - sq
    lam1 = mid + sq
    if abs(lam1 - lam0) <= _EIG_GAP_RTOL * max(1.0, abs(lam0), abs(lam1)):
        return None
    if abs(b) >= abs(c):
        v = np.array([[b, b], [lam0 - a, lam1 - a]])
    else:
        v = np.array([[lam0 - d, lam1 - d], [c, c]])
    det = v[0, 0] * v[1, 1] - v[0, 1] * v[1, 0]
    if abs(det) <= 1e-14 * max(1.0, np.abs(v).max() ** 2):
        return None
    vinv = np.array([[v[1, 1], -v[0, 1]], [-v[1, 0], v[0, 0]]]) / det
    bmat = vinv @ np.diag(psi) @ v
    w = vinv @ np.ones(2)
    return lam0, lam1, v, vinv, bmat, w


def _forward_general(nu, gen, psi, gaps, n_events, normalize_every):
    a = gen - np.diag(psi)
    v = nu.astype(float).copy()
    logz = 0.0
    count = 0
    for i in range(n_events):
        v = v @ expm_ss(a * gaps[i])
        v = v * psi
        count += 1
        if count == normalize_every:
            s = float(np.abs(v).sum())
            if not (s > 0.0 and math.isfinite(s)):
                return -math.inf
            logz += math.log(s)
            v = v / s
            count = 0
    v = v @ expm_ss(a * gaps[n_events])
    p = float(v.sum())
    if not (p > 0.0 and math.isfinite(p)):
        return -math.inf
    return logz + math.log(p)


def _check_times(event_times: np.ndarray, window: float) -> np.ndarray:
    times = np.asarray(event_times, dtype=float).ravel()
    if window <= 0:
        raise ValueError("observation window must be positive")
    if times.size:
        if (times < 0).any() or times[-1] > window:
            raise ValueError("event times must lie in [0, window]")
        if times.size > 1 and not (np.diff(times) > 0).all():
            raise ValueError("event times must be strictly increasing")
    return times


def _gaps(times: np.ndarray, window: float) -> np.ndarray:
    out = np.empty(times.size + 1)
    if times.size:
        out[0] = times[0]
        out[1:-1] = np.diff(times)
        out[-1] = window - times[-1]
    else:
        out[0] = window
    return out


def mmpp_loglik(
    model: MmppModel,
    params,
    event_times: np.ndarray,
    window: float,
    *,
    normalize_every: int = 1,
    strict: bool = True,
) -> float:
    """Log-likelihood of an event sequence under intensity/generator values.

    ``params`` is a pair ``(psi, q)`` in natural scale; the model fixes
    the state count and the shape conventions. ``strict=False`` lifts
    the strictly-increasing requirement on ``psi`` (the boundary of the
    identified region is a legitimate evaluation point for checks).
    """
    psi, q = params
    psi = np.asarray(psi, dtype=float)
    q = np.asarray(q, dtype=float)
    d = model.n_states
    _validate_params(d, psi, q, strict=strict)
    if normalize_every < 1:
        raise ValueError("normalize_every must be at least 1")
    times = _check_times(event_times, window)
    gaps = _gaps(times, window)
    n = times.size
    gen = generator_matrix(d, q)
    nu = stationary_distribution(gen)
    if d == 2:
        plumbing = _two_state_plumbing(psi, gen[0, 1], gen[1, 0])
        if plumbing is not None:
            lam0, lam1, v, vinv, bmat, w = plumbing
            u = nu @ v
            return float(
                _forward_2state(
                    u[0], u[1], lam0, lam1,
                    bmat[0, 0], bmat[0, 1], bmat[1, 0], bmat[1, 1],
                    w[0], w[1], gaps, n, normalize_every,
                )
            )
    return float(_forward_general(nu, gen, psi, gaps, n, normalize_every))


def transform(psi: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Map two-state natural parameters to unconstrained coordinates."""
    psi = np.asarray(psi, dtype=float)
    q = np.asarray(q, dtype=float)
    if psi.shape != (2,) or q.shape != (2,):
        raise ValueError("the unconstrained parametrization covers the two-state model")
    if psi[0] <= 0 or psi[1] <= psi[0] or (q <= 0).any():
        raise ValueError("need 0 < psi1 < psi2 and positive generator rates")
    return np.array([math.log(psi[0]), math.log(psi[1] - psi[0]), math.log(q[0]), math.log(q[1])])


def inverse_transform(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`transform`; increasing intensities by construction."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (4,):
        raise ValueError("theta must have 4 entries")
    e = np.exp(theta)
    return np.array([e[0], e[0] + e[1]]), np.array([e[2], e[3]])


def mmpp_log_prior_tilde(theta: np.ndarray, prior_means: np.ndarray) -> np.ndarray:
    """Log prior density in unconstrained coordinates, batched over rows.

    Exponential priors on (psi1, psi2, q12, q21) with the given means,
    plus the log Jacobian of the inverse transform (the coordinate sum).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    means = np.asarray(prior_means, dtype=float)
    if theta.shape[1] != 4 or means.shape != (4,):
        raise ValueError("expected 4 unconstrained coordinates and 4 prior means")
    e = np.exp(theta)
    natural = np.column_stack([e[:, 0], e[:, 0] + e[:, 1], e[:, 2], e[:, 3]])
    log_prior = -(np.log(means).sum()) - (natural / means).sum(axis=1)
    return log_prior + theta.sum(axis=1)


def mmpp_log_posterior(
    model: MmppModel,
    theta: np.ndarray,
    event_times: np.ndarray,
    window: float,
    *,
    normalize_every: int = 1,
) -> float:
    """Unnormalized log posterior at one unconstrained point."""
    theta = np.asarray(theta, dtype=float)
    if np.abs(theta).max() > 500.0:
        return -math.inf
    psi, q = inverse_transform(theta)
    loglik = mmpp_loglik(model, (psi, q), event_times, window, normalize_every=normalize_every)
    prior = float(mmpp_log_prior_tilde(theta[None, :], model.prior_means)[0])
    return loglik + prior


def make_target(model: MmppModel, event_times: np.ndarray, window: float) -> TargetDensity:
    """Posterior over unconstrained coordinates as a sampler target.

    Validates the data once and evaluates batches row by row; the
    forward recursion is the per-row cost.
    """
    if model.n_states != 2:
        raise ValueError("the sampler target covers the two-state model")
    times = _check_times(np.asarray(event_times, dtype=float), window)
    gaps = _gaps(times, window)
    n = times.size
    means = model.prior_means

    def log_m(points):
        points = np.asarray(points, dtype=float)
        out = np.empty(points.shape[0])
        priors = np.full(points.shape[0], -np.inf)
        ok = np.abs(points).max(axis=1) <= 500.0
        if ok.any():
            priors[ok] = mmpp_log_prior_tilde(points[ok], means)
        for i in range(points.shape[0]):
            if not ok[i]:
                out[i] = -math.inf
                continue
            psi, q = inverse_transform(points[i])
            gen = generator_matrix(2, q)
            nu = stationary_distribution(gen)
            plumbing = _two_state_plumbing(psi, q[0], q[1])
            if plumbing is None:
                ll = _forward_general(nu, gen, psi, gaps, n, 1)
            else:
                lam0, lam1, v, vinv, bmat, w = plumbing
                u = nu @ v
                ll = float(
                    _forward_2state(
                        u[0], u[1], lam0, lam1,
                        bmat[0, 0], bmat[0, 1], bmat[1, 0], bmat[1, 1],
                        w[0], w[1], gaps, n, 1,
                    )
                )
            out[i] = ll + priors[i]
        return out

    return TargetDensity(dim=4, log_m=log_m)


def simulate_mmpp(model: MmppModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one event sequence from the data-generating process.

    Simulates the hidden chain from its stationary law with exponential
    holding times, then fills each constant-intensity segment with a
    Poisson number of events placed uniformly.
    """
    gen = model.generator()
    nu = model.stationary()
    d = model.n_states
    state = int(np.searchsorted(np.cumsum(nu), rng.random(), side="right"))
    state = min(state, d - 1)
    t = 0.0
    times: list[np.ndarray] = []
    while t < model.window:
        rate = -gen[state, state]
        hold = rng.exponential(1.0 / rate) if rate > 0 else model.window - t
        end = min(t + hold, model.window)
        count = rng.poisson(model.psi[state] * (end - t))
        if count:
            times.append(t + (end - t) * np.sort(rng.random(count)))
        if rate > 0:
            jump = np.array(gen[state], dtype=float)
            jump[state] = 0.0
            jump /= jump.sum()
            state = int(np.searchsorted(np.cumsum(jump), rng.random(), side="right"))
            state = min(state, d - 1)
        t = end
    if not times:
        return np.empty(0)
    out = np.concatenate(times)
    out.sort()
    # Uniform placement makes exact ties a measure-zero event; nudge any
    # float collision upward so downstream validation can stay strict.
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.inf)
    return out


_FUNCTIONALS = {
    "psi1": lambda x: np.exp(x[:, 0]),
    "psi2": lambda x: np.exp(x[:, 0]) + np.exp(x[:, 1]),
    "q12": lambda x: np.exp(x[:, 2]),
    "q21": lambda x: np.exp(x[:, 3]),
}


def functional_names() -> tuple[str, ...]:
    return tuple(_FUNCTIONALS)


def functional(name: str) -> Functional:
    """Natural-scale parameter as a functional of the unconstrained chain."""
    if name not in _FUNCTIONALS:
        raise KeyError(f"unknown functional {name!r}; available: {sorted(_FUNCTIONALS)}")
    return Functional(name=name, f=_FUNCTIONALS[name])


def write_event_times(path, times: np.ndarray, window: Optional[float] = None):
    """Write an event-time file: optional ``window=`` header, one time per line."""
    times = np.asarray(times, dtype=float).ravel()
    with open(path, "w") as fh:
        if window is not None:
            fh.write(f"window={float(window)!r}\n")
        for t in times:
            fh.write(f"{float(t)!r}\n")


def read_event_times(path) -> tuple[np.ndarray, Optional[float]]:
    """Read an event-time file written by :func:`write_event_times`.

    Returns the times and the window from the header (None if absent).
    Times must be nonnegative and strictly increasing.
    """
    window = None
    values: list[float] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if lineno == 1 and line.startswith("window="):
                window = float(line.split("=", 1)[1])
                continue
            values.append(float(line))
    times = np.asarray(values, dtype=float)
    if times.size and (times < 0).any():
        raise ValueError(f"{path}: event times must be nonnegative")
    if times.size > 1 and not (np.diff(times) > 0).all():
        raise ValueError(f"{path}: event times must be strictly increasing")
    return times, window
