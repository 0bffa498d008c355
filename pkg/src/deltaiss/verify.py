"""A-posteriori checks of a certificate.

Two independent routes: :func:`recheck_certificate` recomputes every
synthesis condition from raw data with polynomial algebra, and the
trajectory-level functions close the loop around the true plant and test the
integrated decay bound along simulated pairs.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .certificate import Certificate, ConditionReport
from .plant import BatchPair, PolySystem, rk4, _n_steps
from .polyalg import (MonomialDictionary, PolyMatrix, evaluate_dictionary,
                      factorize_dictionary, poly_multiply, poly_residual)

Signal = Callable[[float], np.ndarray]


class MissingRhoBound(ValueError):
    pass


class FingerprintMismatch(UserWarning):
    pass


# -- residual recheck ---------------------------------------------------------

def recheck_certificate(cert: Certificate, pair: BatchPair,
                        dictionary: MonomialDictionary | None = None,
                        tol: float = 1e-6) -> ConditionReport:
    """Recompute all condition residuals from the raw data matrices."""
    dictionary = dictionary or cert.dictionary
    fp_ok = True
    if cert.data_fingerprint and cert.data_fingerprint != pair.fingerprint():
        warnings.warn("certificate was synthesized from different data", FingerprintMismatch)
        fp_ok = False
    n = cert.n
    aleph = factorize_dictionary(dictionary)
    Theta = PolyMatrix.constant(n, cert.Theta)
    Sigma = PolyMatrix.constant(n, cert.Sigma)

    def lift_res(batch):
        J0 = evaluate_dictionary(dictionary, batch.X0)
        return poly_residual(poly_multiply(PolyMatrix.constant(n, J0), cert.Y),
                             poly_multiply(aleph, Theta))

    def loop_res(batch):
        return poly_residual(poly_multiply(PolyMatrix.constant(n, batch.X1), cert.Y), Sigma)

    M = cert.Sigma + cert.Sigma.T + cert.vartheta * np.eye(n) + cert.epsilon * cert.Theta
    eig_p = np.linalg.eigvalsh((cert.P + cert.P.T) / 2)
    K_expected = poly_multiply(poly_multiply(PolyMatrix.constant(n, pair.U0), cert.Y),
                               PolyMatrix.constant(n, cert.P))
    ctrl = poly_residual(cert.K, K_expected)
    report = ConditionReport(
        lift=lift_res(pair.batch),
        lift_sibling=lift_res(pair.sibling),
        closed_loop=loop_res(pair.batch),
        closed_loop_sibling=loop_res(pair.sibling),
        decay_lmi=float(np.linalg.eigvalsh((M + M.T) / 2)[-1]),
        theta_inverse=float(np.max(np.abs(cert.P @ cert.Theta - np.eye(n)))),
        p_min_eig=float(eig_p[0]),
        p_max_eig=float(eig_p[-1]),
        alpha_mismatch=float(max(abs(eig_p[0] - cert.alpha_lower), abs(eig_p[-1] - cert.alpha_upper))),
        tol=tol,
        controller=ctrl,
        fingerprint_match=fp_ok,
    )
    return report


# -- signals ------------------------------------------------------------------

def builtin_signal(name: str, m: int) -> Signal:
    """Small library of external inputs u_hat(t).

    ``sincos`` cycles (sin 3t, cos 2t, sin^2 t) over the channels.
    """
    if name == "zero":
        return lambda t: np.zeros(m)
    if name == "sincos":
        base = (lambda t: np.sin(3 * t), lambda t: np.cos(2 * t), lambda t: np.sin(t) ** 2)
        return lambda t: np.array([base[i % 3](t) for i in range(m)])
    if name == "sin":
        return lambda t: np.full(m, np.sin(t))
    if name == "constant":
        return lambda t: np.ones(m)
    raise ValueError(f"unknown signal {name!r}; choose zero, sincos, sin or constant")


def sup_input_gap(u: Signal, v: Signal, times: np.ndarray) -> float:
    return float(max(np.sum((np.asarray(u(t)) - np.asarray(v(t))) ** 2) for t in times))


# -- closed-loop pair simulation ------------------------------------------------

@dataclass
class PairTrace:
    times: np.ndarray
    x: np.ndarray  # (n, K)
    x_tilde: np.ndarray
    u_hat: np.ndarray  # (m, K)
    u_hat_tilde: np.ndarray
    V: np.ndarray
    diff_norm: np.ndarray
    lie: np.ndarray
    seed: int = 0

    @property
    def inputs_equal(self) -> bool:
        return bool(np.array_equal(self.u_hat, self.u_hat_tilde))

    def to_csv(self, path: str | Path) -> None:
        n = self.x.shape[0]
        header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"xt_{i + 1}" for i in range(n)]
                  + ["V", "diff_norm"])
        rows = np.vstack([self.times[None], self.x, self.x_tilde, self.V[None],
                          self.diff_norm[None]]).T
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) for v in r])


def simulate_closed_loop_pair(sys: PolySystem, cert: Certificate, x0, x0_tilde,
                              u_hat: Signal, u_hat_tilde: Signal, horizon: float,
                              step: float, seed: int = 0) -> PairTrace:
    """Integrate both closed loops x' = A F(x) + B (K(x) x + u_hat) with RK4."""
    n = sys.n
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    x0_tilde = np.asarray(x0_tilde, dtype=float).reshape(-1)
    if x0.size != n or x0_tilde.size != n or cert.n != n:
        raise ValueError("state dimensions of plant, certificate and initial conditions differ")
    if cert.m != sys.m:
        raise ValueError(f"certificate has {cert.m} inputs, plant has {sys.m}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    k_steps = _n_steps(horizon, step)
    K = cert.K.compiled()
    exps = sys.true_dict.exponent_array.astype(float)
    A, B = sys.A, sys.B

    def field_one(x, u):
        return A @ np.prod(x[None, :] ** exps, axis=1) + B @ (K(x) @ x + u)

    def f(t, z):
        return np.concatenate([field_one(z[:n], u_hat(t)), field_one(z[n:], u_hat_tilde(t))])

    states = rk4(f, np.concatenate([x0, x0_tilde]), 0.0, step, k_steps).T
    times = step * np.arange(k_steps + 1)
    x, xt = states[:n], states[n:]
    e = x - xt
    V = np.einsum("ik,ij,jk->k", e, cert.P, e)
    return PairTrace(times, x, xt,
                     np.column_stack([u_hat(t) for t in times]),
                     np.column_stack([u_hat_tilde(t) for t in times]),
                     V, np.linalg.norm(e, axis=0),
                     np.gradient(V, times) if times.size > 1 else np.zeros_like(V), seed)


# -- decay checks -------------------------------------------------------------

@dataclass
class GronwallResult:
    passed: bool
    worst_margin: float  # min over samples of bound*(1+slack) + atol - V
    worst_time: float


def gronwall_check(trace: PairTrace, epsilon: float, rho_bound: float | None = None,
                   slack: float = 0.05, atol: float = 1e-12) -> GronwallResult:
    """Pointwise integrated decay bound along a trace.

    Identical inputs: V(t) <= V(0) exp(-eps t) (1 + slack).
    Otherwise: V(t) <= [V(0) exp(-eps t) + rho/eps sup|du|^2 (1 - exp(-eps t))] (1 + slack).
    """
    t = trace.times
    decay = np.exp(-epsilon * t)
    bound = trace.V[0] * decay
    if not trace.inputs_equal:
        if rho_bound is None:
            raise MissingRhoBound("different external inputs need a bound on rho "
                                  "(supply an upper bound on ||B||)")
        gap = float(np.max(np.sum((trace.u_hat - trace.u_hat_tilde) ** 2, axis=0)))
        bound = bound + rho_bound / epsilon * gap * (1 - decay)
    margin = bound * (1 + slack) + atol - trace.V
    k = int(np.argmin(margin))
    return GronwallResult(bool(margin[k] >= 0), float(margin[k]), float(t[k]))


def sampled_decay_fraction(trace: PairTrace, epsilon: float, tol_num: float) -> float:
    """Share of interior samples with dV/dt <= -eps V + tol_num."""
    lie, V = trace.lie[1:-1], trace.V[1:-1]
    if lie.size == 0:
        return 1.0
    return float(np.mean(lie <= -epsilon * V + tol_num))


# -- convergence reporting ----------------------------------------------------

@dataclass
class ConvergenceReport:
    seeds: list[int]
    times: list[np.ndarray]
    log_norms: list[np.ndarray]  # log10 |x - x~|, -inf where the gap is zero
    monotone_after: list[float]
    initial_norms: list[float]
    terminal_norms: list[float]
    extra: dict = field(default_factory=dict)

    @property
    def terminal_ratios(self) -> list[float]:
        return [tn / i if i > 0 else 0.0 for tn, i in zip(self.terminal_norms, self.initial_norms)]

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "monotone_after": self.monotone_after,
            "initial_norms": self.initial_norms,
            "terminal_norms": self.terminal_norms,
            "terminal_ratios": self.terminal_ratios,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write_long_csv(self, path: str | Path) -> None:
        """One row per (pair, sample): plot-ready for a log-scale figure."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair", "t", "diff_norm", "log10_diff_norm"])
            for seed, t, lg in zip(self.seeds, self.times, self.log_norms):
                for ti, li in zip(t, lg):
                    w.writerow([seed, repr(float(ti)), repr(float(10.0 ** li)),
                                repr(float(li)) if np.isfinite(li) else ""])


def monotone_after(times: np.ndarray, norms: np.ndarray, rtol: float = 1e-6,
                   atol: float = 0.0) -> float:
    """Earliest time after which ``norms`` never increases beyond the band."""
    rises = np.flatnonzero(norms[1:] > norms[:-1] * (1 + rtol) + atol)
    if rises.size == 0:
        return float(times[0])
    return float(times[rises[-1] + 1])


def convergence_report(traces: Sequence[PairTrace], rtol: float = 1e-6,
                       floor: float = 1e-10) -> ConvergenceReport:
    """Log-scale gap series, monotonicity onset and terminal gaps per pair.

    ``floor`` (relative to the initial gap) is the absolute band under which
    fluctuations are treated as integration noise.
    """
    if not traces:
        raise ValueError("need at least one trace")
    ordered = sorted(traces, key=lambda tr: tr.seed)
    seeds, times, logs, mono, init, term = [], [], [], [], [], []
    for tr in ordered:
        d = tr.diff_norm
        with np.errstate(divide="ignore"):
            lg = np.log10(d)
        seeds.append(int(tr.seed))
        times.append(tr.times)
        logs.append(lg)
        mono.append(monotone_after(tr.times, d, rtol, floor * d[0]))
        init.append(float(d[0]))
        term.append(float(d[-1]))
    return ConvergenceReport(seeds, times, logs, mono, init, term)


# -- batch verification -------------------------------------------------------

@dataclass
class VerificationSummary:
    traces: list[PairTrace]
    gronwall: list[GronwallResult]
    convergence: ConvergenceReport
    terminal_ratio_limit: float

    @property
    def passed(self) -> bool:
        return (all(g.passed for g in self.gronwall)
                and all(r <= self.terminal_ratio_limit for r in self.convergence.terminal_ratios))

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "n_pairs": len(self.traces),
            "gronwall": [{"seed": tr.seed, "pass": g.passed, "worst_margin": g.worst_margin,
                          "worst_time": g.worst_time} for tr, g in zip(self.traces, self.gronwall)],
            "terminal_ratio_limit": self.terminal_ratio_limit,
            "convergence": self.convergence.to_dict(),
        }


def verify_pairs(sys: PolySystem, cert: Certificate, n_pairs: int = 20, box: float = 10.0,
                 horizon: float = 20.0, step: float = 0.005, signal: str = "sincos",
                 signal_tilde: str | None = None, seed: int = 0, paper_range: bool = False,
                 slack: float = 0.05, terminal_ratio_limit: float = 1e-3) -> VerificationSummary:
    """Simulate random closed-loop pairs and run the decay and convergence checks.

    ``paper_range`` draws x(0) from [0, 2e4]^n and x~(0) from [-2e4, 0)^n.
    """
    u = builtin_signal(signal, sys.m)
    ut = builtin_signal(signal_tilde or signal, sys.m)
    if (signal_tilde or signal) != signal and cert.rho_bound is None:
        raise MissingRhoBound("different external inputs need a bound on rho "
                              "(supply an upper bound on ||B||)")
    traces, checks = [], []
    for k in range(n_pairs):
        rng = np.random.default_rng([seed, k])
        if paper_range:
            x0 = rng.uniform(0.0, 2e4, sys.n)
            xt0 = -rng.uniform(0.0, 2e4, sys.n) - 1e-9
        else:
            x0 = rng.uniform(-box, box, sys.n)
            xt0 = rng.uniform(-box, box, sys.n)
        tr = simulate_closed_loop_pair(sys, cert, x0, xt0, u, ut, horizon, step, seed=k)
        traces.append(tr)
        checks.append(gronwall_check(tr, cert.epsilon, cert.rho_bound, slack))
    return VerificationSummary(traces, checks, convergence_report(traces), terminal_ratio_limit)
