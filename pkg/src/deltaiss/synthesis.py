"""Data-driven synthesis of the incremental Lyapunov certificate and controller.

With Theta = P^{-1}, a single polynomial map Y(x) = sum_a Y_a x^a (T x n
coefficient blocks) and a constant Sigma, the program is

    J0  Y(x) = aleph(x) Theta        J0~ Y(x) = aleph(x) Theta
    X1  Y(x) = Sigma                 X1~ Y(x) = Sigma
    Sigma + Sigma^T + vartheta I + epsilon Theta <= 0,   Theta >= floor I

The polynomial equalities are matched coefficient by coefficient, which
leaves one constant LMI. The controller is K(x) = U0 Y(x) P.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import cvxpy
import numpy as np
import scipy.linalg

from .certificate import Certificate
from .plant import BatchPair, LiftedData, RichnessDiagnostics, lift, richness_check
from .polyalg import (MonomialDictionary, PolyMatrix, factorize_dictionary, format_monomial,
                      monomials_of_degree, poly_multiply)
from .sdpkernel import SdpProblem, SdpSolution, SolveOptions, check_solution, solve
from .verify import recheck_certificate

log = logging.getLogger(__name__)

THETA, SIGMA = "Theta", "Sigma"


class SynthesisError(Exception):
    pass


class RankPreconditionViolated(SynthesisError):
    def __init__(self, diagnostics: RichnessDiagnostics):
        self.diagnostics = diagnostics
        super().__init__(
            f"lifted data matrices are not full row rank (ranks {diagnostics.ranks}, need "
            f"{diagnostics.N} with T={diagnostics.T}); the data are not rich enough")


class DegreeTooLow(SynthesisError):
    pass


class SdpInfeasible(SynthesisError):
    def __init__(self, margin: float, family: str | None, stats: dict):
        self.margin = margin
        self.family = family
        self.stats = stats
        super().__init__(f"no feasible certificate: best margin {margin:.4g}"
                         + (f", most violated block {family}" if family else ""))


class VerificationFailed(SynthesisError):
    def __init__(self, report):
        self.report = report
        super().__init__("solver reported a feasible point but the independent check rejected it")


@dataclass(frozen=True)
class SynthesisConfig:
    """Parameters of the feasibility program.

    ``psd_floor`` is the lower bound on Theta. Scaling (Theta, Sigma, Y) up by
    any factor >= 1 preserves feasibility, so a unit floor costs nothing and
    keeps the closed-loop matrix Sigma P of moderate size. ``sigma_bound``
    caps ||Sigma||, which caps the closed-loop gain and makes the program
    bounded.
    """

    epsilon: float
    vartheta: float
    dictionary: MonomialDictionary
    y_degree: int | None = None
    psd_floor: float = 1.0
    sigma_bound: float | None = 100.0
    verify_tol: float = 1e-6
    rank_rtol: float | None = None
    b_norm_bound: float | None = None
    regularize: bool = True
    solve_options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.vartheta > 0:
            raise ValueError("vartheta must be positive")
        if self.psd_floor < 0:
            raise ValueError("psd_floor must be non-negative")

    @property
    def effective_y_degree(self) -> int:
        return self.dictionary.max_degree - 1 if self.y_degree is None else self.y_degree


def y_basis(n: int, degree: int) -> list[tuple[int, ...]]:
    """Constant term followed by all monomials of degree 1..degree (graded lex)."""
    basis = [(0,) * n]
    for d in range(1, degree + 1):
        basis.extend(monomials_of_degree(n, d))
    return basis


def y_name(alpha) -> str:
    return f"Y[{format_monomial(alpha)}]"


def assemble_program(pair: BatchPair, lifted: tuple[LiftedData, LiftedData],
                     aleph: PolyMatrix, cfg: SynthesisConfig) -> SdpProblem:
    dictionary = cfg.dictionary
    n, N, T = dictionary.n, dictionary.N, pair.batch.T
    for ld in lifted:
        if ld.rank < N:
            raise RankPreconditionViolated(richness_check(pair, dictionary, cfg.rank_rtol))
    deg = cfg.effective_y_degree
    if deg < aleph.degree:
        raise DegreeTooLow(f"Y degree {deg} cannot match aleph of degree {aleph.degree}")
    J0, J0t = lifted[0].J0, lifted[1].J0
    X1, X1t = pair.batch.X1, pair.sibling.X1

    prob = SdpProblem()
    prob.declare_symmetric(THETA, n)
    prob.declare_free(SIGMA, n, n)
    basis = y_basis(n, deg)
    for alpha in basis:
        prob.declare_free(y_name(alpha), T, n)
    zero_N, zero_n = np.zeros((N, n)), np.zeros((n, n))
    for alpha in basis:
        yn, lab = y_name(alpha), format_monomial(alpha)
        aleph_a = aleph.coefficient(alpha)
        for tag, J in (("lift", J0), ("lift_sibling", J0t)):
            terms = [(J, yn, None)]
            if np.any(aleph_a):
                terms.append((-aleph_a, THETA, None))
            prob.add_matrix_equality(terms, zero_N, name=f"{tag}[{lab}]")
        for tag, X in (("closed_loop", X1), ("closed_loop_sibling", X1t)):
            terms = [(X, yn, None)]
            if sum(alpha) == 0:
                terms.append((-np.eye(n), SIGMA, None))
            prob.add_matrix_equality(terms, zero_n, name=f"{tag}[{lab}]")
    prob.add_lmi(cfg.vartheta * np.eye(n),
                 [(None, SIGMA, None), (None, SIGMA, None, True),
                  (cfg.epsilon * np.eye(n), THETA, None)], name="decay")
    prob.add_psd_floor(THETA, cfg.psd_floor)
    if cfg.sigma_bound is not None:
        prob.add_norm_bound(SIGMA, cfg.sigma_bound, name="sigma_bound")
    if cfg.regularize:
        prob.add_regularizer(THETA)
        prob.add_regularizer(SIGMA)
    return prob


def extract_certificate(solution: SdpSolution, pair: BatchPair, cfg: SynthesisConfig) -> Certificate:
    n = cfg.dictionary.n
    Theta = solution.assignment[THETA]
    Theta = (Theta + Theta.T) / 2
    c = scipy.linalg.cho_factor(Theta)
    P = scipy.linalg.cho_solve(c, np.eye(n))
    P = (P + P.T) / 2
    Sigma = solution.assignment[SIGMA]
    T = pair.batch.T
    Y = PolyMatrix(n, T, n, {alpha: solution.assignment[y_name(alpha)]
                             for alpha in y_basis(n, cfg.effective_y_degree)})
    K = poly_multiply(poly_multiply(PolyMatrix.constant(n, pair.U0), Y), PolyMatrix.constant(n, P))
    eig = np.linalg.eigvalsh(P)
    rho = None if cfg.b_norm_bound is None else cfg.b_norm_bound ** 2 / cfg.vartheta
    return Certificate(Theta=Theta, P=P, Sigma=Sigma, Y=Y, K=K, epsilon=cfg.epsilon,
                       vartheta=cfg.vartheta, dictionary=cfg.dictionary,
                       alpha_lower=float(eig[0]), alpha_upper=float(eig[-1]),
                       data_fingerprint=pair.fingerprint(), rho_bound=rho,
                       solver={"backend": cfg.solve_options.solver,
                               "cvxpy": cvxpy.__version__,
                               "margin": solution.margin})


def synthesize(pair: BatchPair, cfg: SynthesisConfig) -> Certificate:
    """Lift, check richness, assemble, solve, verify and extract.

    Never returns a certificate that failed the independent residual check.
    """
    dictionary = cfg.dictionary
    if dictionary.n != pair.batch.n:
        raise ValueError(f"dictionary has n={dictionary.n}, data have n={pair.batch.n}")
    diag = richness_check(pair, dictionary, cfg.rank_rtol)
    if not diag.rank_ok:
        raise RankPreconditionViolated(diag)
    lifted = (lift(pair.batch, dictionary, cfg.rank_rtol), lift(pair.sibling, dictionary, cfg.rank_rtol))
    aleph = factorize_dictionary(dictionary)
    prob = assemble_program(pair, lifted, aleph, cfg)
    sol = solve(prob, cfg.solve_options)
    log.info("solve status %s, margin %.4g", sol.status, sol.margin)
    if sol.status != "feasible":
        raise SdpInfeasible(sol.margin, sol.solver_stats.get("most_violated"), sol.solver_stats)
    kernel_report = check_solution(prob, sol, cfg.verify_tol)
    if not kernel_report.passed:
        raise VerificationFailed(kernel_report)
    cert = extract_certificate(sol, pair, cfg)
    report = recheck_certificate(cert, pair, dictionary, cfg.verify_tol)
    if not report.passed:
        raise VerificationFailed(report)
    cert.residual_report = report
    return cert


def synthesize_with_retry(pair: BatchPair, cfg: SynthesisConfig,
                          grid: tuple[tuple[float, float], ...] = ()) -> Certificate:
    """Try ``cfg`` first, then each (epsilon, vartheta) in ``grid``."""
    try:
        return synthesize(pair, cfg)
    except SdpInfeasible as first:
        for eps, vt in grid:
            try:
                return synthesize(pair, replace(cfg, epsilon=eps, vartheta=vt))
            except SdpInfeasible:
                continue
        raise first


def two_map_feasibility(pair: BatchPair, cfg: SynthesisConfig) -> dict:
    """Research diagnostic: relax to separate Y maps for the two trajectories.

    Reports the achieved margin of both variants. The relaxed variant does not
    define a single feedback law and is never turned into a certificate.
    """
    dictionary = cfg.dictionary
    lifted = (lift(pair.batch, dictionary, cfg.rank_rtol), lift(pair.sibling, dictionary, cfg.rank_rtol))
    aleph = factorize_dictionary(dictionary)
    shared = solve(assemble_program(pair, lifted, aleph, cfg), cfg.solve_options)

    n, N, T = dictionary.n, dictionary.N, pair.batch.T
    prob = SdpProblem()
    prob.declare_symmetric(THETA, n)
    prob.declare_free(SIGMA, n, n)
    for alpha in y_basis(n, cfg.effective_y_degree):
        lab = format_monomial(alpha)
        aleph_a = aleph.coefficient(alpha)
        for suffix, J, X in (("", lifted[0].J0, pair.batch.X1), ("~", lifted[1].J0, pair.sibling.X1)):
            yn = y_name(alpha) + suffix
            prob.declare_free(yn, T, n)
            terms = [(J, yn, None)] + ([(-aleph_a, THETA, None)] if np.any(aleph_a) else [])
            prob.add_matrix_equality(terms, np.zeros((N, n)), name=f"lift{suffix}[{lab}]")
            terms = [(X, yn, None)] + ([(-np.eye(n), SIGMA, None)] if sum(alpha) == 0 else [])
            prob.add_matrix_equality(terms, np.zeros((n, n)), name=f"closed_loop{suffix}[{lab}]")
    prob.add_lmi(cfg.vartheta * np.eye(n), [(None, SIGMA, None), (None, SIGMA, None, True),
                                           (cfg.epsilon * np.eye(n), THETA, None)], name="decay")
    prob.add_psd_floor(THETA, cfg.psd_floor)
    if cfg.sigma_bound is not None:
        prob.add_norm_bound(SIGMA, cfg.sigma_bound)
    relaxed = solve(prob, cfg.solve_options)
    return {"shared": {"status": shared.status, "margin": shared.margin},
            "two_maps": {"status": relaxed.status, "margin": relaxed.margin}}
