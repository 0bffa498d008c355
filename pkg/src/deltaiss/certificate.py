"""The certificate produced by synthesis and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polyalg import MonomialDictionary, PolyMatrix

FORMAT_VERSION = 1


@dataclass
class ConditionReport:
    """Residuals of the synthesis conditions, recomputed from raw data."""

    lift: float
    lift_sibling: float
    closed_loop: float
    closed_loop_sibling: float
    decay_lmi: float  # lambda_max(Sigma + Sigma^T + vartheta I + epsilon Theta)
    theta_inverse: float  # max |P Theta - I|
    p_min_eig: float
    p_max_eig: float
    alpha_mismatch: float
    tol: float
    controller: float = 0.0  # max |K - U0 Y P| over coefficients
    fingerprint_match: bool = True

    @property
    def passed(self) -> bool:
        equalities = max(self.lift, self.lift_sibling, self.closed_loop,
                         self.closed_loop_sibling, self.controller)
        return (equalities <= self.tol and self.decay_lmi <= self.tol
                and self.theta_inverse <= 1e-8 and self.p_min_eig > 0
                and self.alpha_mismatch <= 1e-8)

    def worst_family(self) -> str:
        fam = {"lift": self.lift, "lift_sibling": self.lift_sibling,
               "closed_loop": self.closed_loop, "closed_loop_sibling": self.closed_loop_sibling,
               "controller": self.controller, "decay_lmi": self.decay_lmi}
        return max(fam, key=fam.get)

    def to_dict(self) -> dict:
        return {"lift": self.lift, "lift_sibling": self.lift_sibling,
                "closed_loop": self.closed_loop, "closed_loop_sibling": self.closed_loop_sibling,
                "decay_lmi": self.decay_lmi, "theta_inverse": self.theta_inverse,
                "p_min_eig": self.p_min_eig, "p_max_eig": self.p_max_eig,
                "alpha_mismatch": self.alpha_mismatch, "tol": self.tol,
                "controller": self.controller, "fingerprint_match": self.fingerprint_match, "pass": self.passed}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionReport":
        keys = ("lift", "lift_sibling", "closed_loop", "closed_loop_sibling", "decay_lmi",
                "theta_inverse", "p_min_eig", "p_max_eig", "alpha_mismatch", "tol")
        return cls(**{k: float(d[k]) for k in keys}, controller=float(d.get("controller", 0.0)),
                   fingerprint_match=bool(d.get("fingerprint_match", True)))

    def max_difference(self, other: "ConditionReport") -> float:
        a, b = self.to_dict(), other.to_dict()
        return max(abs(float(a[k]) - float(b[k])) for k in a if isinstance(a[k], float))


@dataclass
class Certificate:
    """Quadratic incremental Lyapunov certificate and polynomial feedback gain.

    V(x, x~) = (x - x~)^T P (x - x~) and u = K(x) x + u_hat.
    """

    Theta: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    Y: PolyMatrix
    K: PolyMatrix
    epsilon: float
    vartheta: float
    dictionary: MonomialDictionary
    alpha_lower: float
    alpha_upper: float
    residual_report: ConditionReport | None = None
    data_fingerprint: str = ""
    rho_bound: float | None = None
    solver: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.K.rows

    def lyapunov(self, x, x_tilde) -> float:
        e = np.asarray(x, dtype=float) - np.asarray(x_tilde, dtype=float)
        return float(e @ self.P @ e)

    def controller(self, x, u_hat) -> np.ndarray:
        return controller_evaluate(self, x, u_hat)

    def closed_loop_matrix(self) -> np.ndarray:
        """Sigma P: the data-implied linear closed-loop matrix."""
        return self.Sigma @ self.P

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "P": self.P.tolist(),
            "Theta": self.Theta.tolist(),
            "Sigma": self.Sigma.tolist(),
            "Y": self.Y.to_dict(),
            "K": self.K.to_dict(),
            "epsilon": self.epsilon,
            "vartheta": self.vartheta,
            "dictionary": [list(e) for e in self.dictionary.entries],
            "alpha_lower": self.alpha_lower,
            "alpha_upper": self.alpha_upper,
            "rho_bound": self.rho_bound,
            "residual_report": None if self.residual_report is None else self.residual_report.to_dict(),
            "data_fingerprint": self.data_fingerprint,
            "solver": self.solver,
        }

    def to_json(self) -> str:
        # json emits repr(float): shortest round-trip decimal, i.e. full precision
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        P = np.array(d["P"], dtype=float)
        rep = d.get("residual_report")
        return cls(
            Theta=np.array(d["Theta"], dtype=float), P=P, Sigma=np.array(d["Sigma"], dtype=float),
            Y=PolyMatrix.from_dict(d["Y"]), K=PolyMatrix.from_dict(d["K"]),
            epsilon=float(d["epsilon"]), vartheta=float(d["vartheta"]),
            dictionary=MonomialDictionary.from_list(P.shape[0], d["dictionary"]),
            alpha_lower=float(d["alpha_lower"]), alpha_upper=float(d["alpha_upper"]),
            residual_report=None if rep is None else ConditionReport.from_dict(rep),
            data_fingerprint=d.get("data_fingerprint", ""), rho_bound=d.get("rho_bound"),
            solver=d.get("solver", {}))

    @classmethod
    def load(cls, path: str | Path) -> "Certificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def controller_evaluate(cert: Certificate, x, u_hat) -> np.ndarray:
    """u = K(x) x + u_hat."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u_hat = np.asarray(u_hat, dtype=float).reshape(-1)
    if x.size != cert.n:
        raise ValueError(f"state has length {x.size}, certificate expects {cert.n}")
    if u_hat.size != cert.m:
        raise ValueError(f"u_hat has length {u_hat.size}, certificate expects {cert.m}")
    return cert.K.evaluate(x) @ x + u_hat


def decay_lmi_max_eig(P: np.ndarray, Sigma: np.ndarray, epsilon: float, vartheta: float) -> float:
    """lambda_max(Sigma + Sigma^T + vartheta I + epsilon P^{-1})."""
    P = np.asarray(P, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    n = P.shape[0]
    M = Sigma + Sigma.T + vartheta * np.eye(n) + epsilon * np.linalg.inv(P)
    return float(np.linalg.eigvalsh((M + M.T) / 2)[-1])
