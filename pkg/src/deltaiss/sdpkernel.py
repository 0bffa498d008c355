"""Structured semidefinite feasibility problems.

A problem holds symmetric and free matrix variables, linear equalities over
their entries, affine symmetric LMI blocks required to be negative
semidefinite, and PSD floors ``X >= delta I``.

Solving goes through :func:`presolve_eliminate`, which removes every unknown
that appears only in equalities (an SVD per connected component of the
equality graph), leaving a small conic problem over the LMI-relevant unknowns.
That problem is handed to cvxpy. :func:`check_solution` recomputes every
residual from the raw problem data and never looks at solver output beyond
the assignment.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .polyalg import DimensionMismatch

log = logging.getLogger(__name__)


class SdpError(Exception):
    pass


class DuplicateName(SdpError):
    pass


class UndeclaredVariable(SdpError):
    pass


class InconsistentEqualities(SdpError):
    def __init__(self, message: str, worst_row: int, residual: float):
        super().__init__(message)
        self.worst_row = worst_row
        self.residual = residual


class MissingAssignment(SdpError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # "symmetric" | "free"
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        if self.kind == "symmetric":
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def index(self, i: int, j: int) -> int:
        """Global unknown index of entry (i, j)."""
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise DimensionMismatch(f"entry ({i}, {j}) outside {self.name} of shape "
                                    f"{self.rows}x{self.cols}")
        if self.kind == "symmetric":
            i, j = min(i, j), max(i, j)
            d = self.rows
            return self.offset + i * d - i * (i - 1) // 2 + (j - i)
        return self.offset + i * self.cols + j

    def selection(self) -> sp.csr_matrix:
        """Map from local unknowns to the row-major entries of the full matrix."""
        rows, cols = [], []
        for i in range(self.rows):
            for j in range(self.cols):
                rows.append(i * self.cols + j)
                cols.append(self.index(i, j) - self.offset)
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(self.rows * self.cols, self.size))

    def unpack(self, x: np.ndarray) -> np.ndarray:
        local = x[self.offset:self.offset + self.size]
        return (self.selection() @ local).reshape(self.rows, self.cols)

    def pack(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        out = np.empty(self.size)
        for i in range(self.rows):
            for j in range(i if self.kind == "symmetric" else 0, self.cols):
                out[self.index(i, j) - self.offset] = M[i, j]
        return out


@dataclass
class EqualityBlock:
    name: str
    coef: sp.csr_matrix  # columns: global unknowns known at creation time
    rhs: np.ndarray


@dataclass
class LmiBlock:
    name: str
    constant: np.ndarray
    coefs: dict[int, np.ndarray]  # global unknown index -> symmetric matrix
    margin: bool = True

    @property
    def dim(self) -> int:
        return self.constant.shape[0]


@dataclass
class PsdFloor:
    variable: str
    delta: float


class SdpProblem:
    """Builder for feasibility problems; constraint order carries no meaning."""

    def __init__(self):
        self.variables: dict[str, Variable] = {}
        self.equalities: list[EqualityBlock] = []
        self.lmis: list[LmiBlock] = []
        self.floors: list[PsdFloor] = []
        self.regularizers: dict[str, float] = {}
        self.n_unknowns = 0

    # -- declarations ------------------------------------------------------
    def _declare(self, name: str, kind: str, rows: int, cols: int) -> Variable:
        if name in self.variables:
            raise DuplicateName(f"variable {name!r} already declared")
        if rows < 1 or cols < 1:
            raise DimensionMismatch("variable dimensions must be positive")
        v = Variable(name, kind, rows, cols, self.n_unknowns)
        self.variables[name] = v
        self.n_unknowns += v.size
        return v

    def declare_symmetric(self, name: str, d: int) -> Variable:
        return self._declare(name, "symmetric", d, d)

    def declare_free(self, name: str, rows: int, cols: int) -> Variable:
        return self._declare(name, "free", rows, cols)

    def var(self, name: str) -> Variable:
        try:
            return self.variables[name]
        except KeyError:
            raise UndeclaredVariable(f"reference to undeclared variable {name!r}") from None

    # -- constraints -------------------------------------------------------
    def add_equality(self, terms: Sequence[tuple[str, int, int, float]], rhs: float,
                     name: str = "") -> None:
        """Scalar equality ``sum coef * var[i, j] = rhs`` given as triplets."""
        row = np.zeros(self.n_unknowns)
        for vname, i, j, c in terms:
            row[self.var(vname).index(i, j)] += c
        self.equalities.append(EqualityBlock(name or f"eq{len(self.equalities)}",
                                             sp.csr_matrix(row), np.array([float(rhs)])))

    def add_matrix_equality(self, terms: Sequence[tuple], rhs, name: str = "") -> None:
        """Matrix equality ``sum_k L_k X_k R_k = rhs``.

        Each term is ``(L, name, R)``; ``None`` for L or R means identity.
        """
        rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
        coef = sp.csr_matrix((rhs.size, self.n_unknowns))
        for L, vname, R in terms:
            v = self.var(vname)
            L = sp.identity(v.rows, format="csr") if L is None else sp.csr_matrix(np.atleast_2d(L))
            R = sp.identity(v.cols, format="csr") if R is None else sp.csr_matrix(np.atleast_2d(R))
            if L.shape[1] != v.rows or R.shape[0] != v.cols:
                raise DimensionMismatch(
                    f"term L{L.shape} {vname}({v.rows}x{v.cols}) R{R.shape} is not conformable")
            if (L.shape[0], R.shape[1]) != rhs.shape:
                raise DimensionMismatch(
                    f"term for {vname} has shape {(L.shape[0], R.shape[1])}, rhs has {rhs.shape}")
            # row-major vec(L X R) = (L kron R^T) vec(X)
            local = sp.kron(L, R.T, format="csr") @ v.selection()
            block = sp.csr_matrix((local.data, local.indices + v.offset, local.indptr),
                                  shape=(rhs.size, self.n_unknowns))
            coef = coef + block
        self.equalities.append(EqualityBlock(name or f"eq{len(self.equalities)}",
                                             coef.tocsr(), rhs.reshape(-1)))

    def add_lmi(self, constant, terms: Sequence[tuple] = (), name: str = "",
                margin: bool = True) -> None:
        """Require ``constant + sum_k term_k <= 0`` (negative semidefinite).

        Each term is ``(L, name, R)`` or ``(L, name, R, transpose)`` and
        contributes ``L X R`` (transposed when requested).
        """
        C = np.atleast_2d(np.asarray(constant, dtype=float))
        d = C.shape[0]
        if C.shape != (d, d):
            raise DimensionMismatch(f"LMI constant must be square, got {C.shape}")
        coefs: dict[int, np.ndarray] = {}
        for term in terms:
            L, vname, R = term[:3]
            transpose = bool(term[3]) if len(term) > 3 else False
            v = self.var(vname)
            L = np.eye(v.rows) if L is None else np.atleast_2d(np.asarray(L, dtype=float))
            R = np.eye(v.cols) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
            if L.shape[1] != v.rows or R.shape[0] != v.cols:
                raise DimensionMismatch(f"LMI term for {vname} is not conformable")
            out_shape = (R.shape[1], L.shape[0]) if transpose else (L.shape[0], R.shape[1])
            if out_shape != (d, d):
                raise DimensionMismatch(
                    f"LMI term for {vname} has shape {out_shape}, block is {d}x{d}")
            for i in range(v.rows):
                for j in range(i if v.kind == "symmetric" else 0, v.cols):
                    E = np.zeros((v.rows, v.cols))
                    E[i, j] = 1.0
                    if v.kind == "symmetric":
                        E[j, i] = 1.0
                    M = L @ E @ R
                    if transpose:
                        M = M.T
                    k = v.index(i, j)
                    coefs[k] = coefs[k] + M if k in coefs else M
        if not np.allclose(C, C.T, atol=1e-12) or any(
                not np.allclose(M, M.T, atol=1e-12) for M in coefs.values()):
            raise SdpError(f"LMI block {name or len(self.lmis)} is not symmetric")
        coefs = {k: (M + M.T) / 2 for k, M in coefs.items() if np.any(M != 0)}
        self.lmis.append(LmiBlock(name or f"lmi{len(self.lmis)}", (C + C.T) / 2, coefs, margin))

    def add_norm_bound(self, vname: str, bound: float, name: str = "") -> None:
        """Spectral-norm cap ``||X|| <= bound`` as the LMI [[-bI, X], [X^T, -bI]] <= 0."""
        v = self.var(vname)
        r, c = v.rows, v.cols
        C = -bound * np.eye(r + c)
        L = np.vstack([np.eye(r), np.zeros((c, r))])
        R = np.hstack([np.zeros((c, r)), np.eye(c)])
        self.add_lmi(C, [(L, vname, R), (L, vname, R, True)],
                     name=name or f"norm({vname})", margin=False)

    def add_psd_floor(self, vname: str, delta: float) -> None:
        v = self.var(vname)
        if v.kind != "symmetric":
            raise SdpError(f"PSD floor needs a symmetric variable, {vname!r} is free")
        if delta < 0:
            raise ValueError("floor margin must be non-negative")
        self.floors.append(PsdFloor(vname, float(delta)))

    def add_regularizer(self, vname: str, weight: float = 1.0) -> None:
        """Prefer small Frobenius norm of ``vname`` among margin-preserving points."""
        self.var(vname)
        self.regularizers[vname] = float(weight)

    # -- assembled views ---------------------------------------------------
    def equality_matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        if not self.equalities:
            return sp.csr_matrix((0, self.n_unknowns)), np.zeros(0)
        blocks = []
        for e in self.equalities:
            c = e.coef.tocsr().copy()
            c.resize((c.shape[0], self.n_unknowns))
            blocks.append(c)
        return sp.vstack(blocks, format="csr"), np.concatenate([e.rhs for e in self.equalities])

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        inv = {}
        for v in self.variables.values():
            for i in range(v.rows):
                for j in range(i if v.kind == "symmetric" else 0, v.cols):
                    inv[v.index(i, j)] = (v.name, i, j)
        eqs = []
        for e in self.equalities:
            c = e.coef.tocsr()
            for r in range(c.shape[0]):
                lo, hi = c.indptr[r], c.indptr[r + 1]
                eqs.append({"block": e.name,
                            "terms": [{"variable": inv[int(k)][0], "entry": list(inv[int(k)][1:]),
                                       "coefficient": float(val)}
                                      for k, val in zip(c.indices[lo:hi], c.data[lo:hi])],
                            "rhs": float(e.rhs[r])})
        lmis = []
        for b in self.lmis:
            terms = []
            for k, M in b.coefs.items():
                rr, cc = np.nonzero(M)
                terms.append({"variable": inv[k][0], "entry": list(inv[k][1:]),
                              "triplets": [[int(a), int(c), float(M[a, c])] for a, c in zip(rr, cc)]})
            lmis.append({"name": b.name, "constant": b.constant.tolist(), "margin": b.margin,
                         "terms": terms})
        return {
            "variables": [{"name": v.name, "kind": v.kind, "rows": v.rows, "cols": v.cols}
                          for v in self.variables.values()],
            "equalities": eqs,
            "lmis": lmis,
            "floors": [{"variable": f.variable, "delta": f.delta} for f in self.floors],
            "regularizers": self.regularizers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SdpProblem":
        p = cls()
        for v in data["variables"]:
            if v["kind"] == "symmetric":
                p.declare_symmetric(v["name"], v["rows"])
            else:
                p.declare_free(v["name"], v["rows"], v["cols"])
        by_block: dict[str, list] = {}
        for e in data["equalities"]:
            by_block.setdefault(e["block"], []).append(e)
        for bname, rows in by_block.items():
            mat = sp.lil_matrix((len(rows), p.n_unknowns))
            for r, e in enumerate(rows):
                for t in e["terms"]:
                    i, j = t["entry"]
                    mat[r, p.var(t["variable"]).index(i, j)] += t["coefficient"]
            p.equalities.append(EqualityBlock(bname, mat.tocsr(),
                                              np.array([e["rhs"] for e in rows], dtype=float)))
        for b in data["lmis"]:
            C = np.array(b["constant"], dtype=float)
            coefs = {}
            for t in b["terms"]:
                M = np.zeros_like(C)
                for a, c, val in t["triplets"]:
                    M[a, c] = val
                i, j = t["entry"]
                coefs[p.var(t["variable"]).index(i, j)] = M
            p.lmis.append(LmiBlock(b["name"], C, coefs, b.get("margin", True)))
        for f in data["floors"]:
            p.add_psd_floor(f["variable"], f["delta"])
        for vname, w in data.get("regularizers", {}).items():
            p.add_regularizer(vname, w)
        return p

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        return cls.from_dict(json.loads(text))


# -- presolve ----------------------------------------------------------------

@dataclass
class _Component:
    aux: np.ndarray  # global unknown indices
    pinv: np.ndarray  # (len(aux), len(rows))
    Ec: np.ndarray  # (len(rows), n_core)
    b: np.ndarray


@dataclass
class ReducedProblem:
    """Problem over ``z`` where core unknowns are ``x_core = x_particular + basis @ z``."""

    problem: SdpProblem
    core: np.ndarray
    x_particular: np.ndarray
    basis: np.ndarray
    components: list[_Component]
    lmi_constants: list[np.ndarray]
    lmi_coefs: list[np.ndarray]  # each (k, d, d)
    floor_constants: list[np.ndarray]
    floor_coefs: list[np.ndarray]
    aux_nullity: int
    stats: dict = field(default_factory=dict)

    @property
    def n_reduced(self) -> int:
        return self.basis.shape[1]

    def recover(self, z: np.ndarray) -> np.ndarray:
        """Full unknown vector from reduced coordinates (aux nullspace set to zero)."""
        x = np.zeros(self.problem.n_unknowns)
        xc = self.x_particular + self.basis @ z
        x[self.core] = xc
        for comp in self.components:
            x[comp.aux] = comp.pinv @ (comp.b - comp.Ec @ xc)
        return x

    def assignment(self, z: np.ndarray) -> dict[str, np.ndarray]:
        x = self.recover(z)
        return {name: v.unpack(x) for name, v in self.problem.variables.items()}


def _var_matrices(v: Variable, core_pos: dict[int, int], n_core: int) -> list[np.ndarray]:
    """Matrices M_c with X = sum_c x_core[c] M_c, for a variable entirely in the core."""
    mats = [np.zeros((v.rows, v.cols)) for _ in range(n_core)]
    for i in range(v.rows):
        for j in range(v.cols):
            mats[core_pos[v.index(i, j)]][i, j] = 1.0
    return mats


def presolve_eliminate(problem: SdpProblem, rank_tol: float = 1e-9,
                       consistency_tol: float = 1e-8) -> ReducedProblem:
    """Eliminate equality-pinned unknowns.

    Unknowns that appear in an LMI, a floor or a regularizer form the *core*;
    all others are auxiliary. Auxiliary unknowns are solved component by
    component (minimum-norm particular solution); the left nullspace of each
    component's auxiliary block yields equalities on the core, whose own
    nullspace parametrises the reduced problem. Rank-deficiency is absorbed
    by the parametrisation; only an inconsistent system raises.
    """
    n = problem.n_unknowns
    core_mask = np.zeros(n, dtype=bool)
    for b in problem.lmis:
        core_mask[list(b.coefs)] = True
    for name in [f.variable for f in problem.floors] + list(problem.regularizers):
        v = problem.var(name)
        core_mask[v.offset:v.offset + v.size] = True
    core = np.flatnonzero(core_mask)
    aux = np.flatnonzero(~core_mask)
    n_core = core.size

    E, b = problem.equality_matrix()
    E = E.tocsr()
    norms = np.sqrt(np.asarray(E.multiply(E).sum(axis=1)).ravel())
    zero_rows = norms == 0
    if np.any(zero_rows & (np.abs(b) > consistency_tol)):
        r = int(np.flatnonzero(zero_rows & (np.abs(b) > consistency_tol))[0])
        raise InconsistentEqualities(f"equality row {r} reads 0 = {b[r]:g}", r, abs(b[r]))
    keep = np.flatnonzero(~zero_rows)
    scale = sp.diags(1.0 / norms[keep])
    E = (scale @ E[keep]).tocsr()
    b = b[keep] / norms[keep]
    row_ids = keep

    Ec_all = E[:, core].toarray() if n_core else np.zeros((E.shape[0], 0))
    Ea = E[:, aux].tocsc()

    core_rows_A = []
    core_rows_b = []
    core_row_origin = []
    components: list[_Component] = []
    aux_nullity = 0

    has_aux = np.asarray((abs(Ea) > 0).sum(axis=1)).ravel() > 0
    pure = np.flatnonzero(~has_aux)
    if pure.size:
        core_rows_A.append(Ec_all[pure])
        core_rows_b.append(b[pure])
        core_row_origin.extend(row_ids[pure].tolist())

    if aux.size:
        # bipartite graph rows <-> aux columns; components couple rows sharing unknowns
        m_rows = E.shape[0]
        B = (abs(Ea) > 0).astype(float).tocsr()
        adj = sp.bmat([[None, B], [B.T, None]], format="csr")
        n_comp, labels = connected_components(adj, directed=False)
        row_lab = labels[:m_rows]
        col_lab = labels[m_rows:]
        order_r = np.argsort(row_lab, kind="stable")
        order_c = np.argsort(col_lab, kind="stable")
        r_bounds = np.searchsorted(row_lab[order_r], np.arange(n_comp + 1))
        c_bounds = np.searchsorted(col_lab[order_c], np.arange(n_comp + 1))
        Ea_csr = Ea.tocsr()
        for c in range(n_comp):
            rows = order_r[r_bounds[c]:r_bounds[c + 1]]
            cols = order_c[c_bounds[c]:c_bounds[c + 1]]
            if cols.size == 0:
                continue
            if rows.size == 0:
                aux_nullity += cols.size
                continue
            A_blk = Ea_csr[rows][:, cols].toarray()
            U, s, Vt = np.linalg.svd(A_blk, full_matrices=True)
            r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
            aux_nullity += cols.size - r
            pinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
            components.append(_Component(aux[cols], pinv, Ec_all[rows], b[rows]))
            W = U[:, r:]
            if W.shape[1]:
                core_rows_A.append(W.T @ Ec_all[rows])
                core_rows_b.append(W.T @ b[rows])
                core_row_origin.extend([int(row_ids[rows[np.argmax(np.abs(w))]]) for w in W.T])

    if core_rows_A:
        Ac = np.vstack(core_rows_A)
        bc = np.concatenate(core_rows_b)
    else:
        Ac = np.zeros((0, n_core))
        bc = np.zeros(0)

    if Ac.shape[0] and n_core:
        U, s, Vt = np.linalg.svd(Ac, full_matrices=True)
        r = int(np.sum(s > rank_tol * max(1.0, s[0]))) if s.size else 0
        x_p = (Vt[:r].T / s[:r]) @ (U[:, :r].T @ bc)
        basis = Vt[r:].T
    else:
        x_p = np.zeros(n_core)
        basis = np.eye(n_core)
    if Ac.shape[0]:
        resid = Ac @ x_p - bc
        worst = int(np.argmax(np.abs(resid)))
        if abs(resid[worst]) > consistency_tol * max(1.0, np.max(np.abs(bc), initial=0.0)):
            raise InconsistentEqualities(
                f"equalities are inconsistent (residual {abs(resid[worst]):.3g} near row "
                f"{core_row_origin[worst]})", core_row_origin[worst], float(abs(resid[worst])))

    core_pos = {int(g): k for k, g in enumerate(core)}
    lmi_c, lmi_g = [], []
    for blk in problem.lmis:
        d = blk.dim
        F = np.zeros((n_core, d, d))
        for k, M in blk.coefs.items():
            F[core_pos[k]] = M
        lmi_c.append(blk.constant + np.tensordot(x_p, F, axes=1))
        lmi_g.append(np.tensordot(basis.T, F, axes=1))
    fl_c, fl_g = [], []
    for f in problem.floors:
        mats = np.array(_var_matrices(problem.var(f.variable), core_pos, n_core))
        fl_c.append(np.tensordot(x_p, mats, axes=1))
        fl_g.append(np.tensordot(basis.T, mats, axes=1))

    stats = {"n_unknowns": n, "n_core": int(n_core), "n_aux": int(aux.size),
             "n_components": len(components), "core_constraints": int(Ac.shape[0]),
             "n_reduced": int(basis.shape[1]), "aux_nullity": int(aux_nullity)}
    return ReducedProblem(problem, core, x_p, basis, components, lmi_c, lmi_g, fl_c, fl_g,
                          aux_nullity, stats)


# -- solve -------------------------------------------------------------------

@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 500
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    margin_cap: float = 1.0
    keep_fraction: float = 0.9
    rank_tol: float = 1e-9
    solver: str = "CLARABEL"


@dataclass
class SdpSolution:
    assignment: dict[str, np.ndarray]
    status: str  # "feasible" | "infeasible" | "numerical-failure"
    margin: float = float("nan")
    solver_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"status": self.status,
                "margin": None if not np.isfinite(self.margin) else self.margin,
                "assignment": {k: v.tolist() for k, v in self.assignment.items()},
                "solver_stats": self.solver_stats}

    @classmethod
    def from_dict(cls, data: dict) -> "SdpSolution":
        m = data.get("margin")
        return cls({k: np.array(v, dtype=float) for k, v in data["assignment"].items()},
                   data["status"], float("nan") if m is None else float(m),
                   data.get("solver_stats", {}))


def _sym(expr):
    return (expr + expr.T) / 2


def _affine(cp, const: np.ndarray, coefs: np.ndarray, z):
    expr = cp.Constant(const)
    for j in range(coefs.shape[0]):
        if np.any(coefs[j]):
            expr = expr + z[j] * coefs[j]
    return expr


def _max_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((M + M.T) / 2)[-1])


def _run(cp, prob, opts: SolveOptions) -> str:
    solvers = [opts.solver] + [s for s in ("CLARABEL", "SCS") if s != opts.solver]
    last = None
    for s in solvers:
        if s not in cp.installed_solvers():
            continue
        try:
            kwargs = {"max_iter": opts.max_iter} if s in ("CLARABEL", "SCS") else {}
            prob.solve(solver=s, **kwargs)
            last = s
            if prob.status in ("optimal", "optimal_inaccurate", "infeasible", "unbounded"):
                return s
        except Exception as exc:  # solver crash: try the next backend
            log.debug("solver %s failed: %s", s, exc)
    return last or "none"


def solve(problem: SdpProblem, opts: SolveOptions | None = None) -> SdpSolution:
    """Find a feasible point, pushing margin-enabled LMIs to ``<= -t I``.

    Phase one maximises ``t`` (capped at ``margin_cap``); the problem is
    declared feasible when ``t* > 0``. If regularizers are present a second
    phase minimises their weighted squared Frobenius norm while keeping
    ``t >= keep_fraction * t*``.
    """
    import cvxpy as cp

    opts = opts or SolveOptions()
    try:
        red = presolve_eliminate(problem, opts.rank_tol)
    except InconsistentEqualities as exc:
        return SdpSolution({}, "infeasible", float("-inf"),
                           {"reason": str(exc), "worst_row": exc.worst_row})
    stats = dict(red.stats)
    k = red.n_reduced

    def evaluate(z):
        lmi_max = [_max_eig(c + np.tensordot(z, g, axes=1)) for c, g in zip(red.lmi_constants, red.lmi_coefs)]
        floor_min = [float(np.linalg.eigvalsh(c + np.tensordot(z, g, axes=1))[0]) - f.delta
                     for c, g, f in zip(red.floor_constants, red.floor_coefs, problem.floors)]
        return lmi_max, floor_min

    def margin_of(z):
        lmi_max, floor_min = evaluate(z)
        margin_lmis = [-v for v, b in zip(lmi_max, problem.lmis) if b.margin]
        hard = [-v for v, b in zip(lmi_max, problem.lmis) if not b.margin] + floor_min
        t = min(margin_lmis, default=opts.margin_cap)
        return t, min(hard, default=0.0)

    if k == 0:
        z = np.zeros(0)
        t, hard = margin_of(z)
        status = "feasible" if t > 0 and hard >= -opts.tol_feas else "infeasible"
        return SdpSolution(red.assignment(z), status, t, stats)

    z = cp.Variable(k)
    t = cp.Variable()
    cons = []
    for blk, c, g in zip(problem.lmis, red.lmi_constants, red.lmi_coefs):
        expr = _sym(_affine(cp, c, g, z))
        if blk.margin:
            cons.append(-expr - t * np.eye(blk.dim) >> 0)
        else:
            cons.append(-expr >> 0)
    for f, c, g in zip(problem.floors, red.floor_constants, red.floor_coefs):
        d = c.shape[0]
        cons.append(_sym(_affine(cp, c, g, z)) - f.delta * np.eye(d) >> 0)
    cons.append(t <= opts.margin_cap)
    phase1 = cp.Problem(cp.Maximize(t), cons)
    used = _run(cp, phase1, opts)
    stats.update({"solver": used, "phase1_status": phase1.status,
                  "phase1_iterations": phase1.solver_stats.num_iters if phase1.solver_stats else None})

    if phase1.status in ("infeasible", "infeasible_inaccurate"):
        return SdpSolution({}, "infeasible", float("-inf"), stats)
    if z.value is None:
        return SdpSolution({}, "numerical-failure", float("nan"), stats)

    z1 = np.array(z.value, dtype=float)
    t1, hard1 = margin_of(z1)
    stats["phase1_margin"] = t1
    if t1 <= 0:
        lmi_max, _ = evaluate(z1)
        worst = int(np.argmax(lmi_max)) if lmi_max else -1
        stats["most_violated"] = problem.lmis[worst].name if worst >= 0 else None
        return SdpSolution(red.assignment(z1), "infeasible", t1, stats)

    z_best = z1
    if problem.regularizers:
        t_keep = opts.keep_fraction * min(t1, opts.margin_cap)
        cons2 = []
        for blk, c, g in zip(problem.lmis, red.lmi_constants, red.lmi_coefs):
            expr = _sym(_affine(cp, c, g, z))
            shift = t_keep if blk.margin else 0.0
            cons2.append(-expr - shift * np.eye(blk.dim) >> 0)
        for f, c, g in zip(problem.floors, red.floor_constants, red.floor_coefs):
            cons2.append(_sym(_affine(cp, c, g, z)) - f.delta * np.eye(c.shape[0]) >> 0)
        core_pos = {int(gi): kk for kk, gi in enumerate(red.core)}
        obj = 0
        for vname, w in problem.regularizers.items():
            v = problem.var(vname)
            idx = [core_pos[v.index(i, j)] for i in range(v.rows) for j in range(v.cols)]
            entries = red.x_particular[idx] + red.basis[idx] @ z
            obj = obj + w * cp.sum_squares(entries)
        phase2 = cp.Problem(cp.Minimize(obj), cons2)
        _run(cp, phase2, opts)
        stats["phase2_status"] = phase2.status
        if z.value is not None and phase2.status in ("optimal", "optimal_inaccurate"):
            z2 = np.array(z.value, dtype=float)
            t2, hard2 = margin_of(z2)
            if t2 > 0 and hard2 >= -opts.tol_feas:
                z_best = z2
    t_final, hard_final = margin_of(z_best)
    stats["margin"] = t_final
    if hard_final < -opts.tol_feas:
        return SdpSolution(red.assignment(z_best), "numerical-failure", t_final, stats)
    assignment = red.assignment(z_best)
    for name, v in problem.variables.items():
        if v.kind == "symmetric":
            assignment[name] = (assignment[name] + assignment[name].T) / 2
    return SdpSolution(assignment, "feasible", t_final, stats)


# -- independent verification -------------------------------------------------

@dataclass
class ResidualReport:
    equalities: dict[str, float]
    lmis: dict[str, float]
    floors: dict[str, float]
    asymmetry: dict[str, float]
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"equalities": self.equalities, "lmis": self.lmis, "floors": self.floors,
                "asymmetry": self.asymmetry, "tol": self.tol, "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_solution(problem: SdpProblem, solution: SdpSolution, tol: float = 1e-6) -> ResidualReport:
    """Recompute all residuals from the problem data and the raw assignment."""
    x = np.zeros(problem.n_unknowns)
    asym = {}
    for name, v in problem.variables.items():
        if name not in solution.assignment:
            raise MissingAssignment(f"no value assigned to {name!r}")
        M = np.asarray(solution.assignment[name], dtype=float)
        if M.shape != (v.rows, v.cols):
            raise DimensionMismatch(f"{name} assigned shape {M.shape}, declared {(v.rows, v.cols)}")
        if v.kind == "symmetric":
            asym[name] = float(np.max(np.abs(M - M.T), initial=0.0))
        x[v.offset:v.offset + v.size] = v.pack(M)
    eq = {}
    for blk in problem.equalities:
        c = blk.coef.tocsr().copy()
        c.resize((c.shape[0], problem.n_unknowns))
        r = float(np.max(np.abs(c @ x - blk.rhs), initial=0.0))
        eq[blk.name] = max(eq.get(blk.name, 0.0), r)
    lm = {}
    for blk in problem.lmis:
        M = blk.constant.copy()
        for k, F in blk.coefs.items():
            M = M + x[k] * F
        lm[blk.name] = _max_eig(M)
    fl = {}
    for f in problem.floors:
        M = np.asarray(solution.assignment[f.variable], dtype=float)
        fl[f.variable] = float(np.linalg.eigvalsh((M + M.T) / 2)[0])
    passed = (all(r <= tol for r in eq.values()) and all(r <= tol for r in lm.values())
              and all(fl[f.variable] >= f.delta - tol for f in problem.floors)
              and all(a <= tol for a in asym.values()))
    return ResidualReport(eq, lm, fl, asym, tol, passed)
