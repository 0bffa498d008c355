"""Ground-truth polynomial plants, excitation signals and data collection.

The plant is only used to *generate* data and to close the loop during
verification. Synthesis never sees :class:`PolySystem`.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .polyalg import DimensionMismatch, MonomialDictionary, evaluate_dictionary

InputSignal = Callable[[float], np.ndarray]
DerivativeSource = Literal["exact", "forward-difference"]


class NonfiniteState(RuntimeError):
    """The integrated state left the finite range."""

    def __init__(self, time: float, message: str | None = None):
        self.time = float(time)
        super().__init__(message or f"state became nonfinite at t={self.time:g}")


@dataclass(frozen=True)
class PolySystem:
    """x' = A F(x) + B u over the true dictionary F."""

    A: np.ndarray
    B: np.ndarray
    true_dict: MonomialDictionary

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = self.true_dict.n
        if A.shape != (n, self.true_dict.N):
            raise DimensionMismatch(f"A must be {n}x{self.true_dict.N}, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.true_dict.n

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def vector_field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ evaluate_dictionary(self.true_dict, x) + self.B @ np.asarray(u, dtype=float)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(),
                "dictionary": [list(e) for e in self.true_dict.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "PolySystem":
        A = np.array(data["A"], dtype=float)
        d = MonomialDictionary.from_list(A.shape[0], data["dictionary"])
        return cls(A, np.array(data["B"], dtype=float), d)


def spacecraft(J1: float = 200.0, J2: float = 200.0, J3: float = 300.0) -> PolySystem:
    """Rigid spacecraft angular velocity dynamics (Euler's equations).

    The true dictionary is ordered [x1 x2, x1 x3, x2 x3] by the graded-lex
    convention, so A is the anti-diagonal arrangement of the usual diagonal
    coefficients over [x2 x3, x1 x3, x1 x2].
    """
    d = MonomialDictionary.from_list(3, [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
    coeff = {(0, 1, 1): (0, (J2 - J3) / J1),
             (1, 0, 1): (1, (J3 - J1) / J2),
             (1, 1, 0): (2, (J1 - J2) / J3)}
    A = np.zeros((3, 3))
    for k, e in enumerate(d.entries):
        row, value = coeff[e]
        A[row, k] = value
    B = np.diag([1.0 / J1, 1.0 / J2, 1.0 / J3])
    return PolySystem(A, B, d)


def rk4(f: Callable[[float, np.ndarray], np.ndarray], x0, t0: float, step: float,
        n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4; returns states with shape (n_steps + 1, n)."""
    x = np.array(x0, dtype=float)
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    h = step
    for k in range(n_steps):
        t = t0 + k * h
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonfiniteState(t + h)
        out[k + 1] = x
    return out


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (K,)
    states: np.ndarray  # (n, K)
    inputs: np.ndarray  # (m, K)
    derivatives: np.ndarray  # (n, K), exact vector field at stored states


def _n_steps(horizon: float, step: float) -> int:
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < step * (1 - 1e-12):
        raise ValueError("horizon must be at least one step")
    k = int(round(horizon / step))
    if abs(k * step - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of step {step}")
    return k


def simulate(sys: PolySystem, u: InputSignal, x0, horizon: float, step: float,
             t0: float = 0.0) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sys.n:
        raise DimensionMismatch(f"x0 has length {x0.size}, system has n={sys.n}")
    k = _n_steps(horizon, step)
    states = rk4(lambda t, x: sys.vector_field(x, u(t)), x0, t0, step, k).T
    times = t0 + step * np.arange(k + 1)
    inputs = np.column_stack([np.asarray(u(t), dtype=float).reshape(sys.m) for t in times])
    derivs = sys.A @ evaluate_dictionary(sys.true_dict, states) + sys.B @ inputs
    return Trajectory(times, states, inputs, derivs)


@dataclass(frozen=True)
class ExcitationSpec:
    """Input used during data collection.

    ``multisine``: per channel, a sum of ``n_freqs`` sines with random phases
    and incommensurate frequencies in ``freq_range`` (rad/s), normalised so the
    channel magnitude never exceeds its amplitude.
    ``piecewise``: i.i.d. uniform values held for ``hold_period``.
    ``constant``: the fixed ``value`` vector (used for negative controls).
    """

    kind: Literal["multisine", "piecewise", "constant"] = "multisine"
    amplitude: float | tuple[float, ...] = 1.0
    n_freqs: int = 8
    freq_range: tuple[float, float] = (0.1, 5.0)
    hold_period: float = 0.5
    value: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        amps = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        if self.kind != "constant" and np.any(amps <= 0):
            raise ValueError("excitation amplitude must be positive")
        if self.kind not in ("multisine", "piecewise", "constant"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")

    def build(self, m: int, horizon: float) -> InputSignal:
        amps = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (m,)).copy()
        rng = np.random.default_rng(self.seed)
        if self.kind == "constant":
            value = np.zeros(m) if self.value is None else np.asarray(self.value, dtype=float)
            if value.shape != (m,):
                raise DimensionMismatch(f"constant input must have length {m}")
            return lambda t: value.copy()
        if self.kind == "multisine":
            lo, hi = self.freq_range
            freqs = rng.uniform(lo, hi, size=(m, self.n_freqs))
            phases = rng.uniform(0, 2 * np.pi, size=(m, self.n_freqs))
            scale = amps / self.n_freqs

            def u(t):
                return scale * np.sin(freqs * t + phases).sum(axis=1)
            return u
        n_holds = int(np.ceil(horizon / self.hold_period)) + 2
        values = rng.uniform(-1.0, 1.0, size=(n_holds, m)) * amps
        hold = self.hold_period

        def u(t):
            return values[min(int(t // hold), n_holds - 1)].copy()
        return u


@dataclass(frozen=True)
class DataBatch:
    U0: np.ndarray  # (m, T)
    X0: np.ndarray  # (n, T)
    X1: np.ndarray  # (n, T)
    tau: float
    t0: float = 0.0
    derivative_source: DerivativeSource = "exact"

    def __post_init__(self):
        T = self.U0.shape[1]
        if self.X0.shape[1] != T or self.X1.shape[1] != T:
            raise DimensionMismatch("U0, X0 and X1 must share the column count T")
        if self.X0.shape != self.X1.shape:
            raise DimensionMismatch("X0 and X1 must have the same shape")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def T(self) -> int:
        return self.U0.shape[1]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.T)


@dataclass(frozen=True)
class BatchPair:
    batch: DataBatch
    sibling: DataBatch
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.array_equal(self.batch.U0, self.sibling.U0):
            raise ValueError("both trajectories must be collected under the same input")
        if np.array_equal(self.batch.X0[:, 0], self.sibling.X0[:, 0]):
            raise ValueError("the two trajectories must start from distinct initial conditions")

    @property
    def U0(self) -> np.ndarray:
        return self.batch.U0

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for b in (self.batch, self.sibling):
            for arr in (b.U0, b.X0, b.X1):
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
                h.update(repr(arr.shape).encode())
            h.update(repr((float(b.tau), float(b.t0), b.derivative_source)).encode())
        return h.hexdigest()


def collect_pair(sys: PolySystem, exc: ExcitationSpec, x0, x0_tilde, T: int, tau: float,
                 source: DerivativeSource = "exact", substeps: int = 100,
                 t0: float = 0.0) -> BatchPair:
    """Sample two trajectories at t0 + k tau, k = 0..T-1, under one realized input."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if source not in ("exact", "forward-difference"):
        raise ValueError(f"unknown derivative source {source!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    x0_tilde = np.asarray(x0_tilde, dtype=float).reshape(-1)
    if np.array_equal(x0, x0_tilde):
        raise ValueError("identical initial conditions: x0 and x0_tilde must differ")
    n_samples = T + 1 if source == "forward-difference" else T
    horizon = max(n_samples - 1, 1) * tau
    u = exc.build(sys.m, t0 + horizon + tau)
    step = tau / substeps
    batches = []
    for start in (x0, x0_tilde):
        traj = simulate(sys, u, start, horizon, step, t0=t0)
        idx = np.arange(n_samples) * substeps
        X = traj.states[:, idx]
        U = traj.inputs[:, idx]
        if source == "exact":
            X1 = traj.derivatives[:, idx[:T]]
        else:
            X1 = (X[:, 1:T + 1] - X[:, :T]) / tau
        batches.append(DataBatch(U[:, :T].copy(), X[:, :T].copy(), X1.copy(), tau, t0, source))
    meta = {"tau": tau, "T": T, "t0": t0, "seed": exc.seed, "derivative_source": source,
            "excitation": exc.kind, "substeps": substeps, "scaling": "none"}
    return BatchPair(batches[0], batches[1], meta)


@dataclass(frozen=True)
class LiftedData:
    J0: np.ndarray
    rank: int
    singular_values: np.ndarray
    condition_number: float


def numeric_rank(M: np.ndarray, rtol: float | None = None) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(M, compute_uv=False) if M.size else np.zeros(0)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    if rtol is None:
        rtol = max(M.shape) * np.finfo(float).eps
    return int(np.sum(s > rtol * s[0])), s


def lift(batch: DataBatch, dictionary: MonomialDictionary, rtol: float | None = None) -> LiftedData:
    if dictionary.n != batch.n:
        raise DimensionMismatch(f"dictionary has n={dictionary.n}, batch has n={batch.n}")
    J0 = evaluate_dictionary(dictionary, batch.X0)
    rank, s = numeric_rank(J0, rtol)
    N = dictionary.N
    cond = float(s[0] / s[N - 1]) if s.size >= N and s[N - 1] > 0 else float("inf")
    return LiftedData(J0, rank, s, cond)


@dataclass(frozen=True)
class RichnessDiagnostics:
    rank_ok: bool
    ranks: tuple[int, int]
    condition_numbers: tuple[float, float]
    N: int
    T: int

    def to_dict(self) -> dict:
        return {"rank_ok": self.rank_ok, "ranks": list(self.ranks), "N": self.N, "T": self.T,
                "condition_numbers": [c if np.isfinite(c) else None for c in self.condition_numbers]}


def richness_check(pair: BatchPair, dictionary: MonomialDictionary,
                   rtol: float | None = None) -> RichnessDiagnostics:
    """Full-row-rank test of both lifted data matrices. Never raises on bad data."""
    a = lift(pair.batch, dictionary, rtol)
    b = lift(pair.sibling, dictionary, rtol)
    ok = a.rank == dictionary.N and b.rank == dictionary.N
    return RichnessDiagnostics(ok, (a.rank, b.rank), (a.condition_number, b.condition_number),
                               dictionary.N, pair.batch.T)


# -- bundle I/O -------------------------------------------------------------

def _write_batch_csv(path: Path, b: DataBatch) -> None:
    header = (["t"] + [f"u_{i + 1}" for i in range(b.m)] + [f"x_{i + 1}" for i in range(b.n)]
              + [f"xdot_{i + 1}" for i in range(b.n)])
    rows = np.vstack([b.times[None, :], b.U0, b.X0, b.X1]).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _read_batch_csv(path: Path, tau: float, t0: float, source: str) -> DataBatch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    m = sum(h.startswith("u_") for h in header)
    n = sum(h.startswith("x_") for h in header)
    data = data.reshape(-1, 1 + m + 2 * n)
    U0 = data[:, 1:1 + m].T.copy()
    X0 = data[:, 1 + m:1 + m + n].T.copy()
    X1 = data[:, 1 + m + n:].T.copy()
    return DataBatch(U0, X0, X1, tau, t0, source)


def save_bundle(pair: BatchPair, directory: str | Path, force: bool = False) -> Path:
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        if (directory / "meta.json").exists():
            raise FileExistsError(f"{directory} already holds a bundle; pass force=True to overwrite")
    directory.mkdir(parents=True, exist_ok=True)
    _write_batch_csv(directory / "batch.csv", pair.batch)
    _write_batch_csv(directory / "sibling.csv", pair.sibling)
    meta = dict(pair.meta)
    meta.update({"tau": pair.batch.tau, "T": pair.batch.T, "t0": pair.batch.t0,
                 "derivative_source": pair.batch.derivative_source,
                 "fingerprint": pair.fingerprint()})
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_bundle(directory: str | Path) -> BatchPair:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    args = (float(meta["tau"]), float(meta.get("t0", 0.0)), meta.get("derivative_source", "exact"))
    pair = BatchPair(_read_batch_csv(directory / "batch.csv", *args),
                     _read_batch_csv(directory / "sibling.csv", *args), meta)
    stored = meta.get("fingerprint")
    if stored is not None and stored != pair.fingerprint():
        raise ValueError(f"{directory}: data do not match the fingerprint in meta.json")
    return pair


def export_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    b = DataBatch(traj.inputs, traj.states, traj.derivatives,
                  float(traj.times[1] - traj.times[0]) if traj.times.size > 1 else 1.0,
                  float(traj.times[0]))
    _write_batch_csv(Path(path), b)


def initial_pair(rng: np.random.Generator, n: int, box: float = 1.0,
                 split: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Two distinct random initial states in [-box, box]^n.

    With ``split`` the first lies in [0, box]^n and the second in [-box, 0)^n.
    """
    if split:
        return rng.uniform(0, box, n), -rng.uniform(0, box, n) - 1e-12
    while True:
        a, b = rng.uniform(-box, box, n), rng.uniform(-box, box, n)
        if not np.array_equal(a, b):
            return a, b
