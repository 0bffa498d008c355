"""Shared builders for tests: random polynomial plants and a data-to-identity check."""

from __future__ import annotations

import numpy as np

from deltaiss.plant import ExcitationSpec, NonfiniteState, PolySystem, collect_pair
from deltaiss.polyalg import MonomialDictionary, PolyMatrix, enumerate_monomials, poly_multiply


def random_plant(rng: np.random.Generator):
    """A fully or nearly actuated plant whose nonlinearity lies in range(B).

    Returns (plant, synthesis dictionary). With n = 3 only two inputs are
    available; the third state is then a stable linear mode driven by x1.
    Without that coupling its samples on the two trajectories would be
    proportional and no shared Y could match both lifts.
    """
    n = int(rng.integers(1, 4))
    m = min(n, 2)
    d = int(rng.integers(1, 4))
    dictionary = enumerate_monomials(n, 1, d)
    A = np.zeros((n, dictionary.N))
    for k, e in enumerate(dictionary.entries):
        if rng.random() < 0.6:
            A[:m, k] = rng.uniform(-0.5, 0.5, m)
    # cubic terms can escape in finite time; damp the actuated states
    for i in range(m):
        e = tuple(int(j == i) for j in range(n))
        A[i, dictionary.entries.index(e)] = -1.0
    if n > m:
        A[m:, :] = 0.0
        A[m, dictionary.entries.index((0,) * (n - 1) + (1,))] = -1.0
        A[m, dictionary.entries.index((1,) + (0,) * (n - 1))] = 1.0
    B = np.zeros((n, m))
    B[:m, :m] = np.diag(rng.uniform(0.5, 2.0, m))
    return PolySystem(A, B, dictionary), dictionary


def random_pair(plant: PolySystem, dictionary: MonomialDictionary, rng: np.random.Generator,
                tau: float = 0.1):
    T = 3 * (dictionary.N + plant.n) + 20
    for _ in range(20):
        x0 = rng.uniform(-1.0, 1.0, plant.n)
        xt0 = rng.uniform(-1.0, 1.0, plant.n)
        exc = ExcitationSpec(kind="piecewise", amplitude=1.5, hold_period=0.3,
                             seed=int(rng.integers(1 << 30)))
        try:
            return collect_pair(plant, exc, x0, xt0, T, tau, substeps=20)
        except NonfiniteState:
            continue
    raise RuntimeError("could not collect a bounded data pair")


def padded_A(plant: PolySystem, dictionary: MonomialDictionary) -> np.ndarray:
    """Express the plant's A over a (super)dictionary."""
    A = np.zeros((plant.n, dictionary.N))
    for k, e in enumerate(plant.true_dict.entries):
        A[:, dictionary.entries.index(e)] = plant.A[:, k]
    return A


def data_identity_residual(plant: PolySystem, cert, pair) -> float:
    """max coefficient gap between A F(x) + B U0 G(x) x and X1 G(x) x, with G = Y P."""
    from deltaiss.polyalg import poly_residual

    n = plant.n
    d = cert.dictionary
    x = PolyMatrix.state_vector(n)
    G = poly_multiply(cert.Y, PolyMatrix.constant(n, cert.P))
    Gx = poly_multiply(G, x)
    F = PolyMatrix.from_dictionary(d)
    lhs = (poly_multiply(PolyMatrix.constant(n, padded_A(plant, d)), F)
           + poly_multiply(PolyMatrix.constant(n, plant.B @ pair.U0), Gx))
    rhs = poly_multiply(PolyMatrix.constant(n, pair.batch.X1), Gx)
    return poly_residual(lhs, rhs)
