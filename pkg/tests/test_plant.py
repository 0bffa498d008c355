import json

import numpy as np
import pytest

from deltaiss.plant import (BatchPair, ExcitationSpec, NonfiniteState, PolySystem, collect_pair,
                            initial_pair, lift, load_bundle, numeric_rank, richness_check, rk4,
                            save_bundle, simulate, spacecraft)
from deltaiss.polyalg import DimensionMismatch, MonomialDictionary, evaluate_dictionary


def linear_decay():
    return PolySystem([[-1.0]], [[1.0]], MonomialDictionary.from_list(1, [(1,)]))


def rk4_error(h):
    out = rk4(lambda t, x: -x, [1.0], 0.0, h, int(round(1.0 / h)))
    return abs(out[-1, 0] - np.exp(-1.0))


def test_rk4_fourth_order():
    ratio = rk4_error(0.1) / rk4_error(0.05)
    assert ratio >= 8.0
    assert 14.0 < ratio < 18.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rk4_raises_on_blowup():
    with pytest.raises(NonfiniteState) as info:
        rk4(lambda t, x: x ** 2, [1.0], 0.0, 0.5, 200)
    assert info.value.time > 0


def test_spacecraft_structure():
    sc = spacecraft()
    assert sc.true_dict.labels() == ["x1*x2", "x1*x3", "x2*x3"]
    np.testing.assert_allclose(sc.A, [[0, 0, -0.5], [0, 0.5, 0], [0, 0, 0]])
    np.testing.assert_allclose(np.diag(sc.B), [1 / 200, 1 / 200, 1 / 300])


def test_exact_derivatives_match_vector_field():
    sc = spacecraft()
    pair = collect_pair(sc, ExcitationSpec(amplitude=5.0, seed=1), [0.1, 0.2, 0.3],
                        [-0.2, 0.1, 0.0], 40, 0.1)
    b = pair.batch
    recomputed = sc.A @ evaluate_dictionary(sc.true_dict, b.X0) + sc.B @ b.U0
    assert np.max(np.abs(recomputed - b.X1)) <= 1e-10


def forward_difference_error(tau):
    pair = collect_pair(linear_decay(), ExcitationSpec(kind="constant", value=(0.0,)), [1.0],
                        [0.5], 10, tau, source="forward-difference")
    exact = -pair.batch.X0
    return np.max(np.abs(pair.batch.X1 - exact))


def test_forward_difference_first_order():
    ratio = forward_difference_error(0.02) / forward_difference_error(0.01)
    assert 1.7 <= ratio <= 2.3


def test_collection_is_deterministic():
    sc = spacecraft()
    a = collect_pair(sc, ExcitationSpec(amplitude=5.0, seed=7), [0.1, 0, 0], [0, 0.1, 0], 20, 0.1)
    b = collect_pair(sc, ExcitationSpec(amplitude=5.0, seed=7), [0.1, 0, 0], [0, 0.1, 0], 20, 0.1)
    assert a.fingerprint() == b.fingerprint()
    np.testing.assert_array_equal(a.batch.X0, b.batch.X0)


@pytest.mark.parametrize("kind", ["multisine", "piecewise"])
def test_excitation_respects_amplitude(kind):
    u = ExcitationSpec(kind=kind, amplitude=2.0, seed=3).build(2, 10.0)
    vals = np.array([u(t) for t in np.linspace(0, 10, 301)])
    assert np.all(np.abs(vals) <= 2.0 + 1e-12)
    assert vals.std() > 0.1


def test_collect_rejects_identical_initial_states():
    with pytest.raises(ValueError):
        collect_pair(linear_decay(), ExcitationSpec(), [1.0], [1.0], 5, 0.1)


def test_batch_pair_requires_shared_input():
    sc = spacecraft()
    a = collect_pair(sc, ExcitationSpec(seed=1), [0.1, 0, 0], [0, 0.1, 0], 5, 0.1)
    b = collect_pair(sc, ExcitationSpec(seed=2), [0.1, 0, 0], [0, 0.1, 0], 5, 0.1)
    with pytest.raises(ValueError):
        BatchPair(a.batch, b.sibling)


def test_simulate_rejects_bad_horizon():
    with pytest.raises(ValueError):
        simulate(linear_decay(), lambda t: np.zeros(1), [1.0], 0.25, 0.1)
    with pytest.raises(DimensionMismatch):
        simulate(linear_decay(), lambda t: np.zeros(1), [1.0, 2.0], 1.0, 0.1)


def test_richness_constant_input_fails():
    sc = spacecraft()
    pair = collect_pair(sc, ExcitationSpec(kind="constant", value=(0.0, 0.0, 0.0)),
                        [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 50, 0.1)
    d = MonomialDictionary.from_list(3, [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0)])
    diag = richness_check(pair, d)
    assert not diag.rank_ok
    assert diag.ranks == (1, 1)
    json.dumps(diag.to_dict())


def test_richness_short_record_fails():
    sc = spacecraft()
    pair = collect_pair(sc, ExcitationSpec(amplitude=5.0), [0.1, 0.2, 0.3], [0.3, 0.2, 0.1], 3, 0.1)
    d = MonomialDictionary.from_list(3, [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0)])
    assert lift(pair.batch, d).rank <= 3
    assert not richness_check(pair, d).rank_ok


def test_numeric_rank():
    M = np.array([[1.0, 0.0], [0.0, 1e-20]])
    assert numeric_rank(M)[0] == 1
    assert numeric_rank(np.zeros((2, 2)))[0] == 0


def test_bundle_roundtrip_is_exact(tmp_path):
    sc = spacecraft()
    pair = collect_pair(sc, ExcitationSpec(amplitude=5.0, seed=4), [0.1, 0.2, 0.3],
                        [0.3, -0.2, 0.1], 15, 0.1)
    save_bundle(pair, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert back.fingerprint() == pair.fingerprint()
    with pytest.raises(FileExistsError):
        save_bundle(pair, tmp_path / "b")
    save_bundle(pair, tmp_path / "b", force=True)


def test_tampered_bundle_detected(tmp_path):
    sc = spacecraft()
    pair = collect_pair(sc, ExcitationSpec(amplitude=5.0, seed=4), [0.1, 0.2, 0.3],
                        [0.3, -0.2, 0.1], 5, 0.1)
    save_bundle(pair, tmp_path)
    lines = (tmp_path / "batch.csv").read_text().splitlines()
    fields = lines[1].split(",")
    fields[-1] = repr(float(fields[-1]) + 1.0)
    lines[1] = ",".join(fields)
    (tmp_path / "batch.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="fingerprint"):
        load_bundle(tmp_path)


def test_initial_pair_split():
    a, b = initial_pair(np.random.default_rng(0), 3, box=5.0, split=True)
    assert np.all(a >= 0) and np.all(b < 0)
