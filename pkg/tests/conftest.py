import pytest

from deltaiss.plant import ExcitationSpec, PolySystem, collect_pair, spacecraft
from deltaiss.polyalg import MonomialDictionary
from deltaiss.synthesis import SynthesisConfig, synthesize

SPACECRAFT_DICT = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 1, 1)]


@pytest.fixture(scope="session")
def spacecraft_pair():
    return collect_pair(spacecraft(), ExcitationSpec(amplitude=50.0, seed=3),
                        [0.5, -0.2, 0.3], [-0.4, 0.6, 0.1], 100, 0.1)


@pytest.fixture(scope="session")
def spacecraft_cert(spacecraft_pair):
    d = MonomialDictionary.from_list(3, SPACECRAFT_DICT)
    return synthesize(spacecraft_pair, SynthesisConfig(epsilon=0.9, vartheta=0.44, dictionary=d))


@pytest.fixture(scope="session")
def scalar_plant():
    return PolySystem([[1.0]], [[1.0]], MonomialDictionary.from_list(1, [(1,)]))


@pytest.fixture(scope="session")
def scalar_cert(scalar_plant):
    pair = collect_pair(scalar_plant, ExcitationSpec(amplitude=1.0, seed=0), [0.3], [-0.2], 20, 0.1)
    cfg = SynthesisConfig(epsilon=0.5, vartheta=0.1, dictionary=scalar_plant.true_dict)
    return synthesize(pair, cfg), pair
