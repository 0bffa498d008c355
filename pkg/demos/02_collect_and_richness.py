"""
Collecting data and testing richness
====================================

Two trajectories of the rigid spacecraft are recorded under one input. The
lifted data matrices must have full row rank before synthesis can start.
"""

from deltaiss import ExcitationSpec, MonomialDictionary, collect_pair, richness_check, spacecraft

plant = spacecraft()
d = MonomialDictionary.from_list(3, [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0),
                                     (1, 1, 0), (1, 0, 1), (0, 1, 1)])

rich = collect_pair(plant, ExcitationSpec(amplitude=50.0, seed=3),
                    [0.5, -0.2, 0.3], [-0.4, 0.6, 0.1], T=100, tau=0.1)
print("multisine input:", richness_check(rich, d).to_dict())

# with zero input and these initial states the body does not move at all
flat = collect_pair(plant, ExcitationSpec(kind="constant", value=(0.0, 0.0, 0.0)),
                    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], T=100, tau=0.1)
print("zero input:     ", richness_check(flat, d).to_dict())

# forward differences instead of exact derivatives: first-order accurate
fd = collect_pair(plant, ExcitationSpec(amplitude=50.0, seed=3),
                  [0.5, -0.2, 0.3], [-0.4, 0.6, 0.1], T=100, tau=0.1, source="forward-difference")
print("fingerprints differ:", fd.fingerprint() != rich.fingerprint())
