"""
A certificate you can check by hand
===================================

For x' = x + u the conditions reduce to scalars: Sigma = (1 + K) Theta and
2 Sigma + vartheta + epsilon Theta <= 0, so 1 + K <= -(vartheta + epsilon Theta) / (2 Theta).
"""

import numpy as np

from deltaiss import (ExcitationSpec, MonomialDictionary, PolySystem, SynthesisConfig,
                      collect_pair, simulate_closed_loop_pair, synthesize)
from deltaiss.verify import builtin_signal

plant = PolySystem([[1.0]], [[1.0]], MonomialDictionary.from_list(1, [(1,)]))
pair = collect_pair(plant, ExcitationSpec(seed=0), [0.3], [-0.2], T=20, tau=0.1)
cert = synthesize(pair, SynthesisConfig(epsilon=0.5, vartheta=0.1, dictionary=plant.true_dict))

theta, sigma = cert.Theta[0, 0], cert.Sigma[0, 0]
k = cert.K.coefficient((0,))[0, 0]
print(f"Theta = {theta:.4f}, Sigma = {sigma:.4f}, K = {k:.4f}")
print(f"closed-loop gain 1 + K = {1 + k:.4f}, bound {-(0.1 + 0.5 * theta) / (2 * theta):.4f}")

u = builtin_signal("sin", 1)
tr = simulate_closed_loop_pair(plant, cert, [2.0], [-1.0], u, u, horizon=5.0, step=0.01)
predicted = 3.0 * np.exp((1 + k) * tr.times)
print("max relative gap to exp((1 + K) t):", np.max(np.abs(tr.diff_norm - predicted) / predicted))
