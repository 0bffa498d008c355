"""
Spacecraft: data to verified controller
=======================================

Equivalent to ``deltaiss demo-spacecraft`` but written out step by step, with
a shorter record (T = 100) to keep it quick.
"""

import numpy as np

from deltaiss import (ExcitationSpec, MonomialDictionary, SynthesisConfig, collect_pair,
                      recheck_certificate, spacecraft, synthesize, verify_pairs)
from deltaiss.polyalg import format_monomial

plant = spacecraft()
d = MonomialDictionary.from_list(3, [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0),
                                     (1, 1, 0), (1, 0, 1), (0, 1, 1)])
pair = collect_pair(plant, ExcitationSpec(amplitude=50.0, seed=3),
                    [0.5, -0.2, 0.3], [-0.4, 0.6, 0.1], T=100, tau=0.1)

# the plant model is not used from here on, only the recorded data
cert = synthesize(pair, SynthesisConfig(epsilon=0.9, vartheta=0.44, dictionary=d))
np.set_printoptions(precision=4, suppress=True)
print("P =\n", cert.P)
print("Sigma =\n", cert.Sigma)
print("recheck passed:", recheck_certificate(cert, pair).passed)

# the feedback K(x) x, term by term (only coefficients above 1e-6)
for i in range(3):
    terms = {}
    for alpha, c in cert.K.terms.items():
        for j in range(3):
            mono = tuple(a + (k == j) for k, a in enumerate(alpha))
            terms[mono] = terms.get(mono, 0.0) + c[i, j]
    shown = " ".join(f"{v:+.3f} {format_monomial(m)}" for m, v in terms.items() if abs(v) > 1e-6)
    print(f"u{i + 1} - u_hat{i + 1} = {shown}")

summary = verify_pairs(plant, cert, n_pairs=5, horizon=20.0, step=0.005)
print("all pairs pass the decay bound:", summary.passed)
print("terminal gap ratios:", ["%.1e" % r for r in summary.convergence.terminal_ratios])
