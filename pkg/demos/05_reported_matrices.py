"""
Checking externally reported matrices
=====================================

Given a P and Sigma from elsewhere, the decay condition can be checked without
any data: the largest eigenvalue of Sigma + Sigma^T + vartheta I + epsilon P^-1
must be negative.
"""

import numpy as np

from deltaiss.certificate import decay_lmi_max_eig

P = np.array([[1.9087, -0.1404, -0.1441],
              [-0.1404, 5.3907, 0.1229],
              [-0.1441, 0.1229, 2.8604]])
Sigma = np.array([[-0.7926, 0.0245, 0.0058],
                  [-0.0459, -0.6426, 0.0088],
                  [-0.0195, 0.0130, -0.6633]])

lam = decay_lmi_max_eig(P, Sigma, epsilon=0.9, vartheta=0.44)
print(f"lambda_max = {lam:.6f}, margin {-lam:.4f}")

# the largest epsilon these matrices support at vartheta = 0.44
lo, hi = 0.0, 10.0
for _ in range(60):
    mid = (lo + hi) / 2
    lo, hi = (mid, hi) if decay_lmi_max_eig(P, Sigma, mid, 0.44) < 0 else (lo, mid)
print(f"largest certified decay rate: {lo:.4f}")
