"""
Monomial dictionaries and polynomial matrices
=============================================

A dictionary F(x) lists monomials in graded-lex order. Because every entry
vanishes at the origin it factors as F(x) = aleph(x) x.
"""

import numpy as np

from deltaiss import (MonomialDictionary, PolyMatrix, enumerate_monomials, evaluate_dictionary,
                      factorize_dictionary, poly_multiply, poly_residual)

# all monomials of degree 1 and 2 in three variables
d = enumerate_monomials(3, 1, 2)
print("dictionary:", d.labels())

# aleph divides each monomial by its lowest-index variable
aleph = factorize_dictionary(d)
for alpha, block in aleph.terms.items():
    print(alpha, "->", np.argwhere(block).tolist())

# the identity holds exactly at the coefficient level
x = PolyMatrix.state_vector(3)
print("coefficient gap:", poly_residual(poly_multiply(aleph, x), PolyMatrix.from_dictionary(d)))

# and pointwise
p = np.array([0.3, -1.2, 2.0])
print("pointwise gap:", np.abs(aleph.evaluate(p) @ p - evaluate_dictionary(d, p)).max())

# a hand-picked dictionary is re-sorted on construction
custom = MonomialDictionary.from_list(2, [(0, 2), (1, 0), (1, 1)])
print("custom order:", custom.labels())
