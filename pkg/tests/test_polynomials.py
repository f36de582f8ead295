import numpy as np
import pytest

from smoothed_ftpl.polynomials import (
    coeff_top_norm,
    monomial_exponents,
    monomial_matrix,
    n_monomials,
    normalize_top_degree,
    poly_eval,
    top_degree_slice,
)


def test_exponent_order_d2_r2():
    exps = monomial_exponents(2, 2)
    assert exps == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def test_counts_match_binomial_formula():
    # choose(d + r, r) monomials of degree <= r
    from math import comb

    for d, r in [(1, 3), (2, 2), (3, 2), (4, 1)]:
        assert n_monomials(d, r) == comb(d + r, r)


def test_poly_eval_quadratic():
    # f(x, y) = 1 + 2x + 3y^2 in the graded-lex basis
    coeffs = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 3.0])
    vals = poly_eval(coeffs, np.array([[1.0, 2.0], [0.0, -1.0]]), 2, 2)
    assert vals == pytest.approx([1 + 2 + 12, 1 + 3])


def test_top_norm_and_normalization():
    coeffs = np.array([5.0, 1.0, 1.0, 3.0, 0.0, 4.0])
    assert coeff_top_norm(coeffs, 2, 2) == pytest.approx(5.0)
    unit = normalize_top_degree(coeffs, 2, 2)
    assert coeff_top_norm(unit, 2, 2) == pytest.approx(1.0)
    sl = top_degree_slice(2, 2)
    assert sl == slice(3, 6)


def test_normalize_rejects_zero_top_block():
    with pytest.raises(ValueError):
        normalize_top_degree(np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]), 2, 2)


def test_monomial_matrix_shape_checks():
    with pytest.raises(ValueError):
        monomial_matrix(np.zeros((3, 3)), 2, 2)
