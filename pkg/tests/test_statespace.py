import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inhsmm.distributions import DwellSpec
from inhsmm.exceptions import ConfigurationError, DomainError
from inhsmm.statespace import (
    AggregateLayout,
    ConditionalTPMSpec,
    build_gamma_homogeneous,
    build_gamma_t,
    build_structured,
    build_structured_sequence,
    omega_at,
    sizes_from_factor,
    sizes_from_quantile,
)

from oracles import (
    oracle_gamma,
    oracle_omega,
    oracle_pmf,
    oracle_tables,
    random_model,
    randomized_models,
    sojourn_pmf_by_paths,
    tail_product_form,
)

MODELS = randomized_models(50)


def test_layout():
    lay = AggregateLayout((3, 1, 2))
    assert lay.M == 6 and lay.n_states == 3
    np.testing.assert_array_equal(lay.lower, [0, 3, 4])
    np.testing.assert_array_equal(lay.upper, [2, 3, 5])
    np.testing.assert_array_equal(lay.state_of(), [0, 0, 0, 1, 2, 2])
    np.testing.assert_array_equal(lay.row_in_aggregate(), [1, 2, 3, 1, 1, 2])
    np.testing.assert_allclose(lay.aggregate_sum(np.arange(6.0)), [3.0, 3.0, 9.0])
    with pytest.raises(ConfigurationError):
        AggregateLayout((2, 0))


def test_conditional_tpm_from_matrix_roundtrip():
    om = np.array([[0.0, 0.7, 0.3], [0.2, 0.0, 0.8], [0.5, 0.5, 0.0]])
    spec = ConditionalTPMSpec.from_matrix(om, 24)
    np.testing.assert_allclose(omega_at(spec, 5), om, atol=1e-15)
    with pytest.raises(DomainError):
        omega_at(spec, 25)
    with pytest.raises(ConfigurationError):
        ConditionalTPMSpec(np.zeros((1, 1, 1)))


def test_conditional_tpm_reference_is_pinned():
    c = np.ones((3, 3, 3))
    spec = ConditionalTPMSpec(c, 1, 6)
    for i in range(3):
        assert np.all(spec.coeffs[i, i] == 0)
        assert np.all(spec.coeffs[i, ConditionalTPMSpec.reference(i)] == 0)
    tab = spec.table()
    np.testing.assert_allclose(tab.sum(axis=2), 1.0)
    assert np.all(tab[:, np.arange(3), np.arange(3)] == 0)


@pytest.mark.parametrize("k", range(0, 50, 7))
def test_dense_matches_entrywise_oracle(k):
    model = MODELS[k]
    G = model.gammas
    for t in range(model.cycle_length):
        np.testing.assert_allclose(G[t], oracle_gamma(model, t), rtol=0, atol=1e-12)


def test_build_gamma_t_wraps_time_index():
    model = MODELS[3]
    L = model.cycle_length
    G = build_gamma_t(model.layout, model.dwells, model.omega, 0, L)
    np.testing.assert_allclose(G, model.gammas[L - 1])
    G = build_gamma_t(model.layout, model.dwells, model.omega, L + 2, L)
    np.testing.assert_allclose(G, model.gammas[1 % L])


def test_homogeneous_build_known_matrix():
    # two states, geometric with p = 0.5 in aggregate of size 2 and Poisson in size 1
    lay = AggregateLayout((2, 1))
    d = [DwellSpec.geometric(0.5), DwellSpec.shifted_poisson(1.0)]
    G = build_gamma_homogeneous(lay, d, np.array([[0.0, 1.0], [1.0, 0.0]]))
    c2 = math.exp(-1.0)  # hazard at r=1 of shifted Poisson(1)
    expect = np.array([[0.0, 0.5, 0.5], [0.0, 0.5, 0.5], [c2, 0.0, 1 - c2]])
    np.testing.assert_allclose(G, expect, atol=1e-15)


def test_single_state_never_leaves():
    lay = AggregateLayout((3,))
    st_ = build_structured(lay, [DwellSpec.shifted_poisson(2.0)], np.zeros((1, 1)), 1)
    G = st_.dense()[0]
    np.testing.assert_allclose(G, np.diag([0, 0, 1.0]) + np.diag([1.0, 1.0], 1))


@pytest.mark.parametrize("model", MODELS[:10], ids=lambda m: f"N{m.spec.n_states}L{m.cycle_length}")
def test_exit_ratio_equals_omega(model):
    """Leaving aggregate i lands in aggregate j with probability omega_ij^(t)."""
    rng = np.random.default_rng(0)
    lay = model.layout
    om = oracle_omega(model)
    for t in range(model.cycle_length):
        G = model.gammas[t]
        for i in range(lay.n_states):
            idx = np.arange(lay.lower[i], lay.upper[i] + 1)
            u = rng.random(idx.size)
            out_all = u @ np.delete(G[idx], idx, axis=1).sum(axis=1)
            for j in range(lay.n_states):
                if j == i:
                    continue
                jdx = np.arange(lay.lower[j], lay.upper[j] + 1)
                ratio = (u @ G[np.ix_(idx, jdx)].sum(axis=1)) / out_all
                assert abs(ratio - om[t, i, j]) < 1e-12


@pytest.mark.parametrize("model", MODELS[:10], ids=lambda m: f"N{m.spec.n_states}L{m.cycle_length}")
def test_dwell_within_aggregate_is_exact(model):
    lay = model.layout
    G = list(model.gammas)
    for i in range(lay.n_states):
        Ni = lay.sizes[i]
        for t in range(model.cycle_length):
            got = sojourn_pmf_by_paths(G, lay.lower[i], Ni, t, Ni)
            ref = [oracle_pmf(model, i, t, r) for r in range(1, Ni + 1)]
            np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("model", MODELS[10:16], ids=lambda m: f"N{m.spec.n_states}L{m.cycle_length}")
def test_dwell_tail_product_form(model):
    lay = model.layout
    L = model.cycle_length
    G = list(model.gammas)
    tab = oracle_tables(model, 3 * max(lay.sizes))
    for i in range(lay.n_states):
        Ni = lay.sizes[i]
        for t in range(L):
            got = sojourn_pmf_by_paths(G, lay.lower[i], Ni, t, 3 * Ni)
            for r in range(Ni + 1, 3 * Ni + 1):
                assert abs(got[r - 1] - tail_product_form(tab, i, t, r, Ni, L)) < 1e-10


def test_tail_approximation_improves_with_aggregate_size():
    """Replacing the varying last hazard by c^(t)(N_i) is closer to d^(t) for larger N_i."""
    rng = np.random.default_rng(3)
    base = random_model(rng, 2, (2, 2), 24, "shifted-poisson", degree_mean=1)
    errs = []
    for n in (2, 6, 12):
        sizes = (n, n)
        model = type(base)(
            type(base.spec)(**{**base.spec.to_dict(), "sizes": sizes}), base.dwells, base.omega, base.emissions
        )
        G = list(model.gammas)
        pmf = sojourn_pmf_by_paths(G, 0, n, 0, 40)
        ref = np.array([oracle_pmf(model, 0, 0, r) for r in range(1, 41)])
        errs.append(np.abs(pmf - ref).sum())
    assert errs[0] > errs[1] > errs[2]


def test_rows_sum_to_one_on_randomized_models():
    for m in MODELS:
        np.testing.assert_allclose(m.gammas.sum(axis=2), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.integers(1, 8), min_size=2, max_size=4),
    st.sampled_from([1, 4, 24]),
    st.sampled_from(["geometric", "shifted-poisson", "shifted-negative-binomial"]),
    st.integers(0, 2**31),
)
def test_gamma_is_stochastic_with_block_structure(sizes, L, family, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, len(sizes), sizes, L, family)
    G = m.gammas
    assert np.all(G >= 0)
    np.testing.assert_allclose(G.sum(axis=2), 1.0, atol=1e-12)
    lay = m.layout
    state = lay.state_of()
    rows = lay.row_in_aggregate()
    for t in range(L):
        nz = np.argwhere(G[t] > 0)
        for a, b in nz:
            if state[a] == state[b]:
                # within an aggregate: move up one row, or stay in the last row
                assert rows[b] == min(rows[a] + 1, lay.sizes[state[a]])
            else:
                assert b == lay.lower[state[b]]


def test_aggregate_sizing():
    d = [DwellSpec.shifted_poisson(8.0), DwellSpec.shifted_poisson(2.0)]
    sizes = sizes_from_quantile(d, 0.975)
    for dd, n in zip(d, sizes):
        F = dd.cdf_table(n)[0]
        assert F[-1] >= 0.975 and (n == 1 or F[-2] < 0.975)
    assert sizes_from_quantile(d, 0.999999, cap=5) == (5, 5)
    q = [int(dd.quantile(0.995).max()) for dd in d]
    assert sizes_from_factor(d, 0.5) == tuple(math.ceil(0.5 * x) for x in q)


def test_sequence_build_does_not_wrap():
    lay = AggregateLayout((3, 2))
    T = 5
    tabs = [np.linspace(0.1, 0.5, 3 * T).reshape(T, 3), np.full((T, 2), 0.3)]
    st_ = build_structured_sequence(lay, tabs, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert st_.cycle_length == T
    for t in range(T):
        for r in range(1, 4):
            assert st_.hazards[t, r - 1] == tabs[0][max(t - r + 1, 0), r - 1]
    np.testing.assert_allclose(st_.dense().sum(axis=2), 1.0, atol=1e-12)
    with pytest.raises(DomainError):
        build_structured_sequence(lay, [tabs[0], np.full((T, 2), 1.5)], np.eye(2)[::-1])
    with pytest.raises(ConfigurationError):
        build_structured_sequence(lay, [tabs[0][:3], tabs[1]], np.eye(2)[::-1])
