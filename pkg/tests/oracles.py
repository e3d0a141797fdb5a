"""Independent reference implementations used by the tests.

Nothing here calls the package's numerical routines: dwell probabilities come
from ``scipy.stats``, matrices are assembled entry by entry from their
definition and likelihoods are summed over every state path.
"""

import itertools
import math

import numpy as np
from scipy import stats

from inhsmm.inference import ObservationSeries
from inhsmm.model import ModelSpec


def trig_values(coeffs, L):
    """Predictor ``b0 + sum b_sk sin(2 pi k t/L) + b_ck cos(2 pi k t/L)`` at t = 1..L."""
    c = np.atleast_1d(np.asarray(coeffs, float))
    K = (c.size - 1) // 2
    out = np.full(L, c[0])
    for t in range(1, L + 1):
        for k in range(1, K + 1):
            out[t - 1] += c[k] * math.sin(2 * math.pi * k * t / L) + c[K + k] * math.cos(2 * math.pi * k * t / L)
    return out


def dwell_frozen(family, mu, phi=0.0):
    """scipy distribution of the full dwell time R (support 1, 2, ...)."""
    if family == "geometric":
        return stats.geom(1.0 / (1.0 + mu))
    if family == "shifted-negative-binomial" and phi >= 1e-8:
        n = 1.0 / phi
        return stats.nbinom(n, 1.0 / (1.0 + mu * phi), loc=1)
    return stats.poisson(mu, loc=1)


def dwell_params(model):
    """Per state arrays of base means and dispersions over t = 1..L."""
    L = model.cycle_length
    mus, phis = [], []
    for d in model.dwells:
        mus.append(np.exp(trig_values(d.mean_coeffs, L)))
        if d.dispersion_coeffs.size:
            phis.append(np.exp(trig_values(d.dispersion_coeffs, L)))
        else:
            phis.append(np.zeros(L))
    return np.array(mus), np.array(phis)


def oracle_pmf(model, i, t, r):
    """d_i^(t)(r), t 0-based."""
    mus, phis = dwell_params(model)
    return float(dwell_frozen(model.spec.dwell_family, mus[i, t], phis[i, t]).pmf(r))


def oracle_sf(model, i, t, r):
    mus, phis = dwell_params(model)
    return float(dwell_frozen(model.spec.dwell_family, mus[i, t], phis[i, t]).sf(r))


def oracle_hazard(model, i, t, r):
    prev = oracle_sf(model, i, t, r - 1)
    if prev <= 0.0:
        return 1.0
    return min(1.0, oracle_pmf(model, i, t, r) / prev)


def oracle_omega(model):
    """(L, N, N) conditional t.p.m.s from the multinomial-logit definition."""
    N, L = model.spec.n_states, model.cycle_length
    coeffs = model.omega.coeffs
    out = np.zeros((L, N, N))
    for i in range(N):
        others = [j for j in range(N) if j != i]
        eta = np.array([trig_values(coeffs[i, j], L) for j in others])  # (N-1, L)
        w = np.exp(eta - eta.max(axis=0))
        w /= w.sum(axis=0)
        for a, j in enumerate(others):
            out[:, i, j] = w[a]
    return out


def oracle_gamma(model, t):
    """Extended t.p.m. Gamma^(t) (t 0-based) assembled entry by entry."""
    sizes = model.spec.sizes
    N, L = len(sizes), model.cycle_length
    M = sum(sizes)
    lower = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    om = oracle_omega(model) if N > 1 else np.zeros((L, 1, 1))
    G = np.zeros((M, M))
    for i in range(N):
        Ni = sizes[i]
        for r in range(1, Ni + 1):
            row = lower[i] + r - 1
            c = oracle_hazard(model, i, (t - r + 1) % L, r) if N > 1 else 0.0
            if r < Ni:
                G[row, row + 1] = 1.0 - c
            else:
                G[row, row] = 1.0 - c
            for j in range(N):
                if j != i:
                    G[row, lower[j]] = om[t, i, j] * c
    return G


def emission_density(model, step, angle):
    """Per-state emission density (not log) of one observation."""
    em = model.emissions
    N = em.step_mean.size
    out = np.ones(N)
    for i in range(N):
        if not math.isnan(step):
            shape = (em.step_mean[i] / em.step_sd[i]) ** 2
            scale = em.step_sd[i] ** 2 / em.step_mean[i]
            out[i] *= stats.gamma(shape, scale=scale).pdf(step)
        if not math.isnan(angle):
            out[i] *= stats.vonmises(em.angle_kappa[i], loc=em.angle_mean[i]).pdf(angle)
    return out


def enumerate_paths(gammas, dens, delta, tod):
    """All extended paths: (total likelihood, best log prob, best path)."""
    T, M = dens.shape[0], delta.size
    total = 0.0
    best, arg = -np.inf, None
    for path in itertools.product(range(M), repeat=T):
        p = delta[path[0]] * dens[0, path[0]]
        for k in range(1, T):
            p *= gammas[tod[k - 1]][path[k - 1], path[k]] * dens[k, path[k]]
        total += p
        if p > 0 and math.log(p) > best + 1e-13:
            best, arg = math.log(p), path
    return total, best, arg


def random_model(rng, N, sizes, L, family, degree_mean=None, degree_omega=None, kind="hsmm"):
    """Random periodic model with moderate parameters."""
    if degree_mean is None:
        degree_mean = 0 if L < 3 else int(rng.integers(0, 2))
    if degree_omega is None:
        degree_omega = 0 if L < 3 else int(rng.integers(0, 2))
    degree_disp = 0 if L < 3 else int(rng.integers(0, 2))
    spec = ModelSpec(
        n_states=N,
        cycle_length=L,
        kind=kind,
        dwell_family=family,
        degree_mean=degree_mean,
        degree_dispersion=degree_disp if family == "shifted-negative-binomial" else 0,
        degree_omega=degree_omega,
        degree_gamma=degree_omega,
        sizes=tuple(sizes),
    )
    theta = np.empty(spec.n_params)
    for k, name in enumerate(spec.param_names()):
        if name.startswith("dwell_mean") and name.endswith("[b0]"):
            theta[k] = math.log(rng.uniform(0.5, 5.0))
        elif name.startswith("dwell_disp") and name.endswith("[b0]"):
            theta[k] = math.log(rng.uniform(0.1, 1.5))
        elif name.startswith("log_step_mean"):
            theta[k] = math.log(rng.uniform(1.0, 10.0))
        elif name.startswith("log_step_sd"):
            theta[k] = math.log(rng.uniform(0.5, 5.0))
        elif name.startswith("log_kappa"):
            theta[k] = math.log(rng.uniform(0.2, 3.0))
        else:
            theta[k] = rng.normal(0.0, 0.5)
    return spec.unpack(theta)


FAMILIES = ("geometric", "shifted-poisson", "shifted-negative-binomial")


def randomized_models(n=50, seed=20240611):
    """The randomized periodic model set: N in {2, 3}, N_i in 1..6, L in {1, 4, 24}."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        N = int(rng.integers(2, 4))
        sizes = tuple(int(s) for s in rng.integers(1, 7, N))
        L = int(rng.choice([1, 4, 24]))
        family = FAMILIES[int(rng.integers(0, 3))]
        out.append(random_model(rng, N, sizes, L, family))
    return out


def sojourn_pmf_by_paths(G_list, lower, size, t, rmax):
    """P(sojourn entered at t lasts exactly r), r = 1..rmax, summing over within-aggregate paths.

    ``G_list[s]`` is Gamma^(s) (0-based, periodic).  Probability mass is carried
    on the aggregate's states only; at each step the mass that leaves the
    aggregate is the probability of a sojourn of that length.
    """
    L = len(G_list)
    idx = np.arange(lower, lower + size)
    outside = np.setdiff1d(np.arange(G_list[0].shape[0]), idx)
    mass = np.zeros(size)
    mass[0] = 1.0
    out = np.empty(rmax)
    for r in range(1, rmax + 1):
        G = G_list[(t + r - 1) % L]
        stay = mass @ G[np.ix_(idx, idx)]
        out[r - 1] = mass @ G[np.ix_(idx, outside)].sum(axis=1)
        mass = stay
    return out


def oracle_tables(model, rmax):
    """scipy-based pmf, survival and hazard arrays indexed ``[i, t, r]`` for r = 0..rmax."""
    mus, phis = dwell_params(model)
    N, L = mus.shape
    r = np.arange(rmax + 1)
    pmf = np.empty((N, L, rmax + 1))
    sf = np.empty((N, L, rmax + 1))
    for i in range(N):
        for t in range(L):
            dist = dwell_frozen(model.spec.dwell_family, mus[i, t], phis[i, t])
            pmf[i, t] = dist.pmf(r)
            sf[i, t] = dist.sf(r)
    prev = np.concatenate([np.ones((N, L, 1)), sf[:, :, :-1]], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        haz = np.where(prev > 0, np.minimum(pmf / prev, 1.0), 1.0)
    return pmf, sf, haz


def tail_product_form(tables, i, t, r, Ni, L):
    """Exact d_i^(t)(r) of the extended chain for r > N_i (t 0-based)."""
    _, sf, haz = tables
    p = sf[i, t, Ni - 1]
    for k in range(r - Ni):
        p *= 1.0 - haz[i, (t + k) % L, Ni]
    return p * haz[i, (t + r - Ni) % L, Ni]


def random_series(rng, model, T, p_missing=0.2):
    L = model.cycle_length
    t0 = int(rng.integers(1, L + 1))
    tod = (t0 - 1 + np.arange(T)) % L + 1
    step = rng.gamma(2.0, 2.0, T)
    angle = rng.uniform(-math.pi, math.pi, T)
    step[rng.random(T) < p_missing] = np.nan
    angle[rng.random(T) < p_missing] = np.nan
    return ObservationSeries(tod, step, angle, L)


def tiny_cases(n, seed=11):
    """``(model, series)`` pairs with at most 4 extended states and 6 rows."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        L = int(rng.choice([1, 4]))
        fam = ("geometric", "shifted-poisson", "shifted-negative-binomial")[k % 3]
        if k % 4 == 3:
            m = random_model(rng, int(rng.integers(2, 5)), (1,), L, fam, kind="hmm")
        elif k % 2:
            m = random_model(rng, 2, tuple(int(s) for s in rng.integers(1, 3, 2)), L, fam)
        else:
            m = random_model(rng, 3, (1, 1, 1), L, fam)
        out.append((m, random_series(rng, m, int(rng.integers(2, 7)))))
    return out


def semi_markov_likelihood(family, mus, phis, omegas, dens):
    """Exact HSMM likelihood by summing over all state sequences.

    The series starts with a switch (first state uniform).  A sojourn in ``i``
    entered at row ``t`` has pmf ``d`` with base mean ``mus[i, t]``; the next
    state is drawn from ``omegas[k]`` where ``k`` is the sojourn's last row.
    The last sojourn is right-censored.
    """
    T, N = dens.shape
    total = 0.0
    for seq in itertools.product(range(N), repeat=T):
        p = 1.0 / N
        start = 0
        for k in range(1, T + 1):
            if k < T and seq[k] == seq[start]:
                continue
            i, r = seq[start], k - start
            dist = dwell_frozen(family, mus[i, start], phis[i, start])
            if k < T:
                p *= dist.pmf(r) * omegas[k - 1][i, seq[k]]
            else:
                p *= dist.sf(r - 1)
            start = k
        p *= np.prod(dens[np.arange(T), list(seq)])
        total += p
    return total
