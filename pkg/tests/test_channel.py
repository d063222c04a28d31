import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import gamma_pdf, invgauss_pdf, rate_accumulator
from seqdetect.channel import (
    MOLECULAR_CS, MOLECULAR_ETAS, MOLECULAR_MUS, MOLECULAR_TAUS, OPTICAL_BETAS, OPTICAL_ETAS, OPTICAL_TAUS,
    ChannelParams, SymbolSequence, TimeVaryingConfig, amplitude_levels, discretize_response, expected_counts,
    impulse_response, memory_length, parameter_walk, random_symbols, sample_pam_params, sample_random_params,
    simulate, simulate_time_varying,
)
from seqdetect.rng import substream


def optical(**kw):
    base = dict(beta=0.2, eta=1.0, tau=0.025)
    base.update(kw)
    return ChannelParams.optical(**base)


def molecular(**kw):
    base = dict(c=8.0, mu=40.0, eta=100.0, tau=0.5)
    base.update(kw)
    return ChannelParams.molecular(**base)


class TestParams:
    def test_samples_per_symbol(self):
        assert ChannelParams.molecular(tau=1.0).a == 100
        assert optical(tau=0.025).a == 50

    def test_rejects_fractional_samples(self):
        with pytest.raises(ValueError, match="not a positive integer"):
            optical(tau=0.0251)

    @pytest.mark.parametrize("kw", [dict(beta=0), dict(eta=-1), dict(kappa=0), dict(m=1)])
    def test_rejects_invalid_optical(self, kw):
        with pytest.raises(ValueError):
            optical(**kw)

    @pytest.mark.parametrize("kw", [dict(c=0), dict(mu=-3)])
    def test_rejects_invalid_molecular(self, kw):
        with pytest.raises(ValueError):
            molecular(**kw)

    def test_amplitudes(self):
        assert amplitude_levels(2).tolist() == [0.0, 1.0]
        assert np.allclose(amplitude_levels(4), [0, 1 / 3, 2 / 3, 1])

    def test_symbol_sequence_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SymbolSequence(np.array([0, 2]), 2)


class TestImpulseResponse:
    def test_zero_before_transmission(self):
        for p in (optical(), molecular()):
            assert impulse_response(-1.0, p) == 0
            assert impulse_response(0.0, p) == 0

    def test_optical_closed_form(self):
        p = optical(kappa=1.0)
        assert impulse_response(0.2, p) == pytest.approx(25 * 0.2 * math.exp(-1), rel=1e-12)
        assert impulse_response(0.2, p) == pytest.approx(1.8393972058572117, rel=1e-12)

    def test_molecular_closed_form(self):
        p = molecular(kappa=1.0)
        expected = math.sqrt(8 / (2 * math.pi * 8)) * math.exp(-8 * 38**2 / (2 * 1600 * 2))
        assert impulse_response(2.0, p) == pytest.approx(expected, rel=1e-12)

    @given(st.floats(-10, 200), st.floats(0.05, 0.5), st.floats(1, 30), st.floats(5, 65))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative_and_matches_oracle(self, t, beta, c, mu):
        po = optical(beta=beta, kappa=10.0)
        pm = molecular(c=c, mu=mu)
        assert impulse_response(t, po) == pytest.approx(gamma_pdf(t, 2.0, beta, 10.0), rel=1e-9, abs=1e-300)
        assert impulse_response(t, pm) == pytest.approx(invgauss_pdf(t, c, mu, 1e4), rel=1e-9, abs=1e-300)
        assert impulse_response(t, po) >= 0 and impulse_response(t, pm) >= 0

    @pytest.mark.parametrize("p", [optical(beta=0.3), molecular(c=3, mu=20)])
    def test_mass_conservation(self, p):
        f = lambda t: float(impulse_response(t, p))  # noqa: E731
        upper = 60 * p.beta if p.kind == "optical" else 2000 * p.mu
        brk = [p.beta] if p.kind == "optical" else [p.mu / 10, p.mu, 10 * p.mu]
        total, _ = integrate.quad(f, 0, upper, points=brk, limit=500, epsabs=0, epsrel=1e-10)
        assert abs(total - p.kappa) < 1e-6 * p.kappa


class TestDiscretize:
    def test_grid_convention(self):
        p = optical(tau=0.025)
        r = discretize_response(p)
        a = p.a
        for k, j in [(0, 1), (0, a), (3, 7)]:
            assert r.lam[k, j - 1] == pytest.approx(gamma_pdf((j + k * a) / p.omega, 2.0, 0.2, 10.0), rel=1e-12)

    @pytest.mark.parametrize("p", [optical(), optical(beta=0.35, tau=0.1), molecular(), molecular(c=2, tau=2.0)])
    def test_mass_bounds(self, p):
        eps = 1e-4
        r = discretize_response(p, eps)
        mass = r.mass(p.omega)
        # the Riemann sum of a smooth density; allow its discretization error
        assert mass <= p.kappa * (1 + 1e-3)
        assert mass >= (1 - eps) * p.kappa * (1 - 1e-3)
        assert np.all(r.lam >= 0)

    def test_mass_converges_as_truncation_vanishes(self):
        p = molecular(c=20, mu=10, tau=0.5)
        errs = [abs(discretize_response(p, e).mass(p.omega) - p.kappa) for e in (1e-2, 1e-4, 1e-6)]
        assert errs[0] > errs[2]
        assert errs[2] < 1e-3 * p.kappa

    def test_memory_length_is_minimal(self):
        p = optical(beta=0.3)
        k = memory_length(p, 1e-4)
        from seqdetect.channel import response_tail
        assert response_tail((k + 1) * p.tau, p) < 1e-4
        assert k == 0 or response_tail(k * p.tau, p) >= 1e-4

    def test_cap(self):
        r = discretize_response(molecular(tau=0.5), max_symbols=10)
        assert r.capped and r.lam.shape[0] == 10

    @pytest.mark.parametrize("eps", [0, 1, -0.5])
    def test_rejects_bad_eps(self, eps):
        with pytest.raises(ValueError):
            discretize_response(optical(), eps)


class TestSimulate:
    def test_deterministic(self):
        p = optical()
        x = random_symbols(30, 2, substream(1, 0))
        a = simulate(x, p, substream(5, 1))
        b = simulate(x, p, substream(5, 1))
        assert np.array_equal(a, b)
        assert a.shape == (30, p.a) and a.dtype.kind == "i" and (a >= 0).all()

    def test_silence_with_zero_noise(self):
        y = simulate(np.zeros(20, int), optical(eta=0.0), substream(0))
        assert not y.any()

    def test_single_symbol_silence(self):
        y = simulate(np.array([0]), optical(eta=0.0), substream(0))
        assert y.shape == (1, 50) and not y.any()

    def test_noise_only_mean(self):
        p = optical(eta=5.0, tau=0.05)
        y = simulate(np.zeros(1000, int), p, substream(3))
        assert y.size == 100_000
        assert abs(y.mean() - 5) < 3 * math.sqrt(5 / y.size)

    @pytest.mark.parametrize("xi", [0.5, 5.0, 50.0])
    def test_poisson_fidelity(self, xi):
        n = 100_000
        y = substream(11, int(xi * 10)).poisson(xi, n)
        assert abs(y.mean() - xi) < 4 * math.sqrt(xi / n)
        # variance of the sample variance for a Poisson law: (mu4 - sigma^4 (n-3)/(n-1)) / n
        mu4 = xi * (1 + 3 * xi)
        sd_var = math.sqrt((mu4 - xi**2 * (n - 3) / (n - 1)) / n)
        assert abs(y.var(ddof=1) - xi) < 5 * sd_var

    @given(st.integers(0, 2**31), st.sampled_from([2, 4]), st.floats(0.15, 0.35), st.floats(0, 50))
    @settings(max_examples=30, deadline=None)
    def test_superposition(self, seed, m, beta, eta):
        p = optical(beta=beta, eta=eta, tau=0.025, m=m)
        x = random_symbols(10, m, substream(seed))
        r = discretize_response(p, max_symbols=10)
        assert np.allclose(expected_counts(x, p, r), rate_accumulator(x, m, r.lam, eta), rtol=1e-12, atol=1e-12)

    def test_ook_trace_shape(self):
        bits = np.array([int(b) for b in "10101100111000"])
        p = ChannelParams.molecular(c=8, mu=40, eta=1.0, tau=1.0, kappa=100.0)
        rates = expected_counts(bits, p)
        level = rates.mean(axis=1)
        slope = rates[:, -1] - rates[:, 0]
        # rising on 1-bits, slow decay once transmissions stop, ISI building up
        assert slope[bits == 1].mean() > slope[bits == 0].mean() + 1
        assert slope[-2] < 0 and slope[-1] < 0
        assert level[-3] > 10 * level[0]


class TestTimeVarying:
    def test_static_walk_reproduces_simulate(self):
        p = optical(eta=10.0, tau=0.05)
        x = random_symbols(60, 2, substream(1))
        a = simulate_time_varying(x, p, TimeVaryingConfig(0, 0), substream(9))
        b = simulate(x, p, substream(9))
        assert np.array_equal(a, b)

    def test_drift_only_is_deterministic(self):
        p = optical(eta=10.0, tau=0.05)
        shape, eta = parameter_walk(200, p, TimeVaryingConfig(0.0, 0.005), substream(0))
        i = np.arange(200)
        assert np.allclose(shape, np.minimum(0.2 * (1 + i * 0.005), 0.35))
        assert np.allclose(eta, np.minimum(10 * (1 + i * 0.005), 200))

    def test_walk_stays_in_bounds(self):
        p = optical(eta=10.0, tau=0.05)
        tv = TimeVaryingConfig(0.01, 0.005)
        for s in range(20):
            shape, eta = parameter_walk(200, p, tv, substream(s))
            assert shape.min() >= 0.15 and shape.max() <= 0.35
            assert eta.min() >= 1 and eta.max() <= 200

    def test_static_matches_in_distribution(self):
        p = optical(eta=10.0, tau=0.05)
        x = np.ones(100, int)
        a = np.concatenate([simulate_time_varying(x, p, TimeVaryingConfig(0, 0), substream(s)).ravel()
                            for s in range(2)])
        b = np.concatenate([simulate(x, p, substream(100 + s)).ravel() for s in range(2)])
        se = math.sqrt(a.var() / a.size + b.var() / b.size)
        assert abs(a.mean() - b.mean()) < 4 * se

    def test_emitted_pulse_uses_its_own_shape(self):
        p = optical(eta=1.0, tau=0.05)
        x = np.array([1, 0, 0, 0])
        tv = TimeVaryingConfig(0.0, 0.1)
        shape, eta = parameter_walk(4, p, tv, substream(0))
        from seqdetect.channel import time_varying_rates
        rates = time_varying_rates(x, p, shape, eta)
        lam = discretize_response(p, max_symbols=4).lam
        assert np.allclose(rates - eta[:, None], lam[:4])

    def test_rejects_start_outside_bounds(self):
        with pytest.raises(ValueError):
            parameter_walk(5, optical(beta=0.5), TimeVaryingConfig(0.01, 0), substream(0))


class TestRandomParams:
    def test_optical_support(self):
        rng = substream(4)
        for _ in range(200):
            p = sample_random_params("optical", rng)
            assert p.beta in OPTICAL_BETAS and p.eta in OPTICAL_ETAS and p.tau in OPTICAL_TAUS
            assert p.alpha == 2 and p.kappa == 10 and p.omega == 2000
        assert len(OPTICAL_BETAS) == 21 and OPTICAL_BETAS[0] == 0.15 and OPTICAL_BETAS[-1] == 0.35

    def test_molecular_support(self):
        rng = substream(4)
        for _ in range(200):
            p = sample_random_params("molecular", rng)
            assert p.c in MOLECULAR_CS and p.mu in MOLECULAR_MUS and p.eta in MOLECULAR_ETAS
            assert p.tau in (0.5, 1.0, 1.5, 2.0) and p.kappa == 1e4
        assert MOLECULAR_TAUS == (0.5, 1.0, 1.5, 2.0)

    def test_beta_frequencies_uniform(self):
        rng = substream(8)
        n = 100_000
        betas = np.array([sample_random_params("optical", rng).beta for _ in range(n)])
        counts = np.array([(np.round(betas, 2) == b).sum() for b in OPTICAL_BETAS])
        assert counts.sum() == n
        sd = math.sqrt(n * (1 / 21) * (20 / 21))
        # 21 simultaneous comparisons; 3.5 sigma keeps the family-wise false alarm rate small
        assert np.all(np.abs(counts - n / 21) < 3.5 * sd)

    def test_pam_scaling(self):
        p = sample_pam_params(4, substream(0))
        assert p.m == 4 and p.tau == pytest.approx(0.1) and p.kappa == pytest.approx(20)
        assert 0.2 <= p.beta <= 0.35 and 10 <= p.eta <= 200

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sample_random_params("acoustic", substream(0))
