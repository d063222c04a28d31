import numpy as np
import pytest

import seqdetect.viterbi as vit
from oracles import all_sequences_ml, log_poisson_pmf
from seqdetect.channel import ChannelParams, discretize_response, random_symbols, simulate
from seqdetect.rng import substream
from seqdetect.viterbi import (
    CsiPerturbation, TrellisConfig, branch_metric, branch_rate, perturb_csi, predecessors, viterbi_decode,
)


def small_channel(m, beta, eta, seed=0):
    # 5 samples per symbol keeps brute force cheap
    return ChannelParams.optical(beta=beta, eta=eta, tau=0.025, omega=200.0, m=m)


def test_predecessors_binary():
    assert predecessors(5, 3, 2) == [2, 6]


def test_predecessors_base_m():
    M, m = 2, 4
    for u in range(m**M):
        for p in predecessors(u, M, m):
            assert (p * m + u % m) % m**M == u


def test_branch_rate_silence():
    p = ChannelParams.optical(eta=3.0)
    r = discretize_response(p)
    assert np.allclose(branch_rate(0, 0, r, 3.0, 3), 3.0)


def test_branch_rate_memoryless():
    p = ChannelParams.optical(eta=2.0, m=4)
    r = discretize_response(p)
    assert np.allclose(branch_rate(0, 3, r, 2.0, 0, 4), r.lam[0] + 2.0)
    assert np.allclose(branch_rate(0, 1, r, 2.0, 0, 4), r.lam[0] / 3 + 2.0)


def test_branch_rate_history():
    p = ChannelParams.optical(eta=1.0)
    r = discretize_response(p)
    # state 0b101: symbols (oldest first) 1, 0, 1; next symbol 1 -> state 0b011
    rate = branch_rate(0b101, 0b011, r, 1.0, 3)
    assert np.allclose(rate, r.lam[0] + r.lam[1] + r.lam[3] + 1.0)


def test_branch_rate_rejects_invalid_transition():
    r = discretize_response(ChannelParams.optical())
    with pytest.raises(ValueError, match="predecessor"):
        branch_rate(1, 5, r, 1.0, 3)


def test_branch_metric_zero_counts():
    p = ChannelParams.optical(eta=1.0)
    r = discretize_response(p)
    rate = branch_rate(2, 5, r, 1.0, 3)
    assert branch_metric(np.zeros(p.a), 2, 5, r, 1.0, 3) == pytest.approx(-rate.sum())


def test_branch_metric_noise_only():
    p = ChannelParams.optical(eta=1.0)
    r = discretize_response(p)
    assert branch_metric(np.ones(p.a), 0, 0, r, 1.0, 3) == pytest.approx(-p.a)


def test_branch_metric_zero_rate_with_counts():
    p = ChannelParams.optical(eta=0.0)
    r = discretize_response(p)
    y = np.zeros(p.a)
    y[0] = 1
    assert branch_metric(y, 0, 0, r, 0.0, 2) == -np.inf
    assert branch_metric(np.zeros(p.a), 0, 0, r, 0.0, 2) == 0.0


def test_branch_metric_ranking_matches_full_pmf():
    p = ChannelParams.optical(eta=5.0, beta=0.3)
    r = discretize_response(p)
    for s in range(30):
        rng = substream(2, s)
        y = rng.poisson(10, p.a)
        u_next_a, u_next_b = 0b010, 0b011
        u_prev = predecessors(u_next_a, 3)[rng.integers(2)]
        ma = branch_metric(y, u_prev, u_next_a, r, 5.0, 3)
        mb = branch_metric(y, u_prev, u_next_b, r, 5.0, 3)
        full = [sum(log_poisson_pmf(int(yj), float(lj)) for yj, lj in zip(y, branch_rate(u_prev, u, r, 5.0, 3)))
                for u in (u_next_a, u_next_b)]
        assert (ma > mb) == (full[0] > full[1])
        assert ma - mb == pytest.approx(full[0] - full[1], rel=1e-9, abs=1e-9)


def test_oracle_equivalence_full_beam():
    checked = 0
    for s in range(220):
        rng = substream(100, s)
        m = [2, 4][s % 2]
        M = int(rng.integers(0, 5))
        K = int(rng.integers(1, 13 if m == 2 else 7))
        p = small_channel(m, beta=float(rng.uniform(0.1, 0.35)), eta=float(rng.choice([0.5, 2.0, 10.0])))
        resp = discretize_response(p, max_symbols=K)
        x = random_symbols(K, m, rng)
        y = simulate(x, p, rng, resp)
        cfg = TrellisConfig(M, m**M, m)
        decoded, score = viterbi_decode(y, p, cfg, resp, return_score=True)
        best, scores = all_sequences_ml(y, m, resp.lam, p.eta, M)
        assert np.array_equal(decoded, best), (s, m, M, K)
        # the trellis score omits only the sequence-independent log y! term
        from scipy.special import gammaln
        assert score - gammaln(y + 1.0).sum() == pytest.approx(scores.max(), rel=1e-9, abs=1e-6)
        checked += 1
    assert checked >= 200


def test_memoryless_reduces_to_symbol_decisions():
    p = ChannelParams.optical(beta=0.05, eta=1.0, tau=0.1, m=4)
    resp = discretize_response(p, max_symbols=40)
    x = random_symbols(40, 4, substream(3))
    y = simulate(x, p, substream(4), resp)
    d = viterbi_decode(y, p, TrellisConfig(0, 1, 4), resp)
    amp = np.arange(4) / 3
    per_symbol = []
    for k in range(40):
        ll = [sum(log_poisson_pmf(int(v), a * l + p.eta) for v, l in zip(y[k], resp.lam[0])) for a in amp]
        per_symbol.append(int(np.argmax(ll)))
    assert d.tolist() == per_symbol


def test_metric_shift_invariance(monkeypatch):
    p = small_channel(2, 0.3, 2.0)
    cases = []
    for s in range(20):
        rng = substream(7, s)
        resp = discretize_response(p, max_symbols=20)
        x = random_symbols(20, 2, rng)
        y = simulate(x, p, rng, resp)
        cases.append((y, resp, viterbi_decode(y, p, TrellisConfig(3, 4), resp)))
    original = vit._poisson_metric
    monkeypatch.setattr(vit, "_poisson_metric", lambda y, r: original(y, r) + 3.7 * y.sum(axis=-1) - 11.0)
    for y, resp, d0 in cases:
        assert np.array_equal(viterbi_decode(y, p, TrellisConfig(3, 4), resp), d0)


def test_deterministic():
    p = ChannelParams.optical()
    rng = substream(5)
    x = random_symbols(60, 2, rng)
    y = simulate(x, p, rng)
    a = viterbi_decode(y, p, TrellisConfig(99, 100))
    b = viterbi_decode(y, p, TrellisConfig(99, 100))
    assert np.array_equal(a, b)


def test_effective_beam_clamped():
    assert TrellisConfig(3, 100).effective_beam == 8
    assert TrellisConfig(99, 100).effective_beam == 100
    assert TrellisConfig(0, 5).effective_beam == 1


def test_rejects_mismatched_modulation():
    p = ChannelParams.optical(m=4)
    with pytest.raises(ValueError):
        viterbi_decode(np.zeros((3, p.a)), p, TrellisConfig(2, 4, 2))


def test_empty_sequence():
    p = ChannelParams.optical()
    assert viterbi_decode(np.zeros((0, p.a)), p, TrellisConfig(2, 4)).shape == (0,)


class TestCsiPerturbation:
    def test_identity_at_zero(self):
        p = ChannelParams.optical()
        assert perturb_csi(p, CsiPerturbation(0.0), substream(0)) == p

    def test_spread(self):
        p = ChannelParams.optical(beta=0.2)
        rng = substream(1)
        betas = np.array([perturb_csi(p, CsiPerturbation(0.05, ("beta",)), rng).beta for _ in range(100_000)])
        sd_of_sd = 0.01 / np.sqrt(2 * (len(betas) - 1))
        assert abs(betas.std(ddof=1) - 0.01) < 3 * sd_of_sd
        assert abs(betas.mean() - 0.2) < 3 * 0.01 / np.sqrt(len(betas))

    def test_default_sets(self):
        po = ChannelParams.optical()
        pm = ChannelParams.molecular()
        assert set(po.csi_names) == {"beta", "eta"}
        assert set(pm.csi_names) == {"c", "mu", "eta"}
        q = perturb_csi(pm, CsiPerturbation(0.05), substream(2))
        assert q.c != pm.c and q.mu != pm.mu and q.eta != pm.eta and q.tau == pm.tau

    def test_positivity(self):
        p = ChannelParams.optical(beta=0.2)
        rng = substream(3)
        assert all(perturb_csi(p, CsiPerturbation(2.0), rng).beta > 0 for _ in range(2000))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            CsiPerturbation(-0.1)


def test_beam_width_trend_table_setup():
    # narrower beams can only lose likelihood; BER should not improve beyond noise
    p = ChannelParams.optical(beta=0.2, eta=1.0, tau=0.025)
    resp = discretize_response(p, max_symbols=100)
    err = {10: 0, 100: 0}
    n = 150
    for i in range(n):
        rng = substream(1, i)
        x = random_symbols(100, 2, rng)
        y = simulate(x, p, rng, resp)
        for N in err:
            err[N] += int((viterbi_decode(y, p, TrellisConfig(99, N), resp) != x).sum())
    tol = 3 * np.sqrt(err[10] + 1)
    assert err[100] <= err[10] + tol
