import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import iso, rand_psd
from netsense.errors import ShapeError, SingularFim
from netsense.fim import (
    assemble_F0_zeta,
    block_F1,
    block_F2,
    block_F3,
    chain_rule_U,
    data_fim,
    fim_to_csv,
    hermitian_basis,
    hermitian_coords,
    pcrb,
    pcrb_of,
    pfim,
    pfim_map_R,
    pfim_map_W,
    prior_fim,
    zeta_blocks,
)
from netsense.scenario import GaussianPrior, draw_samples, make_scenario


@pytest.fixture(scope="module")
def tri():
    # three BSs so that every zero pattern has entries to check
    sc = make_scenario(
        bs_positions=[[0.87, 0.0], [-0.87, 0.0], [0.0, 1.5]], Mt=3, Mr=3, mc_samples=3
    )
    return sc, draw_samples(sc)


def _W(rng, ss):
    return np.linalg.inv(np.eye(ss.Mr) + rand_psd(rng, ss.Mr, n=ss.N))


def test_zero_transmit_gives_zero_blocks(small, rng):
    sc, ss = small
    R = np.zeros((ss.N, ss.Mt, ss.Mt))
    for blk in zeta_blocks(ss, R, _W(rng, ss)):
        assert not np.any(blk)


def test_F2_zero_pattern(tri, rng):
    sc, ss = tri
    N, K = ss.N, ss.K
    F2 = block_F2(ss, rand_psd(rng, ss.Mt, n=N), _W(rng, ss)).reshape(ss.S, N, K, N, N, K)
    for n in range(N):
        for u in range(N):
            for w in range(N):
                blk = F2[:, n, :, u, w, :]
                if n not in (u, w):
                    assert not np.any(blk)
                else:
                    assert np.any(blk)


def test_F3_block_diagonal_and_psd(tri, rng):
    sc, ss = tri
    N, K = ss.N, ss.K
    F3 = block_F3(ss, rand_psd(rng, ss.Mt, n=N), _W(rng, ss)).reshape(ss.S, N, N, K, N, N, K)
    for a in range(N):
        for b in range(N):
            for c in range(N):
                for d in range(N):
                    blk = F3[:, a, b, :, c, d, :]
                    if (a, b) != (c, d):
                        assert not np.any(blk)
                    else:
                        for s in range(ss.S):
                            np.testing.assert_allclose(blk[s], blk[s].conj().T, atol=1e-12 * np.abs(blk[s]).max())
                            w = np.linalg.eigvalsh(blk[s])
                            assert w[0] >= -1e-9 * np.abs(w).max()


def test_F1_hermitian(small, rng):
    sc, ss = small
    F1 = block_F1(ss, rand_psd(rng, ss.Mt, n=ss.N), _W(rng, ss))
    np.testing.assert_allclose(F1, np.swapaxes(F1.conj(), -1, -2), atol=1e-10 * np.abs(F1).max())


def test_assembly_symmetric_psd(small, rng):
    sc, ss = small
    F = assemble_F0_zeta(*zeta_blocks(ss, rand_psd(rng, ss.Mt, n=ss.N), _W(rng, ss)))
    assert np.array_equal(F, np.swapaxes(F, -1, -2))
    for Fs in F:
        assert np.linalg.eigvalsh(Fs)[0] >= -1e-9 * np.linalg.norm(Fs)


def test_assembly_shape_errors():
    with pytest.raises(ShapeError):
        assemble_F0_zeta(np.zeros((2, 2)), np.zeros((3, 8)), np.zeros((8, 8)))


def test_shape_errors(small):
    sc, ss = small
    with pytest.raises(ShapeError):
        pfim(ss, np.zeros((ss.N, ss.Mt + 1, ss.Mt + 1)))


def test_chain_rule_single():
    jac = np.array([[[0.3, -0.7]]])  # N=1, K=1
    U = chain_rule_U(jac)
    assert U.shape == (4, 3)
    np.testing.assert_array_equal(U[:2, 0], [0.3, -0.7])
    np.testing.assert_array_equal(U[2:, 1:], np.eye(2))


def test_chain_rule_sparsity(small):
    sc, ss = small
    N, K = ss.N, ss.K
    U = ss.U(0)
    assert np.count_nonzero(U) == 2 * N * K + 2 * N * N * K


def test_prior_fim():
    Fp = prior_fim([0.03, 0.048], 2)
    np.testing.assert_allclose(np.diag(Fp)[:4], [1 / 0.0009] * 2 + [1 / 0.048**2] * 2)
    assert not np.any(Fp[4:]) and not np.any(Fp[:, 4:])


def test_prior_fim_monte_carlo():
    rng = np.random.default_rng(0)
    r = np.array([0.03, 0.048])
    q = rng.standard_normal((100_000, 2, 2)) * r[None, :, None]
    score = (-q / r[None, :, None] ** 2).reshape(-1, 4)
    emp = score.T @ score / len(score)
    np.testing.assert_allclose(emp, prior_fim(r, 2)[:4, :4], rtol=0.02, atol=0.02 * emp.max())


def test_pfim_approaches_prior_for_huge_noise(small):
    sc, ss = small
    Q = np.stack([1e12 * sc.sigma2 * np.eye(sc.Mr)] * sc.N)
    F = pfim(ss, iso(sc), Q=Q)
    Fp = prior_fim(ss.radii, ss.N)
    assert np.linalg.norm(F - Fp) <= 1e-6 * np.linalg.norm(Fp)


def test_loewner_noise(small, rng):
    sc, ss = small
    R = iso(sc)
    F0 = pfim(ss, R)
    for _ in range(5):
        Q = rand_psd(rng, sc.Mr, sc.sigma2 * rng.uniform(0.1, 10), n=sc.N)
        F = pfim(ss, R, Q=Q)
        w = np.linalg.eigvalsh(F0 - F)
        assert w[0] >= -1e-9 * np.abs(w).max()
        assert pcrb(F0, sc.K) <= pcrb(F, sc.K)


def test_pfim_symmetric_pd(small):
    sc, ss = small
    F = pfim(ss, iso(sc))
    assert np.array_equal(F, F.T)
    assert np.linalg.eigvalsh(F)[0] > 0


def test_target_relabelling(small):
    sc, ss = small
    perm = dict(
        positions=ss.positions[:, ::-1], theta=ss.theta[..., ::-1], jac=ss.jac[:, :, ::-1],
        A=ss.A[..., ::-1], Adot=ss.Adot[..., ::-1], V=ss.V[..., ::-1], Vdot=ss.Vdot[..., ::-1],
        gain=ss.gain[..., ::-1], radii=ss.radii[::-1],
    )
    ss2 = ss.__class__(**{**ss.__dict__, **perm})
    R = iso(sc)
    assert pcrb_of(ss2, R) == pytest.approx(pcrb_of(ss, R), rel=1e-12)


def test_pcrb_examples():
    F = np.diag([2.0, 4.0, 8.0, 16.0, 3.0, 5.0])
    assert pcrb(F, 2) == pytest.approx(0.5 + 0.25 + 0.125 + 1 / 16)
    alpha = 7.0
    assert pcrb(prior_fim([alpha**-0.5], 1) + np.diag([0, 0, 1.0, 1.0]), 1) == pytest.approx(2 / alpha)


def test_pcrb_monotone_under_psd_addition(rng):
    for _ in range(10):
        X = rng.standard_normal((8, 8))
        F = X @ X.T + 0.1 * np.eye(8)
        Y = rng.standard_normal((8, 3))
        assert pcrb(F + Y @ Y.T, 2) <= pcrb(F, 2) + 1e-12


def test_pcrb_fallback_and_singular():
    # singular nuisance block but informative positions: pseudo-inverse path
    F = np.zeros((6, 6))
    F[:2, :2] = np.eye(2)
    res = pcrb(F, 1, detail=True)
    assert res.fallback and res.value == pytest.approx(2.0)
    with pytest.raises(SingularFim):
        pcrb(np.zeros((6, 6)), 1)
    with pytest.raises(ShapeError):
        pcrb(np.eye(3), 2)


def test_snapshots_scale_data_fim(small):
    sc, ss = small
    W = np.broadcast_to(np.eye(sc.Mr), (sc.N, sc.Mr, sc.Mr))
    one = ss.__class__(**{**ss.__dict__, "snapshots": 1})
    np.testing.assert_allclose(data_fim(ss, iso(sc), W), ss.snapshots * data_fim(one, iso(sc), W), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_hermitian_coords_round_trip(M, seed):
    rng = np.random.default_rng(seed)
    X = rand_psd(rng, M) + rng.standard_normal() * np.eye(M)
    B = hermitian_basis(M)
    np.testing.assert_allclose(np.einsum("j,jab->ab", hermitian_coords(X), B), X, atol=1e-12)


def test_linear_maps(small, rng):
    sc, ss = small
    R = rand_psd(rng, sc.Mt, 1.0, n=sc.N)
    W = _W(rng, ss)
    F = pfim(ss, R, W=W)
    Fc, Phi = pfim_map_R(ss, W)
    lin = Fc + sum(np.einsum("j,jab->ab", hermitian_coords(R[n]), Phi[n]) for n in range(sc.N))
    np.testing.assert_allclose(lin, F, rtol=1e-10, atol=1e-10 * np.abs(F).max())
    Fc, Phi = pfim_map_W(ss, R)
    lin = Fc + sum(np.einsum("j,jab->ab", hermitian_coords(W[n]), Phi[n]) for n in range(sc.N))
    np.testing.assert_allclose(lin, F, rtol=1e-10, atol=1e-10 * np.abs(F).max())


def test_csv_dump(small, tmp_path):
    sc, ss = small
    F = pfim(ss, iso(sc))
    fim_to_csv(F, tmp_path / "f.csv", sc.K)
    back = np.loadtxt(tmp_path / "f.csv", delimiter=",")
    np.testing.assert_allclose(back, F, rtol=1e-15)
    assert "pcrb=" in (tmp_path / "f.csv").read_text().splitlines()[0]
