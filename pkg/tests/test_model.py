import math
from dataclasses import replace

import numpy as np
import pytest

from fris_ce.estimators import matched_filter
from fris_ce.model import (
    ChannelSet,
    ConfigError,
    FrisProtocol,
    SystemConfig,
    build_phase_matrix,
    build_pilot_matrix,
    build_preset_grid,
    build_protocol,
    draw_motion_schedule,
    generate_channels,
    motion_phase,
    noise_variance,
    perturb_positions,
    synthesize_received,
    tile_origins,
)
from fris_ce.tensor import parafac4_reconstruct
from oracles import slice_model_tensor


@pytest.fixture
def cfg():
    return SystemConfig()


def test_config_defaults_are_default_scenario(cfg):
    assert (cfg.M, cfg.Q, cfg.M_r, cfg.T_s, cfg.K) == (12, 4, 10, 4, 4)
    assert cfg.J == cfg.M


@pytest.mark.parametrize("kw, msg", [
    ({"T_s": 3}, "T_s=3 < Q=4"),
    ({"J": 11}, "J=11 < M=12"),
    ({"N": 1}, "N=1 < K=4"),
    ({"N": 20}, "perfect square"),
    ({"sigma_pos": -0.1}, "sigma_pos"),
    ({"M": 0}, "M must be"),
    ({"trials": 2.5}, "trials must be"),
    ({"seed": -1}, "seed"),
    ({"wavelength": 0.0}, "wavelength"),
])
def test_config_invariants(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        SystemConfig(**kw)


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown system keys: Mr"):
        SystemConfig.from_dict({"Mr": 3})
    assert SystemConfig.from_dict({"M": 4, "J": 4}).M == 4


# --- channels -------------------------------------------------------------------

def test_channel_shapes(cfg):
    ch = generate_channels(cfg, np.random.default_rng(0))
    assert ch.G.shape == (12, 4)
    assert ch.H.shape == (10, 12)


def test_channels_deterministic(cfg):
    a = generate_channels(cfg, np.random.default_rng(42))
    b = generate_channels(cfg, np.random.default_rng(42))
    assert a.G.tobytes() == b.G.tobytes() and a.H.tobytes() == b.H.tobytes()


def test_channel_power():
    big = SystemConfig(M=100, Q=500, M_r=100, T_s=500, J=100)
    ch = generate_channels(big, np.random.default_rng(1))
    assert ch.G.size >= 50_000
    p = np.mean(np.abs(np.concatenate([ch.G.ravel(), ch.H.ravel()])) ** 2)
    assert abs(p - 1.0) <= 0.02
    assert abs(np.mean(ch.G)) < 0.02


# --- phase and pilot matrices -------------------------------------------------------

def test_phase_matrix_2pt_dft():
    np.testing.assert_allclose(build_phase_matrix(2, 2), [[1, 1], [1, -1]], atol=1e-15)


def test_phase_matrix_semi_unitary():
    Phi = build_phase_matrix(12, 12)
    np.testing.assert_allclose(Phi.conj().T @ Phi, 12 * np.eye(12), atol=1e-12 * 12)
    Phi = build_phase_matrix(48, 12)
    np.testing.assert_allclose(Phi.conj().T @ Phi, 48 * np.eye(12), atol=1e-12 * 48)
    np.testing.assert_allclose(np.abs(Phi), 1.0, atol=1e-14)
    with pytest.raises(ConfigError):
        build_phase_matrix(3, 4)


def test_pilot_matrix():
    Xp = build_pilot_matrix(4, 4)
    np.testing.assert_allclose(Xp @ Xp.conj().T, 4 * np.eye(4), atol=1e-12 * 4)
    np.testing.assert_array_equal(build_pilot_matrix(1, 5), np.ones((1, 5)))
    Xp = build_pilot_matrix(2, 4)
    gram = Xp @ Xp.conj().T
    assert abs(gram[0, 1]) < 1e-14
    np.testing.assert_allclose(np.diag(gram).real, [4, 4], atol=1e-14)
    with pytest.raises(ConfigError):
        build_pilot_matrix(5, 4)


# --- preset grid and motion ----------------------------------------------------------

def test_grid_single_point_is_tile_center():
    cfg = SystemConfig(M=4, J=4, N=1, K=1, area_side=2.0)
    grid = build_preset_grid(cfg)
    assert grid.shape == (4, 1, 2)
    np.testing.assert_allclose(grid[:, 0, :], tile_origins(cfg) + 0.5)


def test_grid_2x2_spacing():
    cfg = SystemConfig(M=4, J=4, N=4, K=2, area_side=2.0)
    grid = build_preset_grid(cfg)
    pts = grid[0] - tile_origins(cfg)[0]
    np.testing.assert_allclose(sorted(map(tuple, pts)), [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)])


def test_grid_points_inside_tiles():
    rng = np.random.default_rng(3)
    for _ in range(30):
        M = int(rng.integers(1, 20))
        n = int(rng.integers(1, 6))
        cfg = SystemConfig(M=M, J=M, N=n * n, K=1, Q=1, T_s=1, area_side=float(rng.uniform(0.01, 2)))
        side = cfg.area_side / math.sqrt(M)
        local = build_preset_grid(cfg) - tile_origins(cfg)[:, None, :]
        assert np.all(local > 0) and np.all(local < side)


def test_motion_phase_wraps():
    lam = 0.01
    assert motion_phase(lam, lam) == pytest.approx(1.0, abs=1e-14)
    assert motion_phase(lam / 2, lam) == pytest.approx(-1.0, abs=1e-14)


def test_motion_schedule(cfg):
    grid = build_preset_grid(cfg)
    P_cmd, T_cmd = draw_motion_schedule(grid, cfg, np.random.default_rng(4))
    assert P_cmd.shape == (4, 12, 2) and T_cmd.shape == (4, 12)
    np.testing.assert_allclose(np.abs(T_cmd), 1.0, atol=1e-14)
    for m in range(cfg.M):
        assert len({tuple(p) for p in P_cmd[:, m]}) == cfg.K
        for p in P_cmd[:, m]:
            assert np.any(np.all(grid[m] == p, axis=1))
    np.testing.assert_allclose(T_cmd, np.exp(-2j * np.pi * np.linalg.norm(P_cmd, axis=2) / cfg.wavelength))


def test_motion_schedule_needs_enough_presets(cfg):
    grid = build_preset_grid(cfg)[:, :3]
    with pytest.raises(ConfigError):
        draw_motion_schedule(grid, cfg, np.random.default_rng(0))


def test_perturb_zero_is_exact(cfg):
    grid = build_preset_grid(cfg)
    P_cmd, T_cmd = draw_motion_schedule(grid, cfg, np.random.default_rng(5))
    P_real, T_real = perturb_positions(P_cmd, 0.0, cfg.wavelength, np.random.default_rng(6))
    assert T_real.tobytes() == T_cmd.tobytes()
    np.testing.assert_array_equal(P_real, P_cmd)


def test_perturb_radial_distance():
    lam = 0.01
    P_cmd = np.array([[[0.03, 0.04], [0.0, 0.0]]])
    P_real, T_real = perturb_positions(P_cmd, 0.05, lam, np.random.default_rng(7))
    d = np.linalg.norm(P_real, axis=2)
    delta0 = d[0, 0] - 0.05
    # moves along its own direction
    np.testing.assert_allclose(P_real[0, 0] / d[0, 0], [0.6, 0.8])
    np.testing.assert_allclose(T_real[0, 0], np.exp(-2j * np.pi * (0.05 + delta0) / lam))
    assert P_real[0, 1, 1] == 0.0


def test_perturb_phase_statistics():
    lam = 0.01
    sigma = 1 / 20
    P_cmd = np.full((1, 100_000, 2), [0.02, 0.01])
    T_cmd = motion_phase(np.linalg.norm(P_cmd, axis=2), lam)
    _, T_real = perturb_positions(P_cmd, sigma, lam, np.random.default_rng(8))
    phase_err = np.angle(T_real / T_cmd)
    assert np.std(phase_err) == pytest.approx(2 * np.pi * sigma, rel=0.02)
    assert 2 * np.pi * sigma == pytest.approx(0.314, abs=1e-3)
    s_phi = 2 * np.pi * sigma
    expected = 2 - 2 * np.exp(-s_phi**2 / 2)
    assert np.mean(np.abs(T_real - T_cmd) ** 2) == pytest.approx(expected, rel=0.02)
    np.testing.assert_allclose(np.abs(T_real), 1.0, atol=1e-14)


# --- received signal -----------------------------------------------------------------

def test_noiseless_blocks_match_model(cfg):
    rng = np.random.default_rng(9)
    ch = generate_channels(cfg, rng)
    proto = build_protocol(cfg, rng)
    sig = synthesize_received(ch, proto, math.inf, rng)
    assert sig.noise_var == 0.0
    ref = slice_model_tensor(ch.H, ch.G, proto.T_real, proto.Phi)
    for j in range(cfg.J):
        for k in range(cfg.K):
            block = ref[:, :, k, j] @ proto.Xp
            assert np.max(np.abs(sig.Y_raw[:, :, k, j] - block)) <= 1e-13 * np.max(np.abs(block))


def test_scalar_model():
    cfg = SystemConfig(M=1, Q=1, M_r=1, T_s=1, K=1, J=1, N=1, snr_db=10.0)
    ch = ChannelSet(G=np.array([[0.3 - 0.2j]]), H=np.array([[1.1 + 0.5j]]))
    one = np.ones((1, 1), dtype=complex)
    proto = FrisProtocol(Phi=one, Xp=one, preset_grid=np.zeros((1, 1, 2)), P_cmd=np.zeros((1, 1, 2)),
                         T_cmd=one, P_real=np.zeros((1, 1, 2)), T_real=one)
    sig = synthesize_received(ch, proto, cfg.snr_db, np.random.default_rng(10))
    replay = np.random.default_rng(10)
    v = (replay.standard_normal() + 1j * replay.standard_normal()) / math.sqrt(2)
    expected = ch.H[0, 0] * ch.G[0, 0] + math.sqrt(sig.noise_var) * v
    assert sig.noise_var == pytest.approx(0.1)
    assert sig.Y_raw[0, 0, 0, 0] == pytest.approx(expected, abs=1e-15)


def test_noiseless_parafac_identity(cfg):
    rng = np.random.default_rng(11)
    ch = generate_channels(cfg, rng)
    proto = build_protocol(cfg, rng)
    Y = matched_filter(synthesize_received(ch, proto, math.inf, rng), proto.Xp)
    ref = parafac4_reconstruct(ch.H, ch.G, proto.T_real, proto.Phi)
    assert np.linalg.norm(Y - ref) <= 1e-12 * np.linalg.norm(ref)


def test_signal_power_matches_snr_normalization(cfg):
    rng = np.random.default_rng(12)
    powers = []
    proto = build_protocol(cfg, rng)
    for _ in range(10_000 // 48):
        ch = generate_channels(cfg, rng)
        sig = synthesize_received(ch, proto, math.inf, rng)
        powers.append(np.mean(np.abs(sig.Y_raw) ** 2))
    assert np.mean(powers) == pytest.approx(cfg.M * cfg.Q, rel=0.05)
    assert noise_variance(cfg.M, cfg.Q, 30.0) == pytest.approx(48e-3)


def test_noise_variance_empirical(cfg):
    rng = np.random.default_rng(13)
    ch = ChannelSet(G=np.zeros((cfg.M, cfg.Q)), H=np.zeros((cfg.M_r, cfg.M)))
    proto = build_protocol(cfg, rng)
    sig = synthesize_received(ch, proto, 10.0, rng)
    assert np.var(sig.Y_raw) == pytest.approx(sig.noise_var, rel=0.05)


def test_protocol_structure_under_subframe_permutation(cfg):
    rng = np.random.default_rng(14)
    ch = generate_channels(cfg, rng)
    proto = build_protocol(cfg, rng)
    perm = rng.permutation(cfg.J)
    kperm = rng.permutation(cfg.K)
    permuted = replace(proto, Phi=proto.Phi[perm], T_real=proto.T_real[kperm])
    a = synthesize_received(ch, proto, math.inf, np.random.default_rng(0)).Y_raw
    b = synthesize_received(ch, permuted, math.inf, np.random.default_rng(0)).Y_raw
    np.testing.assert_allclose(b, a[:, :, kperm][:, :, :, perm], atol=1e-12)


def test_received_determinism(cfg):
    def draw():
        rng = np.random.default_rng(123)
        ch = generate_channels(cfg, rng)
        proto = build_protocol(cfg, rng)
        return synthesize_received(ch, proto, 20.0, rng).Y_raw.tobytes()
    assert draw() == draw()


def test_unit_modulus_closure(cfg):
    proto = build_protocol(SystemConfig(sigma_pos=0.1), np.random.default_rng(15))
    for X in (proto.Phi, proto.T_cmd, proto.T_real):
        np.testing.assert_allclose(np.abs(X), 1.0, atol=1e-14)
