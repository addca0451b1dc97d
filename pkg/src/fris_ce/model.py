"""Scenario generation: channels, training protocol and received blocks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of one FRIS uplink training scenario.

    Defaults follow the evaluated scenario (M, Q, M_r, T_s, K) =
    (12, 4, 10, 4, 4) with ``J = M``. ``sigma_pos`` is in wavelengths,
    ``wavelength`` and ``area_side`` in meters.
    """

    M: int = 12
    Q: int = 4
    M_r: int = 10
    T_s: int = 4
    K: int = 4
    J: int = 12
    wavelength: float = 0.01
    N: int = 16
    area_side: float = 0.1
    snr_db: float = 30.0
    sigma_pos: float = 0.05
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("M", "Q", "M_r", "T_s", "K", "J", "N", "trials"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.T_s < self.Q:
            raise ConfigError(f"T_s={self.T_s} < Q={self.Q}: pilots cannot be orthogonal")
        if self.J < self.M:
            raise ConfigError(f"J={self.J} < M={self.M}: phase matrix cannot be semi-unitary")
        if self.N < self.K:
            raise ConfigError(f"N={self.N} < K={self.K}: not enough preset positions")
        if math.isqrt(self.N) ** 2 != self.N:
            raise ConfigError(f"N={self.N} must be a perfect square (square preset lattice)")
        if not (self.wavelength > 0 and math.isfinite(self.wavelength)):
            raise ConfigError(f"wavelength must be positive, got {self.wavelength!r}")
        if not (self.area_side > 0 and math.isfinite(self.area_side)):
            raise ConfigError(f"area_side must be positive, got {self.area_side!r}")
        if not (self.sigma_pos >= 0 and math.isfinite(self.sigma_pos)):
            raise ConfigError(f"sigma_pos must be >= 0, got {self.sigma_pos!r}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ConfigError(f"snr_db must be a number or +inf, got {self.snr_db!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, d: dict) -> SystemConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown system keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def noise_var(self) -> float:
        return noise_variance(self.M, self.Q, self.snr_db)


def noise_variance(M: int, Q: int, snr_db: float) -> float:
    """Per-entry noise variance at the BS before matched filtering.

    With CN(0, 1) channels and unit-modulus pilots and reflection
    coefficients, the noiseless per-entry received power is ``M * Q``.
    """
    if snr_db == math.inf:
        return 0.0
    return M * Q * 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class ChannelSet:
    G: np.ndarray  # M x Q, users -> FRIS
    H: np.ndarray  # M_r x M, FRIS -> BS


@dataclass(frozen=True)
class FrisProtocol:
    """Training-phase configuration of the surface.

    ``preset_grid`` is ``M x N x 2``; ``P_cmd`` and ``P_real`` are
    ``K x M x 2`` planar coordinates relative to the surface center.
    """

    Phi: np.ndarray
    Xp: np.ndarray
    preset_grid: np.ndarray
    P_cmd: np.ndarray
    T_cmd: np.ndarray
    P_real: np.ndarray
    T_real: np.ndarray


@dataclass(frozen=True)
class ReceivedSignal:
    Y_raw: np.ndarray  # M_r x T_s x K x J
    noise_var: float


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def generate_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    G = crandn(rng, (cfg.M, cfg.Q))
    H = crandn(rng, (cfg.M_r, cfg.M))
    return ChannelSet(G=G, H=H)


def _dft_rows(n_rows: int, size: int) -> np.ndarray:
    r = np.arange(n_rows)[:, None]
    c = np.arange(size)[None, :]
    # integer product mod size keeps the angle exact for large indices
    return np.exp(-2j * np.pi * ((r * c) % size) / size)


def build_phase_matrix(J: int, M: int) -> np.ndarray:
    """First ``M`` columns of the ``J``-point DFT matrix (``Phi^H Phi = J I``)."""
    if J < M:
        raise ConfigError(f"J={J} < M={M}: phase matrix cannot be semi-unitary")
    return _dft_rows(J, J)[:, :M]


def build_pilot_matrix(Q: int, T_s: int) -> np.ndarray:
    """First ``Q`` rows of the ``T_s``-point DFT matrix (``Xp Xp^H = T_s I``)."""
    if T_s < Q:
        raise ConfigError(f"T_s={T_s} < Q={Q}: pilots cannot be orthogonal")
    return _dft_rows(Q, T_s)


def tile_origins(cfg: SystemConfig) -> np.ndarray:
    """Lower-left corner of each element's square tile, ``M x 2``.

    Tiles of side ``area_side / sqrt(M)`` are laid row by row on a
    ``ceil(sqrt(M))``-wide grid centered on the origin.
    """
    side = cfg.area_side / math.sqrt(cfg.M)
    cols = math.ceil(math.sqrt(cfg.M))
    rows = math.ceil(cfg.M / cols)
    m = np.arange(cfg.M)
    origins = np.stack([(m % cols) * side, (m // cols) * side], axis=1)
    return origins - np.array([cols * side, rows * side]) / 2.0


def build_preset_grid(cfg: SystemConfig) -> np.ndarray:
    """``M x N x 2`` preset positions, a ``sqrt(N) x sqrt(N)`` lattice per tile.

    Lattice points sit at the centers of the ``sqrt(N)**2`` sub-cells of the
    tile, so ``N = 1`` gives the tile center and the spacing is
    ``side / sqrt(N)``.
    """
    side = cfg.area_side / math.sqrt(cfg.M)
    n = math.isqrt(cfg.N)
    offs = (np.arange(n) + 0.5) * side / n
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    local = np.stack([ox.ravel(), oy.ravel()], axis=1)
    return tile_origins(cfg)[:, None, :] + local[None, :, :]


def motion_phase(distance, wavelength: float) -> np.ndarray:
    """``exp(-j 2 pi d / lambda)`` for radial distance(s) ``d``."""
    return np.exp(-2j * np.pi * np.asarray(distance, dtype=float) / wavelength)


def draw_motion_schedule(grid: np.ndarray, cfg: SystemConfig, rng: np.random.Generator):
    """Pick ``K`` distinct preset points per element; returns ``(P_cmd, T_cmd)``.

    The same schedule is replayed in every sub-frame, so only one ``K x M``
    motion matrix exists.
    """
    M, N, _ = grid.shape
    if N < cfg.K:
        raise ConfigError(f"N={N} < K={cfg.K}: not enough preset positions")
    P_cmd = np.empty((cfg.K, M, 2))
    for m in range(M):
        idx = rng.choice(N, size=cfg.K, replace=False)
        P_cmd[:, m, :] = grid[m, idx, :]
    T_cmd = motion_phase(np.linalg.norm(P_cmd, axis=2), cfg.wavelength)
    return P_cmd, T_cmd


def perturb_positions(P_cmd: np.ndarray, sigma_pos: float, wavelength: float, rng: np.random.Generator):
    """Realized positions under a radial Gaussian positioning error.

    ``sigma_pos`` is in wavelengths. The distance ``||p||`` grows by
    ``delta ~ N(0, (sigma_pos*lambda)^2)`` and the point moves along its
    radial direction (along +x for a point at the origin).
    """
    if sigma_pos < 0:
        raise ConfigError(f"sigma_pos must be >= 0, got {sigma_pos!r}")
    d_cmd = np.linalg.norm(P_cmd, axis=2)
    delta = sigma_pos * wavelength * rng.standard_normal(d_cmd.shape)
    d_real = d_cmd + delta
    direction = np.zeros_like(P_cmd)
    direction[..., 0] = 1.0
    nz = d_cmd > 0
    direction[nz] = P_cmd[nz] / d_cmd[nz][:, None]
    P_real = P_cmd + delta[..., None] * direction
    return P_real, motion_phase(d_real, wavelength)


def build_protocol(cfg: SystemConfig, rng: np.random.Generator) -> FrisProtocol:
    Phi = build_phase_matrix(cfg.J, cfg.M)
    Xp = build_pilot_matrix(cfg.Q, cfg.T_s)
    grid = build_preset_grid(cfg)
    P_cmd, T_cmd = draw_motion_schedule(grid, cfg, rng)
    P_real, T_real = perturb_positions(P_cmd, cfg.sigma_pos, cfg.wavelength, rng)
    return FrisProtocol(Phi=Phi, Xp=Xp, preset_grid=grid, P_cmd=P_cmd, T_cmd=T_cmd,
                        P_real=P_real, T_real=T_real)


def synthesize_received(ch: ChannelSet, proto: FrisProtocol, snr_db: float,
                        rng: np.random.Generator) -> ReceivedSignal:
    """Received blocks ``H diag(phi_j * t_k) G Xp + V`` for every (j, k).

    The realized motion matrix is used. Noise is CN(0, sigma_v^2) with
    ``sigma_v^2 = M Q 10^(-snr_db/10)``; ``snr_db = inf`` switches it off
    while still consuming the same random draws.
    """
    H, G, Xp = ch.H, ch.G, proto.Xp
    J, M = proto.Phi.shape
    K = proto.T_real.shape[0]
    Q, T_s = Xp.shape
    if G.shape != (M, Q) or H.shape[1] != M or proto.T_real.shape != (K, M):
        raise ValueError(
            f"inconsistent shapes: H {H.shape}, G {G.shape}, T {proto.T_real.shape}, "
            f"Phi {proto.Phi.shape}, Xp {Xp.shape}"
        )
    GXp = G @ Xp
    Y = np.empty((H.shape[0], T_s, K, J), dtype=np.complex128)
    for j in range(J):
        for k in range(K):
            w = proto.Phi[j] * proto.T_real[k]
            Y[:, :, k, j] = (H * w) @ GXp
    noise_var = noise_variance(M, Q, snr_db)
    V = crandn(rng, Y.shape)
    if noise_var > 0:
        Y += math.sqrt(noise_var) * V
    return ReceivedSignal(Y_raw=Y, noise_var=noise_var)
