"""Channel estimators: matched filter, LS filters and Khatri-Rao factorizations.

Four pipelines are provided, tagged ``LS-Θ``, ``KRF-2``, ``LS-Z`` and
``KRF-3-joint``. The first two assume the motion matrix is known; the last
two treat it as unknown and recover it jointly with ``G`` and ``H``.
"""

from __future__ import annotations

import cmath
import logging
from dataclasses import dataclass, replace

import numpy as np

from fris_ce.model import ChannelSet, ReceivedSignal
from fris_ce.tensor import (
    DegenerateColumnError,
    fold3,
    hosvd_rank1,
    khatri_rao,
    rank1_svd,
    unfold_Y1,
    unfold_Y2,
)

log = logging.getLogger(__name__)

LS_THETA = "LS-Θ"
KRF_2 = "KRF-2"
LS_Z = "LS-Z"
KRF_3 = "KRF-3-joint"

# columns weaker than this fraction of the whole matrix are not factored
DEGENERATE_RTOL = 1e-14


class PilotError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateBundle:
    """Outputs of one estimation pipeline.

    ``Theta_hat``/``Z_hat`` are the raw LS filter outputs; ``Theta_krf`` and
    ``Z_krf`` are the Khatri-Rao products of the recovered factors, computed
    once at factorization time.
    """

    method: str
    Theta_hat: np.ndarray | None = None
    Z_hat: np.ndarray | None = None
    G_hat: np.ndarray | None = None
    H_hat: np.ndarray | None = None
    T_hat: np.ndarray | None = None
    Theta_krf: np.ndarray | None = None
    Z_krf: np.ndarray | None = None


@dataclass(frozen=True)
class NmseReport:
    nmse_theta: float | None = None
    nmse_z: float | None = None
    nmse_G: float | None = None
    nmse_H: float | None = None
    nmse_T: float | None = None


def matched_filter(sig: ReceivedSignal, Xp: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Pilot decorrelation ``(1/T_s) Y_raw Xp^H`` on every block.

    Returns the ``M_r x Q x K x J`` training tensor.
    """
    Xp = np.asarray(Xp, dtype=np.complex128)
    Q, T_s = Xp.shape
    gram = Xp @ Xp.conj().T
    if np.linalg.norm(gram - T_s * np.eye(Q)) > rtol * T_s * np.sqrt(Q):
        raise PilotError("pilot matrix is not orthogonal (Xp Xp^H != T_s I)")
    if sig.Y_raw.shape[1] != T_s:
        raise PilotError(f"received blocks have {sig.Y_raw.shape[1]} symbols, pilots have {T_s}")
    return np.einsum("atkj,qt->aqkj", sig.Y_raw, Xp.conj()) / T_s


def estimate_theta_ls(Y: np.ndarray, Phi: np.ndarray, T_assumed: np.ndarray) -> np.ndarray:
    """LS combined channel ``(1/JK) Y1 conj(Phi ⋄ T)`` for an assumed motion matrix."""
    J = Phi.shape[0]
    K = T_assumed.shape[0]
    return unfold_Y1(Y) @ khatri_rao(Phi, T_assumed).conj() / (J * K)


def estimate_z_ls(Y: np.ndarray, Phi: np.ndarray) -> np.ndarray:
    """LS motion-augmented channel ``(1/J) Y2 conj(Phi)``.

    Only the electronic phase matrix enters, so the estimate is unbiased
    whatever the realized element positions are.
    """
    J = Phi.shape[0]
    return unfold_Y2(Y) @ np.asarray(Phi).conj() / J


def _check_column(col: np.ndarray, total: float, m: int) -> None:
    if not np.all(np.isfinite(col)) or np.linalg.norm(col) <= DEGENERATE_RTOL * total:
        raise DegenerateColumnError("degenerate column", m)


def krf2(Theta_hat: np.ndarray, M_r: int, Q: int):
    """Two-factor Khatri-Rao factorization ``Theta ≈ G.T ⋄ H``.

    Each column is reshaped to an ``M_r x Q`` matrix and replaced by its
    best rank-1 fit; ``sigma`` is split evenly between the two factors.
    Returns ``(G_hat, H_hat)``.
    """
    Theta_hat = np.asarray(Theta_hat, dtype=np.complex128)
    if Theta_hat.shape[0] != M_r * Q:
        raise ValueError(f"Theta_hat has {Theta_hat.shape[0]} rows, expected {M_r * Q}")
    M = Theta_hat.shape[1]
    total = np.linalg.norm(Theta_hat)
    G_hat = np.empty((M, Q), dtype=np.complex128)
    H_hat = np.empty((M_r, M), dtype=np.complex128)
    for m in range(M):
        col = Theta_hat[:, m]
        _check_column(col, total, m)
        try:
            u, v, s = rank1_svd(col.reshape((M_r, Q), order="F"))
        except DegenerateColumnError as exc:
            raise DegenerateColumnError("degenerate column", m) from exc
        root = np.sqrt(s)
        H_hat[:, m] = root * u
        G_hat[m, :] = root * v.conj()
    return G_hat, H_hat


def _principal_cbrt(c: complex) -> complex:
    r, phi = cmath.polar(c)
    return cmath.rect(r ** (1.0 / 3.0), phi / 3.0)


def krf3(Z_hat: np.ndarray, M_r: int, Q: int, K: int, unit_modulus_T: bool = False):
    """Three-factor Khatri-Rao factorization ``Z ≈ T ⋄ G.T ⋄ H``.

    Every column is folded into an ``M_r x Q x K`` array and truncated to
    rank one by HOSVD. The core is split with the principal cube root.

    With ``unit_modulus_T`` each column of ``T_hat`` is first rescaled to
    unit RMS modulus (the scale moves into ``G_hat``) and then projected
    entrywise onto the unit circle.

    Returns ``(T_hat, G_hat, H_hat)``.
    """
    Z_hat = np.asarray(Z_hat, dtype=np.complex128)
    if Z_hat.shape[0] != M_r * Q * K:
        raise ValueError(f"Z_hat has {Z_hat.shape[0]} rows, expected {M_r * Q * K}")
    M = Z_hat.shape[1]
    total = np.linalg.norm(Z_hat)
    T_hat = np.empty((K, M), dtype=np.complex128)
    G_hat = np.empty((M, Q), dtype=np.complex128)
    H_hat = np.empty((M_r, M), dtype=np.complex128)
    for m in range(M):
        col = Z_hat[:, m]
        _check_column(col, total, m)
        try:
            tri = hosvd_rank1(fold3(col, M_r, Q, K))
        except DegenerateColumnError as exc:
            raise DegenerateColumnError("degenerate column", m) from exc
        c = _principal_cbrt(tri.core)
        H_hat[:, m] = c * tri.u1
        G_hat[m, :] = c * tri.u2
        T_hat[:, m] = c * tri.u3
    if unit_modulus_T:
        rms = np.sqrt(np.mean(np.abs(T_hat) ** 2, axis=0))
        T_hat = T_hat / rms
        G_hat = G_hat * rms[:, None]
        T_hat = T_hat / np.abs(T_hat)
    return T_hat, G_hat, H_hat


def run_ls_theta(Y, Phi, T_assumed) -> EstimateBundle:
    return EstimateBundle(method=LS_THETA, Theta_hat=estimate_theta_ls(Y, Phi, T_assumed))


def run_krf2(Y, Phi, T_assumed) -> EstimateBundle:
    M_r, Q = Y.shape[:2]
    Theta_hat = estimate_theta_ls(Y, Phi, T_assumed)
    G_hat, H_hat = krf2(Theta_hat, M_r, Q)
    return EstimateBundle(method=KRF_2, Theta_hat=Theta_hat, G_hat=G_hat, H_hat=H_hat,
                          Theta_krf=khatri_rao(G_hat.T, H_hat))


def run_ls_z(Y, Phi) -> EstimateBundle:
    return EstimateBundle(method=LS_Z, Z_hat=estimate_z_ls(Y, Phi))


def run_krf3(Y, Phi, unit_modulus_T: bool = False) -> EstimateBundle:
    M_r, Q, K = Y.shape[:3]
    Z_hat = estimate_z_ls(Y, Phi)
    T_hat, G_hat, H_hat = krf3(Z_hat, M_r, Q, K, unit_modulus_T=unit_modulus_T)
    return EstimateBundle(method=KRF_3, Z_hat=Z_hat, G_hat=G_hat, H_hat=H_hat, T_hat=T_hat,
                          Z_krf=khatri_rao(T_hat, khatri_rao(G_hat.T, H_hat)))


def _ls_scale(est: np.ndarray, truth: np.ndarray) -> complex | None:
    """``argmin_a ||a*est - truth||``; ``None`` when either side vanishes."""
    den = np.vdot(est, est).real
    if den == 0.0 or not np.any(truth):
        return None
    return complex(np.vdot(est, truth) / den)


def resolve_scaling(bundle: EstimateBundle, truth: ChannelSet, T_true: np.ndarray | None = None) -> EstimateBundle:
    """Remove the per-column scaling ambiguity of the factor estimates.

    Column ``m`` of ``H_hat`` is scaled by the LS-optimal ``alpha_m`` and row
    ``m`` of ``G_hat`` by ``1/alpha_m``. For the three-factor model ``G_hat``
    is further fitted by ``beta_m`` and ``T_hat`` takes ``1/(alpha_m
    beta_m)``, so every factor product is preserved. Columns whose truth is
    zero are left untouched and logged.
    """
    if bundle.H_hat is None or bundle.G_hat is None:
        return bundle
    H_hat = bundle.H_hat.copy()
    G_hat = bundle.G_hat.copy()
    T_hat = None if bundle.T_hat is None else bundle.T_hat.copy()
    for m in range(H_hat.shape[1]):
        alpha = _ls_scale(H_hat[:, m], truth.H[:, m])
        if alpha is None:
            log.warning("resolve_scaling: skipping column %d (zero truth or estimate)", m)
            continue
        H_hat[:, m] *= alpha
        G_hat[m, :] /= alpha
        if T_hat is not None:
            beta = _ls_scale(G_hat[m, :], truth.G[m, :])
            if beta is None:
                log.warning("resolve_scaling: skipping G row %d (zero truth or estimate)", m)
                continue
            G_hat[m, :] *= beta
            T_hat[:, m] /= beta
    return replace(bundle, G_hat=G_hat, H_hat=H_hat, T_hat=T_hat)


def nmse(estimate, truth) -> float:
    """``||estimate - truth||_F^2 / ||truth||_F^2``."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: estimate {estimate.shape}, truth {truth.shape}")
    den = np.vdot(truth, truth).real
    if den == 0.0:
        raise ValueError("nmse undefined for an all-zero truth")
    diff = estimate - truth
    return float(np.vdot(diff, diff).real / den)


def nmse_report(bundle: EstimateBundle, truth: ChannelSet, T_true: np.ndarray) -> NmseReport:
    """NMSE of every quantity the bundle carries.

    Refined products are preferred over raw filter outputs. Factors are
    compared as given, so call :func:`resolve_scaling` first.
    """
    Theta = khatri_rao(truth.G.T, truth.H)
    out = {}
    if bundle.Theta_krf is not None:
        out["nmse_theta"] = nmse(bundle.Theta_krf, Theta)
    elif bundle.Theta_hat is not None:
        out["nmse_theta"] = nmse(bundle.Theta_hat, Theta)
    elif bundle.T_hat is not None:
        # joint method: combined channel from the scale-resolved factors
        out["nmse_theta"] = nmse(khatri_rao(bundle.G_hat.T, bundle.H_hat), Theta)
    if bundle.Z_krf is not None or bundle.Z_hat is not None:
        Z = khatri_rao(T_true, Theta)
        out["nmse_z"] = nmse(bundle.Z_krf if bundle.Z_krf is not None else bundle.Z_hat, Z)
    if bundle.G_hat is not None:
        out["nmse_G"] = nmse(bundle.G_hat, truth.G)
        out["nmse_H"] = nmse(bundle.H_hat, truth.H)
    if bundle.T_hat is not None:
        out["nmse_T"] = nmse(bundle.T_hat, T_true)
    return NmseReport(**out)
