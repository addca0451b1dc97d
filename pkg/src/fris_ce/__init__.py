"""Channel estimation for fluid-RIS assisted multi-user uplinks.

Library plus the ``fris-ce`` Monte-Carlo harness. Submodules:

* :mod:`fris_ce.tensor` -- Khatri-Rao products, unfoldings, rank-1 SVD/HOSVD
* :mod:`fris_ce.model` -- scenario generation and received-signal synthesis
* :mod:`fris_ce.estimators` -- LS filters, Khatri-Rao factorizations, NMSE
* :mod:`fris_ce.harness` -- sweeps, CSV output, gnuplot script
"""

from fris_ce.tensor import (
    ConvergenceError,
    DegenerateColumnError,
    DimensionError,
    Rank1Triple,
    TensorError,
    fold3,
    hadamard,
    hosvd_rank1,
    khatri_rao,
    kron_vec,
    parafac4_reconstruct,
    rank1_svd,
    unfold_Y1,
    unfold_Y2,
)

__version__ = "0.1.0"
