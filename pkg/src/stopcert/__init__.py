"""One-step early-stopping certificates for shallow-network gradient descent."""

from .certificate import (
    CertifyConfig,
    ChainReport,
    PoolSampler,
    StopCertificate,
    beta_star,
    certify,
    chain_check,
    decompose_error,
    gamma1,
    gap,
    l_g,
    m1_conservative,
    m1_monte_carlo,
    next_gamma,
    nu_bounds,
    omega_bound,
    omegas,
    phi,
    population_bound,
    stopping_time,
)
from .errors import CertificateError, CertifyRefused
from .net import (
    Activation,
    Dataset,
    NetworkState,
    activation,
    empirical_loss,
    forward,
    gd_step,
    grad_weights,
    init_weights,
    test_loss,
    training_error,
)
from .ntk import NtkSnapshot, SpectralBounds, eigvec_rotation, ntk_matrix, spectral_bounds
from .numlin import EigenPairs, principal_angle, project_split, sym_eig
from .vdp import MpcConfig, VdpState, generate_dataset, mpc_control, vdp_step

__version__ = "0.1.0"
