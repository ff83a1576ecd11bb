from .affine import AffineDenoiser, affine_denoise, affine_grad, sigma_bin_edges
from .base import Denoiser, preconditioning
from .conv import ConvDenoiser, conv_denoise, conv_grad
from .gradcheck import gradcheck
from .oracle import GaussianOracle, GaussianOracleSpec, oracle_denoise

__all__ = [
    "AffineDenoiser", "ConvDenoiser", "Denoiser", "GaussianOracle", "GaussianOracleSpec",
    "affine_denoise", "affine_grad", "conv_denoise", "conv_grad", "gradcheck",
    "oracle_denoise", "preconditioning", "sigma_bin_edges",
]
