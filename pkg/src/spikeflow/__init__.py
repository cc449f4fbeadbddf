"""Spiking swin transformer for event-based optical flow, on a small numpy autodiff core."""

import os as _os

# cap BLAS threads before numpy loads
if _os.environ.get("SDFF_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["SDFF_THREADS"])

from .kernels import BACKEND  # noqa: E402
from .model import ModelConfig, SpikeFlowNet, tiny_config  # noqa: E402
from .tensor import Tensor, no_grad  # noqa: E402

__all__ = ["BACKEND", "ModelConfig", "SpikeFlowNet", "Tensor", "no_grad", "tiny_config"]
__version__ = "0.1.0"
