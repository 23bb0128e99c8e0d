__version__ = "0.1.0"

import logging

from rcg_uda import exception
from rcg_uda.config import RunConfig
from rcg_uda.prior import JointGaussianChain, RcgParams, build_joint

logging.getLogger("transitions").setLevel(logging.WARNING)
logger = logging.getLogger(__name__)

__all__ = [
    "JointGaussianChain",
    "RcgParams",
    "RunConfig",
    "build_joint",
    "exception",
]
