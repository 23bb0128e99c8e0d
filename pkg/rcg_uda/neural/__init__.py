from rcg_uda.neural.checkpoint import load_checkpoint, save_checkpoint
from rcg_uda.neural.gradcheck import check_gradients, numerical_gradient
from rcg_uda.neural.layers import Activation, Dense, GaussianHead, Mlp, MlpGrads
from rcg_uda.neural.losses import adversarial_losses, cross_entropy, l1_loss
from rcg_uda.neural.optim import Adam

__all__ = [
    "Activation",
    "Adam",
    "Dense",
    "GaussianHead",
    "Mlp",
    "MlpGrads",
    "adversarial_losses",
    "check_gradients",
    "cross_entropy",
    "l1_loss",
    "load_checkpoint",
    "numerical_gradient",
    "save_checkpoint",
]
