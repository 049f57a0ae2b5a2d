"""Teacher/student transfer for time-series fault classification.

Train a stacked sparse-autoencoder teacher, grow it into a wider/deeper
student with function-preserving Net2Net steps, then fine-tune the student
on a small labelled target set with cross-entropy plus class-wise MMD.
"""

from .adapt import AdaptConfig, AdaptReport, evaluate, fine_tune, joint_grad, joint_loss
from .mmd import KernelSpec, classwise_mmd2, median_bandwidth, mmd2_biased
from .net2net import TransformPlan, apply_plan, deepen, plan_transform, random_mapping, widen
from .nn import ActivationKind, Layer, Network, forward, init_random, load_model, save_model, softmax
from .sae import SaeHyperParams, train_autoencoder, train_teacher

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptReport", "evaluate", "fine_tune", "joint_grad", "joint_loss",
    "KernelSpec", "classwise_mmd2", "median_bandwidth", "mmd2_biased",
    "TransformPlan", "apply_plan", "deepen", "plan_transform", "random_mapping", "widen",
    "ActivationKind", "Layer", "Network", "forward", "init_random", "load_model", "save_model",
    "softmax", "SaeHyperParams", "train_autoencoder", "train_teacher",
]
