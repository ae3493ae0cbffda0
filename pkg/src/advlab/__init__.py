"""advlab: an adversarial-robustness laboratory for the MNIST CNN.

Train the classifier, attack it with FGSM and a universal adversarial
patch, defend it with defensive distillation, and emit Table/plot-style
reports. See the README for the CLI entry points.
"""

from .autodiff import Tensor, backward, input_gradient, no_grad
from .dataset import LabeledDataset, load_mnist_train, split
from .network import Network, build, load, save
from .training import AdamState, PlateauScheduler, TrainLog, fit
from .attacks import AttackConfig, PatchSpec, fgsm, fgsm_sweep, patch_apply, patch_evaluate, patch_train
from .distillation import DistillConfig, distill, distilled_sweep, make_soft_labels
from .evaluation import EvalReport, render_curve, top_k_error, write_csv

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "input_gradient",
    "no_grad",
    "LabeledDataset",
    "load_mnist_train",
    "split",
    "Network",
    "build",
    "load",
    "save",
    "AdamState",
    "PlateauScheduler",
    "TrainLog",
    "fit",
    "AttackConfig",
    "PatchSpec",
    "fgsm",
    "fgsm_sweep",
    "patch_apply",
    "patch_evaluate",
    "patch_train",
    "DistillConfig",
    "distill",
    "distilled_sweep",
    "make_soft_labels",
    "EvalReport",
    "render_curve",
    "top_k_error",
    "write_csv",
    "__version__",
]
