"""Few-shot iterative residual image inpainting.

Library layout:

* :mod:`reinpaint.core`            image/mask tensor conventions, compositing
* :mod:`reinpaint.masks`           mask sampling protocols (freeform / ratio / center)
* :mod:`reinpaint.labelmap`        receptive-field geometry and patch label maps
* :mod:`reinpaint.layers`          spectral-norm convs and generator building blocks
* :mod:`reinpaint.generator`       residual generator and iterative inference
* :mod:`reinpaint.backbones`       frozen feature extractors (offline-safe fallbacks)
* :mod:`reinpaint.discriminators`  projected image critic + patch forgery critic
* :mod:`reinpaint.losses`          perceptual distance and hinge adversarial losses
* :mod:`reinpaint.augment`         differentiable, seedable augmentation
* :mod:`reinpaint.training`        few-shot training loop and checkpoints
* :mod:`reinpaint.evaluation`      FID / LPIPS protocol harness and reports
* :mod:`reinpaint.reporting`       matplotlib figures for train/eval outputs
* :mod:`reinpaint.cli`             ``reinpaint`` command-line entry point
"""

__version__ = "0.1.0"

from .errors import (
    ContractError,
    MaskGenerationError,
    NumericFault,
    ReinpaintError,
    ResourceMissing,
)

__all__ = [
    "ContractError",
    "MaskGenerationError",
    "NumericFault",
    "ReinpaintError",
    "ResourceMissing",
    "__version__",
]
