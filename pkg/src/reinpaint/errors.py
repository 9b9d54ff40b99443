"""Exception taxonomy shared across the package.

Three failure families are kept distinct so that callers (and the CLI exit
code logic) can tell them apart:

* ``ContractError``   -- the caller handed us something malformed: bad shapes,
  out-of-range values, inconsistent config.  Always a bug at the call site.
* ``NumericFault``    -- the math went bad at runtime (NaN/Inf activations or
  losses).  The inputs were legal; the state is not.
* ``ResourceMissing`` -- an optional external asset (pretrained backbone
  weights, a checkpoint file) is unavailable.  Recoverable by switching to an
  offline fallback or fixing a path.
"""

from __future__ import annotations


class ReinpaintError(Exception):
    """Base class for all package-specific errors."""


class ContractError(ReinpaintError):
    """Invalid arguments or state supplied by the caller."""


class NumericFault(ReinpaintError):
    """Non-finite values encountered during computation."""


class ResourceMissing(ReinpaintError):
    """An optional external resource (weights, files) could not be loaded."""


class MaskGenerationError(ReinpaintError):
    """Mask sampling could not satisfy the requested constraints."""
