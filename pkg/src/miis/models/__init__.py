"""Built-in targets: bivariate Gaussian, modulated Poisson, finite oracles."""

from . import bvn, mmpp, oracle

__all__ = ["bvn", "mmpp", "oracle"]
