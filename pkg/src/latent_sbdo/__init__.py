"""Latent-space, anomaly-aware shape optimization on a desk-scale hull."""

__version__ = "0.1.0"

from .density import GaussianDensity, MahalanobisOutlierDetector, iqr_threshold  # noqa: E402
from .ffd import FfdLattice, FreeFormDeformation, DesignVariable, sample_dataset  # noqa: E402
from .latent import PCA, PPCA, FactorAnalysis, make_model  # noqa: E402

__all__ = ["GaussianDensity", "MahalanobisOutlierDetector", "iqr_threshold", "FfdLattice", "FreeFormDeformation",
           "DesignVariable", "sample_dataset", "PCA", "PPCA", "FactorAnalysis", "make_model", "__version__"]
