"""Latent-variable causal discovery for aggregated, nonstationary time series."""

__version__ = "0.1.0"

from .simulate import Dataset, LatentLinearSCM, sample_scm  # noqa: E402
from .graph import Cover, CoverGraph, DirectedGraph, min_tsep_cut  # noqa: E402
from .skeleton import pc_skeleton  # noqa: E402
from .latent import find_atomic_covers, refine_clusters  # noqa: E402
from .gin import orient_all  # noqa: E402
from .mle import fit_coefficients  # noqa: E402
from .changepoint import bocpd, segment  # noqa: E402
from .cdnod import augment_with_time, cdnod_skeleton  # noqa: E402

__all__ = [
    "Dataset", "LatentLinearSCM", "sample_scm",
    "Cover", "CoverGraph", "DirectedGraph", "min_tsep_cut",
    "pc_skeleton", "find_atomic_covers", "refine_clusters", "orient_all",
    "fit_coefficients", "bocpd", "segment", "augment_with_time", "cdnod_skeleton",
]
