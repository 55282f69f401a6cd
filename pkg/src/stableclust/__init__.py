"""Differentially private clustering for well-separated inputs."""

from .geometry import CenterSet, Dataset, cost, kmeanspp_lloyd, wasserstein
from .kmeans import PrivateKMeansConfig, private_stable_kmeans
from .kmedian import PrivateKMedianConfig, private_stable_kmedian
from .local import ldp_stable_kmeans
from .mechanisms import BudgetLedger, PrivacyParams, rng_stream
from .sample_aggregate import SampleAggregateConfig, sample_aggregate_kmeans
from .stability import separability_ratio, stability_report

__all__ = [
    "BudgetLedger", "CenterSet", "Dataset", "PrivacyParams", "PrivateKMeansConfig",
    "PrivateKMedianConfig", "SampleAggregateConfig", "cost", "kmeanspp_lloyd", "ldp_stable_kmeans",
    "private_stable_kmeans", "private_stable_kmedian", "rng_stream", "sample_aggregate_kmeans",
    "separability_ratio", "stability_report", "wasserstein",
]
