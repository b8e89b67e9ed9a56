from lidm.metrics.extractors import (
    ExternalExtractor,
    FeatureExtractor,
    ToyPointVoxelExtractor,
    ToyRangeExtractor,
    ToyRangeNet,
    ToyVoxelExtractor,
    VoxelSet,
    get_extractor,
    select_taps,
    voxelize_sparse,
)
from lidm.metrics.frechet import (
    FeatureStats,
    fr_pipeline,
    frechet_distance,
    frechet_report,
    gaussian_stats,
    partition_aggregate,
    partition_aggregate_points,
    set_stats,
)
from lidm.metrics.statistical import (
    BevGrid,
    bev_centers,
    bev_histogram,
    chamfer,
    emd,
    jsd,
    jsd_from_distributions,
    mmd,
    sinkhorn_emd,
)

__all__ = [
    "BevGrid", "ExternalExtractor", "FeatureExtractor", "FeatureStats", "ToyPointVoxelExtractor",
    "ToyRangeExtractor", "ToyRangeNet", "ToyVoxelExtractor", "VoxelSet", "bev_centers",
    "bev_histogram", "chamfer", "emd", "fr_pipeline", "frechet_distance", "frechet_report",
    "gaussian_stats", "get_extractor", "jsd", "jsd_from_distributions", "mmd",
    "partition_aggregate", "partition_aggregate_points", "select_taps", "set_stats", "sinkhorn_emd",
    "voxelize_sparse",
]
