"""Distributed two-phase clustering of data streams.

Remote sites summarize their local stream blocks as micro-clusters and ship
them to a coordinator, which macro-clusters the union every epoch.
"""
from .core import (ClusterFeature, Clustering, MicroCluster, Point, cf_from_points, cf_merge,
                   mc_centroid, mc_from_points, mc_insert, mc_merge, mc_rms_radius)
from .macro import GlobalClustering, MacroConfig, macro_cluster, weighted_ssq
from .micro import EngineConfig, MicroEngine
from .wire import deserialize, predicted_cost_bits, serialize

__all__ = [
    "ClusterFeature", "Clustering", "MicroCluster", "Point", "cf_from_points", "cf_merge", "mc_centroid",
    "mc_from_points", "mc_insert", "mc_merge", "mc_rms_radius", "GlobalClustering", "MacroConfig",
    "macro_cluster", "weighted_ssq", "EngineConfig", "MicroEngine", "deserialize", "predicted_cost_bits",
    "serialize",
]
__version__ = "0.1.0"
