"""Configuration and statistics records for the adaptation pipeline."""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .metric import EDGES, batch_edge_lengths, batch_mean_ratio

LENGTH_BINS = np.array([0.0, 0.5, 1 / math.sqrt(2), 1.0, math.sqrt(2), 2.0, np.inf])
QUALITY_BINS = np.array([0.0, 0.01, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0 + 1e-12])


@dataclass
class AdaptConfig:
    """User-tunable parameters of :func:`tetadapt.pipeline.adapt`.

    Attributes
    ----------
    complexity : float
        Target metric complexity for metric construction.
    norm : float
        Lp norm of the multiscale metric.
    gradation : float
        Size growth bound per unit metric length (> 1).
    collapse_threshold, refine_threshold : float
        Short/long edge bounds in metric units.
    quality_trigger : float
        Smoothing is attempted around elements below this mean ratio.
    workers : int
        Number of worker threads.
    """

    complexity: float = 1000.0
    norm: float = 2.0
    gradation: float = 3.0
    collapse_threshold: float = 1.0 / math.sqrt(2.0)
    refine_threshold: float = math.sqrt(2.0)
    quality_trigger: float = 0.1
    quality_floor: float = 0.0
    workers: int = 1
    outer_iterations: int = 10
    max_refine_rounds: int = 20
    reconnect_sweeps: int = 30
    collapse_sweeps: int = 10
    smooth_sweeps: int = 3
    bucket_size: int = 4096
    seed: int = 0
    smoothing: bool = True
    collapse: bool = True

    def __post_init__(self):
        if self.collapse_threshold <= 0 or self.refine_threshold <= 0:
            raise ValueError("length thresholds must be positive")
        if self.collapse_threshold >= self.refine_threshold:
            raise ValueError("collapse threshold must be below the refine threshold")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.gradation <= 1.0:
            raise ValueError("gradation must exceed 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class PassStats:
    """Counters of one kernel pass (merged over workers and sweeps)."""

    name: str
    attempted: int = 0
    applied: int = 0
    rolled_back: int = 0
    rejected: int = 0
    sweeps: int = 0
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def merge(self, other: "PassStats"):
        self.attempted += other.attempted
        self.applied += other.applied
        self.rolled_back += other.rolled_back
        self.rejected += other.rejected
        self.sweeps += other.sweeps
        self.seconds += other.seconds
        for k, v in other.detail.items():
            self.detail[k] = self.detail.get(k, 0) + v


@dataclass
class AdaptStats:
    """Per-pass log and final mesh statistics of an adaptation run."""

    passes: list = field(default_factory=list)
    n_vertices: int = 0
    n_tets: int = 0
    length_hist: list = field(default_factory=list)
    quality_hist: list = field(default_factory=list)
    min_quality: float = 0.0
    unit_fraction: float = 0.0

    def add(self, p: PassStats):
        self.passes.append(p)

    def time_by_module(self):
        out = {}
        for p in self.passes:
            out[p.name] = out.get(p.name, 0.0) + p.seconds
        return out

    def totals(self, name):
        tot = PassStats(name)
        for p in self.passes:
            if p.name == name:
                tot.merge(p)
        return tot


def unique_edges(tets):
    e = np.sort(tets[:, EDGES].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def mesh_statistics(mesh):
    """Vertex/tet counts, metric length and quality histograms of a mesh."""
    m = mesh.copy()
    m.compact()
    nv, nt = m.n_vertices, m.n_tets
    xyz, met, logm, tets = m.a.xyz[:nv], m.a.met[:nv], m.a.logm[:nv], m.a.tets[:nt]
    edges = unique_edges(tets)
    lengths = batch_edge_lengths(xyz, met, edges)
    q = batch_mean_ratio(xyz, logm, tets)
    unit = float(np.mean((lengths >= 1 / math.sqrt(2)) & (lengths <= math.sqrt(2)))) if len(lengths) else 0.0
    return {
        "n_vertices": nv,
        "n_tets": nt,
        "n_edges": len(edges),
        "length_hist": np.histogram(lengths, LENGTH_BINS)[0].tolist(),
        "quality_hist": np.histogram(q, QUALITY_BINS)[0].tolist(),
        "min_quality": float(q.min()) if len(q) else 0.0,
        "mean_quality": float(q.mean()) if len(q) else 0.0,
        "unit_fraction": unit,
        "min_length": float(lengths.min()) if len(lengths) else 0.0,
        "max_length": float(lengths.max()) if len(lengths) else 0.0,
    }
