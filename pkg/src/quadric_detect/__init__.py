"""Detection of general quadric surfaces in oriented point clouds.

A closed-form fit from four oriented points is reduced to three points by
voting along the one-dimensional solution family of each 3-point basis,
inside a RANSAC loop.  Hypotheses are merged by agglomerative clustering.
"""
from .clustering import ClusterParams, aggregate, d_close, d_far, score
from .detection import (DetectionConfig, detect, detect_planes, detect_ransac4,
                        detect_spheres, estimate_normals, remove_planes, run_pipeline,
                        sample_basis, voxel_downsample)
from .errors import (DegenerateBasis, EmptyAccumulator, Exhausted, GenerationTimeout,
                     IllConditioned, ParseError, QuadricError, RankDeficient,
                     SurfaceNotFound, TooFewPoints, UnsupportedFormat)
from .fitting import (NullSpaceSolution, build_system, build_system_sphere,
                      fit_least_squares, fit_minimal_4pt, fit_plane_1pt, nullspace_3pt,
                      nullspace_sphere)
from .geometry import (OrientedPoint, Plane, Quadric, QuadricClass, algebraic_distance,
                       canonicalize, classify, quadric_distance_samples)
from .io import DetectionReport, read_cloud, read_report, write_ply, write_report
from .kernels import BACKEND
from .scene import Basis, Hypothesis, SceneCloud, normalize_scene
from .synth import (SyntheticScene, bench_lambda, corrupt, evaluate_fit, random_quadric,
                    run_fitting_sweep, sample_surface)
from .voting import (Accumulator, VoteParams, lambda_for_point, lambda_to_quadric,
                     normal_gate, quantize_lambda, vote_and_peak)

__version__ = "0.1.0"
