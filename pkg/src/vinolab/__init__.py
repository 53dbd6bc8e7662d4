"""Numerical laboratory for small-cap decoupling along the twisted cubic."""

from .errors import (ConfigError, DomainError, InfeasibleCaps, InsufficientSamples, MergeError,
                     NotInUnion, UseMonteCarlo)
from .geometry import (ConvexPolytope, OrientedBox, Role, ShearMap, dual_box, frenet_frame, gamma,
                       intersect_boxes, make_box, polytope_volume, shear_map)
from .partition import build_cp_family, classify_point, verify_partition_lemmas
from .incidence import (BoxFamily, RichCubes, count_rich_cubes, generate_family, l4_plank_sum,
                        verify_plank_incidence, verify_plate_kakeya, verify_tube_incidence,
                        verify_union_lemmas)
from .decoupling import (ExpSum, MomentEstimate, critical_p_bound, decoupling_ratio, eval_exp_sum,
                         flat_decoupling_check, lp_moment, make_exp_sum, sigma_pd, trilinear_ratio)
from .packets import (PacketEnsemble, Profile, build_fixture, pigeonhole_analysis, prop84_check,
                      random_ensemble, synthesize_from_packets)
from .harness import list_experiments, load_config, merge_reports, run

__version__ = "0.1.0"
