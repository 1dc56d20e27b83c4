from .assembly import DEFAULT_CIRCLES, Evaluation, FemProblem, MaterialMap
from .experiments import (FemOutcome, circles_experiment, initial_field, minimize,
                          radial_contraction, restart, stretch)
from .mesh import TriMesh, build_mesh, expected_counts, refine
from .trust_region import TrustRegionResult, box_qp, trust_region_minimize

__all__ = ["DEFAULT_CIRCLES", "Evaluation", "FemOutcome", "FemProblem", "MaterialMap", "TriMesh",
           "TrustRegionResult", "box_qp", "build_mesh", "circles_experiment", "expected_counts",
           "initial_field", "minimize", "radial_contraction", "refine", "restart", "stretch",
           "trust_region_minimize"]
