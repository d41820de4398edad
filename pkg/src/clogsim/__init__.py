"""Two-scale simulation of colloid transport, deposition and pore clogging."""
from .errors import (ClogsimError, GeometryError, MeshingError, OffsetRangeError, SolverError,
                     ValidationError)
from .microgeometry import (Bean, Circle, Ellipse, GeomQuantities, OffsetCurve, Polyline,
                            eval_initial_curve, geom_quantities, max_admissible_offset,
                            offset_curve)
from .cellmesh import TriMesh, triangulate_perforated_cell, triangulate_polygon
from .cellsolve import EffectiveTensor, effective_tensor, solve_cell, solve_cell_problem
from .coefftab import CoefficientTable, build_table, lookup, read_table, write_table
from .macrosolve import (Cardioid, LShape, MacroSolver, MacroState, ModelParams, PolygonDomain,
                         build_macro_mesh, initial_sigma_field, run, smoluchowski_rates,
                         v_exact_update)

__version__ = "0.1.0"
