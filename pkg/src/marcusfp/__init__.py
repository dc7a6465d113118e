"""Numerical toolkit for 1-D Marcus SDEs driven by Levy white noise.

Pieces: jump-measure sampling and quadrature (`levy`), the coordinate
transform and exact jump map (`transform`), path simulation (`sde`),
the nonlocal Fokker-Planck solver (`fpe`), density comparison
(`validate`), and a config-driven CLI (`cli`).
"""

from .density import DensityGrid, GridSpec, gaussian_on_grid
from .errors import (ConfigError, EmptyEnsemble, GridMismatch, GridTooCoarse,
                     Instability, NonConvergence, SeriesDivergence,
                     UnsupportedReference, ZeroOfSigma)
from .levy import (AlphaStable, CompoundPoisson, Density1D, JumpEvent,
                   LevyMeasure, LevyTriplet, NullMeasure, SumMeasure,
                   measure_quadrature, normal_density, rng_from_seed,
                   sample_brownian_increment, sample_jumps,
                   small_jump_compensation, uniform_density)
from .transform import (ClosedFormH, SigmaFunction, TransformAtlas,
                        constant_sigma, linear_sigma, marcus_map_ode,
                        marcus_map_ode_vec, one_plus_x2_sigma, sine_sigma)
from .sde import (PathEnsemble, SdeModel, SimulationPlan, empirical_density,
                  marcus_jump_apply, read_binary_ensemble, simulate)
from .fpe import (FpeOperatorData, SolveResult, StepControl, apply_nonlocal,
                  assemble_operator, solve, stability_limit, step)
from .validate import (ComparisonReport, adjoint_mismatch, analytic_reference,
                       compare, generator_apply, mc_stderr_band)
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"
