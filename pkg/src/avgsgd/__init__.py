"""Averaged stochastic gradient descent for self-concordant generalized linear losses."""

from .bounds import (BoundContext, BoundReport, almost_sure_potential_bound, appendixF_bound,
                     gradient_tail_threshold, lemma1_tail_from_moments, lemma2_tail_from_moments,
                     prop1_bound, prop2_moment_bound, prop3_tail_threshold,
                     prop4_gradient_moment_bound, prop5_selfconcordance_transfer,
                     prop5_unconditional, prop6_adaptive_bounds, prop6_valid)
from .data import Dataset, Observation, read_libsvm, write_libsvm
from .errors import (AvgSGDError, ConfigError, ConvergenceError, DegenerateSegmentError,
                     DimensionError, InvalidObservationError, MinimumNotAttainedError,
                     NonFiniteError, RateFitError, StreamExhaustedError, ValidityRangeError)
from .harness import (DataGenSpec, DataKind, ReplicateSet, Statistic, bound_sweep,
                      empirical_moment, empirical_tail, fit_rate, generate_dataset,
                      run_replicates)
from .kernel import DualState, KernelFunction, kernel_run, kernel_sgd_step, predict
from .losses import (LossFamily, LossModel, check_self_concordance, loss_gradient, loss_hvp,
                     loss_value)
from .oracle import (CertificateCache, OptimumCertificate, full_gradient,
                     lowest_hessian_eigenvalue, solve_batch)
from .sgd import (RunConfig, SampledSource, ScheduleKind, SequentialSource, StepSchedule, run,
                  run_many, sgd_step, simulate, step_size, update_average)

__version__ = "0.1.0"
