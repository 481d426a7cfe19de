"""Data-driven discovery of ODE parameters with differentiable Euler rollouts.

A small scalar autodiff tape, the two case-study dynamics (charging circuit
and epidemic compartments), learnable parameter families, synthetic data
generators, two training regimes, and an experiment harness with a CLI.
"""

from .approximators import (ConstApprox, LinearApprox, MlpApprox, approx_eval,
                            approx_from_json, approx_init, approx_to_json)
from .datagen import (NpiScheduleSpec, ObservableWalk, RcDatasetSpec,
                      SirDatasetSpec, TimeSeries, eoh_subsample,
                      gen_npi_dataset, gen_rc_dataset, gen_sir_dataset,
                      gen_tau_walk_dataset, rc_analytic)
from .dynamics import (NpiEffect, NpiVector, OdeSystem, RcConstSystem,
                       RcObservableTauSystem, RcParams, RcState,
                       SirConstSystem, SirNpiSystem, SirParams, SirState,
                       beta_npi, rc_rhs, sir_rhs)
from .errors import (DivergenceError, NonFiniteValueError,
                     ParameterDomainError, StateDomainError, StructuralError,
                     TrialFailure, UdeError)
from .experiments import (ExperimentSpec, ResultRow, emit_results,
                          run_experiment, run_to_files)
from .integrate import EulerConfig, Trajectory, euler_advance, rollout
from .metrics import AggregateStats, absolute_error, aggregate, rmse, state_range
from .tape import (ParamVector, Tape, TapeNode, finite_diff_gradient, grad,
                   tape_eval)
from .train import (FitReport, Pair, TrainConfig, adam_step, fit,
                    fit_full_batch, fit_mini_batch, mse_cost,
                    one_step_predictions, rollout_eval, split_pairs)

__version__ = "0.1.0"
