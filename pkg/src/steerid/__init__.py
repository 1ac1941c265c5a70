"""Differentiable single-track vehicle simulation, system identification,
and lane-keeping control."""

from .fwddiff import (Dual, GradientCheckReport, NonFiniteEvaluationError,
                      ParamSeed, TangentMismatchError, check_gradient, seed,
                      value_of)
from .dynamics import (AxleStiffness, DivergenceError, PlantInput, PlantState,
                       Rollout, RolloutConfig, VehicleParams,
                       axle_cornering_stiffness, dynamic_derivative,
                       kinematic_derivative, replay_controller, rollout, step)
from .lateral import (ErrorState, GainVector, LateralModel, PlacementError,
                      ReferenceCircle, ackermann_gains, build_lateral_model,
                      closed_loop_eigs, compute_errors, control_law,
                      place_poles, validate_poles, wrap_angle)
from .losses import (LossConfig, Trajectory, chamfer, lane_keeping_loss,
                     soft_dtw, trajectory_match_loss)
from .optim import Adam, CmaEs, EarlyStopping, GradientError, adam_step
from .pipeline import (Dataset, EvaluationDivergence, EvaluationReport,
                       GenerationSpec, IdentificationProblem,
                       OptimizerSettings, ReferenceRun, RunReport,
                       candidate_loss, circle_start_state, closed_loop_run,
                       derive_gains, derive_gains_from_stiffness,
                       evaluate_controller, generate_ground_truth, identify,
                       lateral_model_from_params, reference_circle)

__version__ = "0.1.0"
