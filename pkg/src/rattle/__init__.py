"""Information-aware motion planning, robust tube control, and online
parameter estimation for 6-DOF free-flyers under parametric uncertainty."""

from .dynamics import (
    ParamVector,
    RigidBodyState,
    Wrench,
    discretize_translational,
    dynamics_derivative,
    sensitivity_step,
    step_rk4,
)
from .estimator import (
    AugmentedBelief,
    OutOfOrderMeasurement,
    ParamBelief,
    current_params,
    ekf_predict,
    ekf_update,
    make_augmented_belief,
)
from .world import Ellipsoid, GoalRegion, ScenarioError, World, add_obstacle, point_free, segment_free

__version__ = "0.1.0"
