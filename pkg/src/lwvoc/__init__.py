"""Simulation and stability certification for networks of converters under
(lambda-omega) virtual oscillator control."""
from .network import (NetworkError, NetworkSpec, NumericalSingularityError, build_impedances,
                      build_incidence, extend_planar, impedance_matrix, network_impedance_L,
                      solve_steady_state, table1_network)
from .controller import (ControllerGains, Setpoints, amplitude_fn, controller_rhs, frequency_fn,
                         polar_rhs, projector_from, wrap_angle)
from .dynamics import (IntegrationDiverged, LoadStep, SystemState, Trajectory, build_model,
                       compare_full_reduced, from_dq, integrate, simulate, steady_state, to_dq)
from .analysis import (StabilityReport, check_assumption1, compute_alpha_star, compute_condition1,
                       dist_to_Su, droop_quantities, jacobian_at_origin, lyapunov_values,
                       verify_droop_identity)
from .scenario import Scenario, ScenarioError, bundled_scenario_path, parse_scenario

__version__ = "0.1.0"
