"""Constants for the direct integral estimation toolkit."""

DOMAIN = "direct_integral"

# Reference solver
RK4_SUBSTEPS = 8

# Smoothing
MAX_POLY_ORDER = 5
SINGULAR_RCOND = 1e-12
REFINE_FACTOR = 4

# Estimation
COND_THRESHOLD = 1e-10
RANK_TOLERANCE = 1e-10
SIGMA_FLOOR = 1e-10
PSD_TOLERANCE = 1e-10

# Nelder-Mead simplex (reflection, expansion, contraction, shrink)
SIMPLEX_XATOL = 1e-8
SIMPLEX_MAXFEV = 10_000

# Monte Carlo
TRAJECTORY_GRID_POINTS = 2001
FAILURE_FRACTION = 0.10
DEFAULT_REPLICATES = 100
NOISE_FLOOR_VARIANCE = 1e-12

# Output formatting
SUMMARY_FLOAT_FORMAT = "%.6g"
DATA_FLOAT_FORMAT = "%.12g"

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3
EXIT_NON_IDENTIFIABLE = 4

# Derivative-based two-step ARE (%) for the FitzHugh-Nagumo grid, keyed by
# (sigma_1^2, sigma_2^2); the method itself is not implemented.
DERIVATIVE_ARE: dict[tuple[float, float], tuple[float, float, float]] = {
    (0.05, 0.05): (6.21, 17.765, 16.329),
    (0.05, 0.06): (7.27, 17.355, 15.829),
    (0.05, 0.07): (7.21, 20.625, 15.659),
    (0.05, 0.08): (7.17, 26.955, 14.529),
    (0.05, 0.09): (7.27, 30.595, 14.159),
    (0.05, 0.10): (7.72, 24.415, 14.079),
    (0.06, 0.05): (6.70, 16.655, 18.379),
    (0.06, 0.06): (7.33, 17.995, 17.759),
    (0.06, 0.07): (6.06, 20.845, 17.269),
    (0.06, 0.08): (5.75, 26.665, 16.969),
    (0.06, 0.09): (7.32, 22.785, 16.549),
    (0.06, 0.10): (7.90, 29.705, 16.069),
    (0.07, 0.05): (6.44, 14.615, 19.219),
    (0.07, 0.06): (7.70, 18.715, 18.649),
    (0.07, 0.07): (7.95, 17.295, 18.589),
    (0.07, 0.08): (6.66, 19.365, 18.079),
    (0.07, 0.09): (8.18, 27.565, 17.629),
    (0.07, 0.10): (8.09, 29.935, 18.139),
    (0.08, 0.05): (6.28, 16.405, 20.939),
    (0.08, 0.06): (6.90, 21.505, 20.139),
    (0.08, 0.07): (7.33, 18.545, 20.069),
    (0.08, 0.08): (7.95, 21.385, 20.229),
    (0.08, 0.09): (7.78, 25.045, 18.609),
    (0.08, 0.10): (7.75, 30.925, 18.859),
    (0.09, 0.05): (7.31, 17.755, 21.769),
    (0.09, 0.06): (7.22, 21.755, 21.479),
    (0.09, 0.07): (7.38, 15.435, 21.179),
    (0.09, 0.08): (7.38, 22.845, 20.299),
    (0.09, 0.09): (7.04, 28.695, 20.329),
    (0.09, 0.10): (8.45, 29.775, 20.389),
    (0.10, 0.05): (6.42, 18.885, 22.679),
    (0.10, 0.06): (6.78, 19.325, 21.869),
    (0.10, 0.07): (6.62, 22.085, 21.789),
    (0.10, 0.08): (7.80, 23.195, 22.119),
    (0.10, 0.09): (8.30, 24.395, 20.849),
    (0.10, 0.10): (8.57, 26.495, 20.989),
}

# Generalized profiling means and SDs for (a, b, c) of the alternative
# FitzHugh-Nagumo parameterization; the method itself is not implemented.
PROFILING_REFERENCE: dict[str, dict[str, tuple[float, float]]] = {
    "published": {
        "a": (0.2005, 0.0149),
        "b": (0.1984, 0.0643),
        "c": (2.9949, 0.0264),
    },
    "rerun": {
        "a": (0.2003, 0.0166),
        "b": (0.1986, 0.0679),
        "c": (3.0010, 0.0795),
    },
}

# Step-estimator means and SDs for the Lotka-Volterra setups, keyed by
# (distribution, setup, J); I = 30 with standard deviation 0.5 noise.
_LV_PARAMS = ("xi1", "xi2", "theta1", "theta2", "theta3", "theta4", "traj_l2", "traj_sup")


def _lv_cells(
    blocks: dict[tuple[str, int], dict[int, tuple[tuple[float, float], ...]]]
) -> dict[tuple[str, int, int], dict[str, tuple[float, float]]]:
    return {
        (distribution, setup, j): dict(zip(_LV_PARAMS, cells))
        for (distribution, setup), columns in blocks.items()
        for j, cells in columns.items()
    }


LOTKA_VOLTERRA_REFERENCE = _lv_cells(
    {
        ("gaussian", 1): {
            6: ((1.089, 0.143), (0.446, 0.096), (0.468, 0.077), (0.473, 0.075),
                (0.500, 0.073), (0.508, 0.073), (0.214, 0.082), (0.344, 0.142)),
            10: ((1.085, 0.116), (0.441, 0.075), (0.473, 0.061), (0.477, 0.060),
                 (0.501, 0.057), (0.508, 0.057), (0.183, 0.066), (0.290, 0.111)),
            15: ((1.085, 0.093), (0.438, 0.061), (0.474, 0.050), (0.479, 0.048),
                 (0.501, 0.047), (0.509, 0.047), (0.167, 0.056), (0.264, 0.094)),
            30: ((1.083, 0.065), (0.436, 0.043), (0.477, 0.035), (0.480, 0.034),
                 (0.501, 0.033), (0.509, 0.033), (0.148, 0.041), (0.233, 0.069)),
        },
        ("gaussian", 2): {
            6: ((0.289, 0.160), (1.000, 0.237), (0.174, 0.040), (0.496, 0.159),
                (0.305, 0.085), (0.477, 0.126), (0.443, 0.249), (1.003, 0.609)),
            10: ((0.296, 0.130), (1.038, 0.185), (0.178, 0.031), (0.525, 0.136),
                 (0.316, 0.069), (0.483, 0.096), (0.385, 0.189), (0.890, 0.401)),
            15: ((0.301, 0.109), (1.052, 0.153), (0.180, 0.026), (0.536, 0.115),
                 (0.318, 0.058), (0.481, 0.078), (0.341, 0.166), (0.798, 0.365)),
            30: ((0.300, 0.076), (1.070, 0.107), (0.182, 0.019), (0.546, 0.085),
                 (0.320, 0.041), (0.479, 0.054), (0.284, 0.137), (0.674, 0.312)),
        },
        ("laplace", 1): {
            6: ((1.087, 0.147), (0.444, 0.097), (0.470, 0.079), (0.475, 0.076),
                (0.499, 0.073), (0.507, 0.073), (0.217, 0.085), (0.348, 0.149)),
            10: ((1.088, 0.112), (0.440, 0.074), (0.472, 0.059), (0.477, 0.057),
                 (0.501, 0.056), (0.509, 0.057), (0.184, 0.064), (0.292, 0.109)),
            15: ((1.086, 0.092), (0.439, 0.062), (0.474, 0.049), (0.478, 0.048),
                 (0.501, 0.046), (0.508, 0.046), (0.166, 0.056), (0.262, 0.092)),
            30: ((1.085, 0.065), (0.436, 0.044), (0.476, 0.035), (0.480, 0.034),
                 (0.502, 0.032), (0.510, 0.033), (0.148, 0.041), (0.233, 0.069)),
        },
        ("laplace", 2): {
            6: ((0.287, 0.161), (0.996, 0.240), (0.173, 0.039), (0.491, 0.155),
                (0.305, 0.085), (0.480, 0.125), (0.446, 0.380), (1.007, 1.221)),
            10: ((0.297, 0.132), (1.037, 0.184), (0.178, 0.031), (0.523, 0.134),
                 (0.314, 0.067), (0.481, 0.096), (0.379, 0.184), (0.879, 0.399)),
            15: ((0.297, 0.109), (1.053, 0.150), (0.181, 0.026), (0.538, 0.115),
                 (0.316, 0.056), (0.478, 0.075), (0.339, 0.167), (0.796, 0.365)),
            30: ((0.300, 0.077), (1.069, 0.106), (0.181, 0.019), (0.545, 0.086),
                 (0.320, 0.040), (0.479, 0.054), (0.281, 0.135), (0.667, 0.305)),
        },
    }
)
