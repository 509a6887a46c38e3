"""Published full-season reference values for the ``full`` profile check.

Fixed effects are (mean, lower, upper) of the 95% credible interval.
"""

FIXED_EFFECTS = {
    "bat_speed": {
        "mu0": (76.43, 76.06, 76.80),
        "beta_balls": (0.55, 0.51, 0.59),
        "beta_strikes": (-1.13, -1.20, -1.06),
        "beta_x": (-0.52, -0.66, -0.39),
        "beta_z": (-1.87, -2.00, -1.75),
        "alpha0": (-1.85, -1.96, -1.75),
    },
    "swing_length": {
        "mu0": (8.25, 8.20, 8.29),
        "beta_balls": (0.05, 0.04, 0.05),
        "beta_strikes": (-0.14, -0.14, -0.13),
        "beta_x": (0.16, 0.14, 0.17),
        "beta_z": (-0.46, -0.47, -0.44),
        "alpha0": (-1.46, -1.56, -1.36),
    },
}
TOP_RANKED_BATTER = "Matt Chapman"
