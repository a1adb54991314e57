"""Numeric constants used across the package, kept in one place."""

#: Model files written by :func:`xsecbench.netcore.save_model`.
MODEL_FORMAT_VERSION = 1
#: Significant digits used when serialising floats; 17 round-trips any float64.
FLOAT_DIGITS = 17

#: DeepLIFT falls back to the local derivative when |delta pre-activation| is below this.
DEEPLIFT_DELTA_EPS = 1e-10
#: Ridge penalty of the LIME surrogate (intercept is not penalised).
LIME_RIDGE = 1e-3
#: LIME perturbation std, as a multiple of the per-feature scale.
LIME_NOISE_FRACTION = 0.3
#: Largest dimension for which exact (enumerated) KernelSHAP is allowed.
KERNEL_SHAP_MAX_EXACT_DIM = 25
#: Relative-output-stability denominators are floored at this value.
ROS_EPS = 1e-8
#: Star-rating means are rounded to this many decimals before binning.
RATING_DECIMALS = 9

#: Continuous counterfactual search.
CF_STEP = 0.05
CF_MAX_ITERS = 500
CF_L1_WEIGHT = 0.01

#: Tolerances checked by the test-suite and acceptance gate.
TOLERANCES = {
    "softmax_sum": 1e-12,
    "gradient_fd_rel": 1e-4,
    "fd_step": 1e-5,
    "ig_completeness_rel": 1e-3,
    "deeplift_delta": 1e-6,
    "shap_efficiency": 1e-6,
    "linear_agreement": 1e-6,
    "shap_sampled_linf": 0.02,
    "faithfulness_exact": 1e-6,
    "entropy": 1e-9,
    "scale_invariance": 1e-12,
}
