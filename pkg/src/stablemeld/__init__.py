"""Heavy-tailed p-value combination: the Levy combination test and its relatives."""

__version__ = "0.1.0"

from .stable import (  # noqa: E402
    CAUCHY,
    LEVY,
    NumericalError,
    StableParams,
    cauchy_cdf,
    cauchy_transform,
    landau,
    levy_cdf,
    levy_transform,
    levy_transform_approx,
    normal_cdf,
    normal_quantile,
    self_similarity_params,
    stable_cdf,
    stable_isf,
    stable_quantile,
    stable_sample,
    stable_sf,
)
from .combiners import (  # noqa: E402
    CombinedResult,
    PValueFamily,
    UnsupportedMethodError,
    bonferroni,
    cct,
    combine,
    fisher,
    hmp,
    hmp_adjusted,
    hmp_raw,
    lct,
    sct_extremal,
    simes_multilevel,
)
from .multilevel import MultilevelReport, closed_test, smallest_rejected_groups  # noqa: E402
from .robustness import InflationResult, dominance_classifier, worst_case_inflation  # noqa: E402
