"""Predictor backends."""
from .analytic import (
    P_FLOOR,
    BetaBernoulliPredictor,
    ConstantPredictor,
    LaplacePredictor,
    MlePredictor,
    PositionAwareSurrogate,
    Predictor,
    beta_predict,
    clamp,
    laplace_predict,
    logit,
    mle_predict,
    positional_gain,
    position_statistic,
    prob_of_symbol,
    sigmoid,
    surrogate_predict,
)
from .remote import (
    RemoteClientConfig,
    RemoteLogprobClient,
    RemotePredictor,
    parse_top_logprobs,
    remote_predict,
)

__all__ = [
    "P_FLOOR",
    "BetaBernoulliPredictor",
    "ConstantPredictor",
    "LaplacePredictor",
    "MlePredictor",
    "PositionAwareSurrogate",
    "Predictor",
    "RemoteClientConfig",
    "RemoteLogprobClient",
    "RemotePredictor",
    "beta_predict",
    "clamp",
    "laplace_predict",
    "logit",
    "mle_predict",
    "parse_top_logprobs",
    "positional_gain",
    "position_statistic",
    "prob_of_symbol",
    "remote_predict",
    "sigmoid",
    "surrogate_predict",
]
