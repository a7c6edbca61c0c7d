"""Certified bounds on a vertically partitioned regularized ERM solution.

Two parties, each holding a block of features (one also holding the labels),
jointly compute a ball guaranteed to contain the exact minimizer, then use it to
bound linear scores of new instances, all under Paillier encryption.
"""

from .bounds import (BallBound, Certification, ScoreInterval, SurrogateAggregates, aggregates, ball,
                     certify, coefficient_bounds, sag_ball, score_interval)
from .crypto import FixedPointCodec, PaillierPrivateKey, PaillierPublicKey, keygen
from .erm import LossFamily, RegularizedObjective, approx_solve, exact_solve, surrogates, synthetic
from .errors import SagError
from .piecewise import PiecewiseLinear, chord_upper_bound, quantize, tangent_lower_bound
from .sbc import EncryptedBall, SbcConfig, bound_eval, bound_eval_many, encrypt_weights, sbc
from .spl import spc, spl
from .transport import PartyRole, SessionParams, memory_session_pair, run_pair

__version__ = "0.1.0"

__all__ = [
    "BallBound", "Certification", "EncryptedBall", "FixedPointCodec", "LossFamily", "PaillierPrivateKey",
    "PaillierPublicKey", "PartyRole", "PiecewiseLinear", "RegularizedObjective", "SagError", "SbcConfig",
    "ScoreInterval", "SessionParams", "SurrogateAggregates", "aggregates", "approx_solve", "ball",
    "bound_eval", "bound_eval_many", "certify", "chord_upper_bound", "coefficient_bounds", "encrypt_weights",
    "exact_solve", "keygen", "memory_session_pair", "quantize", "run_pair", "sag_ball", "sbc",
    "score_interval", "spc", "spl", "surrogates", "synthetic", "tangent_lower_bound",
]
