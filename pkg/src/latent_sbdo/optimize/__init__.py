from .bayesopt import bo_minimize, ccd_init
from .direct import direct_minimize
from .gp import GpSurrogate, gp_fit, gp_predict, lcb, matern32
from .log import FAILED_VALUE, Evaluation, EvaluationLog

__all__ = ["bo_minimize", "ccd_init", "direct_minimize", "GpSurrogate", "gp_fit", "gp_predict", "lcb",
           "matern32", "FAILED_VALUE", "Evaluation", "EvaluationLog"]
