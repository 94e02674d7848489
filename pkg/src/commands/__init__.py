"""Bodies of the command-line verbs"""
from .ablate import KINDS, run_ablate
from .churn import run_churn
from .report import run_report
from .train import run_train
from .transfer import run_linear_eval
