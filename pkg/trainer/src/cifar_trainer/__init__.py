"""cifar_trainer: reference external evaluator speaking the stdio evaluation protocol."""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
