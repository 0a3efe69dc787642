from __future__ import annotations

from typing import Any


class MavBenchException(Exception):
    def __init__(self, *args: object) -> None:
        super().__init__(*args)
        self.message = str(args[0]) if args else "unknown error"

    def __str__(self) -> str:
        return self.message


# non-finite inputs, invalid parameters, attitude outside the model validity region
class ModelValidityError(MavBenchException):
    pass


class QpSolveError(MavBenchException):
    # best_iterate is the last feasible point when the iteration cap was hit,
    # None when the problem itself was rejected (non-PD Hessian, crossed bounds)
    def __init__(self, *args: object, best_iterate: Any = None, iterations: int = 0) -> None:
        super().__init__(*args)
        self.best_iterate = best_iterate
        self.iterations = iterations


class RiccatiError(MavBenchException):
    pass


class IntegratorError(MavBenchException):
    pass


class EstimatorError(MavBenchException):
    pass


class ConfigError(MavBenchException):
    pass


# plant left the validity region. carries the partial log so the cli can still dump it
class SimulationError(MavBenchException):
    def __init__(self, *args: object, log: Any = None) -> None:
        super().__init__(*args)
        self.log = log


class MetricsError(MavBenchException):
    pass
