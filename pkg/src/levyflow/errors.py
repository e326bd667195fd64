from __future__ import annotations


class LevyflowError(Exception):
    """Base class for errors raised by this package."""


class QuadratureError(LevyflowError):
    """An adaptive quadrature did not reach its accuracy target."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


class MatrixExpOverflowError(LevyflowError, OverflowError):
    def __init__(self, norm: float):
        super().__init__(f"matrix exponential overflowed; |tA|_1 = {norm:.6g}")
        self.norm = norm


class PicardDivergenceError(LevyflowError):
    """Damped Picard iteration failed to contract."""

    def __init__(self, message: str, history: list[float]):
        tail = ", ".join(f"{r:.3e}" for r in history[-5:])
        super().__init__(f"{message}; last residuals [{tail}]")
        self.history = list(history)


class ConfigError(LevyflowError, ValueError):
    """Experiment configuration failed validation."""
