"""Exception types shared across the emulation layers."""


class EmulationError(Exception):
    """Base class for everything raised by this package."""


class ContractViolation(EmulationError, ValueError):
    """An operand broke a documented precondition (shape, range, bound)."""


class NonFiniteInput(EmulationError, ValueError):
    """NaN or Inf reached an emulated GEMM; the dispatcher falls back to native."""


class ModuliBudgetTooSmall(EmulationError, ValueError):
    """The moduli product is too small to hold even a 1-bit quantization."""


class ConfigError(EmulationError, ValueError):
    """A GEMM_EMU_* environment variable is malformed."""

    def __init__(self, variable: str, value: str, reason: str):
        self.variable = variable
        self.value = value
        super().__init__(f"{variable}={value!r}: {reason}")


class SingularMatrix(EmulationError, ArithmeticError):
    """LU factorization met an exactly zero pivot."""


class BlasArgumentError(EmulationError, ValueError):
    """Invalid BLAS argument; ``info`` is the 1-based parameter index, as xerbla reports it."""

    def __init__(self, routine: str, info: int):
        self.routine = routine
        self.info = info
        super().__init__(f"On entry to {routine} parameter number {info} had an illegal value")
