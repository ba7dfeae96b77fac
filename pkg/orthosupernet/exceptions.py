class OrthoSupernetError(Exception):
    """Root of every error raised by the package. ``exit_code`` is what the
    command line returns when the error escapes a subcommand."""

    exit_code: int = 2


class ConfigError(OrthoSupernetError):
    exit_code = 1

    def __init__(self, reason: str) -> None:
        super().__init__(f"Invalid configuration: {reason}")


class FeasibilityError(OrthoSupernetError):
    def __init__(self, frames: int, required: int) -> None:
        super().__init__(
            f"CTC needs at least {required} frames for this target, got {frames}"
        )


class OracleSizeError(OrthoSupernetError):
    def __init__(self, frames: int, vocab: int) -> None:
        super().__init__(
            f"Brute-force enumeration limited to T <= 8 and V <= 4, got T={frames}, V={vocab}"
        )


class BudgetInfeasible(OrthoSupernetError):
    def __init__(self, subnet: int, tau: float) -> None:
        super().__init__(f"No mask satisfies the budget tau={tau} of subnet {subnet}")


class DivergenceError(OrthoSupernetError):
    def __init__(self, step: int, diagnostics: dict[str, float]) -> None:
        self.step = step
        self.diagnostics = diagnostics
        dump = ", ".join(f"{key}={value}" for key, value in diagnostics.items())
        super().__init__(f"Non-finite loss at step {step}: {dump}")


class StateError(OrthoSupernetError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"Invalid run state: {reason}")


class FormatError(OrthoSupernetError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"Unable to read {path}: {reason}")


class VerificationFailed(OrthoSupernetError):
    exit_code = 3

    def __init__(self, failures: list[str]) -> None:
        self.failures = failures
        super().__init__(
            f"Verification failed for the following checks: {'; '.join(failures)}"
        )
