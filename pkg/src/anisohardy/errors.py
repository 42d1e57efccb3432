"""Exception types shared across the package."""


class CoverError(Exception):
    """A cover is invalid or defective (singular matrix, failed nesting, ...)."""


class EstimationError(Exception):
    """An empirical sweep had no admissible samples to estimate from."""


class QuadratureContractError(Exception):
    """An unbounded integral was requested without support or decay hints."""


class AdmissibilityError(Exception):
    """A (p, q, m) triple or decay order d violates the admissibility rules."""


class MoleculeError(Exception):
    """A candidate function fails the molecule conditions."""


class DegenerateMoleculeError(MoleculeError):
    """The zero function: decomposition is trivially empty."""


class DecompositionError(Exception):
    """A decomposition stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
