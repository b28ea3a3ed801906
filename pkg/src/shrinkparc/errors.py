"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ShrinkParcError``,
which the CLI maps to exit code 1.
"""


class ShrinkParcError(ValueError):
    pass


class ZeroVarianceVoxel(ShrinkParcError):
    def __init__(self, voxel):
        super().__init__(f"voxel {voxel} has zero sample variance")
        self.voxel = voxel


class OutOfRange(ShrinkParcError):
    pass


class DimensionMismatch(ShrinkParcError):
    pass


class MixedSpace(ShrinkParcError):
    pass


class LambdaOutOfRange(ShrinkParcError):
    pass


class TooFewSubjects(ShrinkParcError):
    pass


class UnpairedSubject(ShrinkParcError):
    pass


class MissingReplicate(ShrinkParcError):
    pass


class AllZeroDifferences(ShrinkParcError):
    pass


class NonpositiveTheta(ShrinkParcError):
    pass


class InsufficientLength(ShrinkParcError):
    pass


class DegenerateAffinity(ShrinkParcError):
    pass


class EigensolverFailure(ShrinkParcError):
    pass


class EmptySubset(ShrinkParcError):
    pass


class EmptyInput(ShrinkParcError):
    pass


class ResampleLimitExceeded(ShrinkParcError):
    pass


class FactorizationFailure(ShrinkParcError):
    pass


class UnequalSessionLengths(ShrinkParcError):
    pass


class TooShort(ShrinkParcError):
    pass
