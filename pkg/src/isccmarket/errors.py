"""Exception hierarchy shared by the simulator, market and learner."""


class IsccError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(IsccError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ScenarioValidationError(IsccError, ValueError):
    pass


class DegenerateGeometryError(IsccError, ValueError):
    pass


class UnknownEntityError(IsccError, LookupError):
    pass


class BoundsError(IsccError, IndexError):
    pass


class AllocationConflict(IsccError):
    def __init__(self, cells, message="cells already allocated"):
        self.cells = sorted(cells)
        super().__init__(f"{message}: {self.cells}")


class UnknownReceipt(IsccError, LookupError):
    pass


class SensingGeometryError(IsccError):
    pass


class OwnershipError(IsccError):
    pass


class RegionRestrictionError(IsccError):
    pass


class DependencyError(IsccError):
    pass


class DecisionError(IsccError, ValueError):
    pass


class StructureError(IsccError):
    pass


class ShapeError(IsccError, ValueError):
    pass


class StaleCacheError(IsccError):
    pass


class FeasibilityError(IsccError):
    pass


class SizeError(IsccError):
    pass


class StalePushError(IsccError):
    def __init__(self, base_version, current_version):
        self.base_version = base_version
        self.current_version = current_version
        super().__init__(
            f"push based on version {base_version} is too stale (current {current_version})")


class DivergenceError(IsccError, FloatingPointError):
    pass
