"""Exception types shared across the package."""


class VbdError(Exception):
    """Base class for all package-specific errors."""


class DegenerateTet(VbdError):
    """A tetrahedron has (near-)zero volume relative to the mesh scale."""


class IndexOutOfRange(VbdError):
    """An element references a vertex index outside the mesh."""


class NonFiniteState(VbdError):
    """Positions or velocities became NaN/Inf during a solve."""

    def __init__(self, message, step=None, iteration=None, vertex=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration
        self.vertex = vertex


class SchemaError(VbdError):
    """A scene file violates the documented schema; carries the key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class EmptyDescentRange(VbdError):
    """relative_loss is undefined because G_0 <= G_star."""
