class RcgError(Exception):
    """Base class for every error raised by ``rcg_uda``."""


class FactorizationError(RcgError, ValueError):
    def __init__(self, pivot: int, value: float | None = None) -> None:
        self.pivot = pivot
        self.value = value
        detail = f" (pivot value {value:.6g})" if value is not None else ""
        super().__init__(
            f"Matrix is not positive definite: pivot {pivot} is not positive{detail}"
        )


class SingularMatrixError(RcgError, ValueError):
    def __init__(self, index: int) -> None:
        self.index = index
        super().__init__(f"Triangular matrix is singular: diagonal entry {index} <= 0")


class DomainError(RcgError, ValueError):
    pass


class ShapeError(RcgError, ValueError):
    def __init__(self, what: str, expected: object, got: object) -> None:
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected shape {expected}, got {got}")


class EmptyGroupError(RcgError, ValueError):
    def __init__(self, classes: list[int]) -> None:
        self.classes = classes
        super().__init__(
            f"Classes {classes} have no members in the batch; "
            "draw class-complete groups before computing the content KL"
        )


class NonFiniteError(RcgError, FloatingPointError):
    def __init__(self, name: str, kind: str = "gradient") -> None:
        self.name = name
        self.kind = kind
        super().__init__(f"Non-finite {kind} in '{name}'")


class MissingCacheError(RcgError, RuntimeError):
    def __init__(self) -> None:
        super().__init__("backward() called before forward()")


class ConfigError(RcgError):
    def __init__(self, key: str, message: str) -> None:
        self.key = key
        self.message = message
        super().__init__(f"[{key}] {message}")


class CheckpointError(RcgError):
    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
