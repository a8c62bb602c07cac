"""Custom exceptions for the scene fitting engine."""
from typing import Sequence


class ScenefitError(Exception):
    """Base class for all engine exceptions."""
    pass


class GeometryError(ScenefitError):
    """Base class for camera and box geometry errors."""
    pass


class NonPositiveDepth(GeometryError):
    """Raised when a point to be projected lies on or behind the image plane."""
    def __init__(self, depth: float, what: str | None = None):
        self.depth = depth
        self.what = what
        message = f"Point has non-positive camera depth {depth:.6g}"
        if what:
            message = f"{what} has non-positive camera depth {depth:.6g}"
        super().__init__(message)


class MeshError(ScenefitError):
    """Base class for mesh loading and mesh query errors."""
    pass


class ParseError(MeshError):
    """Raised when a mesh file is malformed."""
    def __init__(self, path: str, detail: str, line: int | None = None):
        self.path = path
        self.detail = detail
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"Could not parse mesh {where}: {detail}")


class DegenerateFace(MeshError):
    """Raised when a face has (near) zero area."""
    def __init__(self, face_index: int, area: float):
        self.face_index = face_index
        self.area = area
        super().__init__(f"Face {face_index} is degenerate (area {area:.3g} m^2)")


class EmptyMesh(MeshError):
    """Raised when an operation needs at least one vertex or face."""
    def __init__(self, operation: str = "mesh operation"):
        self.operation = operation
        super().__init__(f"{operation} requires a non-empty mesh")


class NotWatertight(MeshError):
    """Raised when an edge is not shared by exactly two faces."""
    def __init__(self, edge: Sequence[int], face_count: int):
        self.edge = tuple(int(v) for v in edge)
        self.face_count = face_count
        super().__init__(
            f"Mesh is not watertight: edge {self.edge} is shared by {face_count} face(s)"
        )


class BodyError(ScenefitError):
    """Base class for body model errors."""
    pass


class BadJointIndex(BodyError):
    """Raised when a joint index does not exist in the skeleton."""
    def __init__(self, joint_index: int, joint_count: int):
        self.joint_index = joint_index
        self.joint_count = joint_count
        super().__init__(f"Joint index {joint_index} out of range for {joint_count} joints")


class LossError(ScenefitError):
    """Base class for loss evaluation errors."""
    pass


class NoObjects(LossError):
    """Raised when a term needs scene objects but the scene has none."""
    def __init__(self, term: str):
        self.term = term
        super().__init__(f"Loss term '{term}' requires at least one scene object")


class OptimizationError(ScenefitError):
    """Base class for errors raised while optimizing."""
    pass


class NonFiniteLoss(OptimizationError):
    """Raised when the loss becomes NaN or infinite."""
    def __init__(self, parameter: str | None, value: float | None, loss: float):
        self.parameter = parameter
        self.value = value
        self.loss = loss
        if parameter is None:
            message = f"Loss is non-finite ({loss})"
        else:
            message = f"Loss became non-finite ({loss}) probing {parameter} = {value!r}"
        super().__init__(message)


class LineSearchFailed(OptimizationError):
    """Raised when neither the line search nor the steepest-descent fallback decreases the loss."""
    def __init__(self, loss: float, directional_derivative: float):
        self.loss = loss
        self.directional_derivative = directional_derivative
        super().__init__(
            f"Line search failed at loss {loss:.6g} "
            f"(directional derivative {directional_derivative:.3g})"
        )


class MetricsError(ScenefitError):
    """Base class for evaluation errors."""
    pass


class EmptyMatching(MetricsError):
    """Raised when there are no prediction/ground-truth pairs to evaluate."""
    def __init__(self):
        super().__init__("Matching between predictions and ground truth is empty")


class LengthMismatch(MetricsError):
    """Raised when paired sequences differ in length."""
    def __init__(self, what: str, expected: int, actual: int):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected} items, got {actual}")


class InvalidMatching(MetricsError):
    """Raised when a matching pair indexes past the predictions or ground truths."""
    def __init__(self, pair: tuple[int, int], n_pred: int, n_gt: int):
        self.pair = pair
        self.n_pred = n_pred
        self.n_gt = n_gt
        super().__init__(
            f"Matching pair {pair} out of range for {n_pred} prediction(s), {n_gt} ground truth(s)"
        )


class DegenerateConfiguration(MetricsError):
    """Raised when a point set is too degenerate for alignment."""
    def __init__(self, detail: str):
        super().__init__(f"Degenerate point configuration: {detail}")


class DocumentError(ScenefitError):
    """Base class for scene document and configuration errors."""
    pass


class SchemaError(DocumentError):
    """Raised when a document does not match its schema."""
    def __init__(self, field_path: str, reason: str):
        self.field_path = field_path
        self.reason = reason
        super().__init__(f"{field_path}: {reason}")


class IoError(DocumentError):
    """Raised when a document or mesh cannot be written or read."""
    def __init__(self, path: str, original_exception: Exception | None = None):
        self.path = path
        self.original_exception = original_exception
        message = f"I/O failure on {path}"
        if original_exception:
            message += f": {original_exception}"
        super().__init__(message)


class SynthError(ScenefitError):
    """Base class for synthetic scene generation errors."""
    pass


class PlacementFailed(SynthError):
    """Raised when rejection sampling cannot place an object."""
    def __init__(self, what: str, attempts: int):
        self.what = what
        self.attempts = attempts
        super().__init__(f"Could not place {what} after {attempts} attempts")
