"""Flat parameter vectors over a SceneState and per-slice freeze masks."""
import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from body.model import BodyParams
from geometry.boxes import BBox3D, RoomLayout
from geometry.camera import CameraPose
from losses.state import SceneState

logger = logging.getLogger(__name__)

MIN_BOX_SIZE = 1e-3

LENGTH = "length"
ANGLE = "angle"
UNITLESS = "unitless"


@dataclass(frozen=True)
class ParamSlice:
    name: str
    start: int
    stop: int
    kind: str

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat parameter values with an ordered layout of named, disjoint slices."""

    values: np.ndarray
    layout: tuple[ParamSlice, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        expected = 0
        for part in self.layout:
            if part.start != expected or part.stop <= part.start:
                raise ValueError(f"Layout slice {part.name} is not contiguous with the previous one")
            expected = part.stop
        if expected != len(values):
            raise ValueError(f"Layout covers {expected} values, vector has {len(values)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))

    def __len__(self) -> int:
        return len(self.values)

    def get(self, name: str) -> np.ndarray:
        part = self.part(name)
        return self.values[part.start:part.stop]

    def part(self, name: str) -> ParamSlice:
        for part in self.layout:
            if part.name == name:
                return part
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def entry_names(self) -> list[str]:
        """Per-scalar names such as 'objects[0].centroid[1]'."""
        names = []
        for part in self.layout:
            names += [f"{part.name}[{k}]" if part.size > 1 else part.name for k in range(part.size)]
        return names

    def kinds(self) -> np.ndarray:
        kinds = np.empty(len(self.values), dtype=object)
        for part in self.layout:
            kinds[part.start:part.stop] = part.kind
        return kinds


@dataclass(frozen=True)
class FreezeMask:
    """Names of frozen slices; everything else is trainable."""

    frozen: frozenset[str]

    @classmethod
    def where(cls, layout: Iterable[ParamSlice], frozen: Callable[[str], bool]) -> "FreezeMask":
        return cls(frozenset(part.name for part in layout if frozen(part.name)))

    @classmethod
    def train_only(cls, layout: Iterable[ParamSlice], trainable: Callable[[str], bool]) -> "FreezeMask":
        return cls.where(layout, lambda name: not trainable(name))

    def trainable(self, layout: Iterable[ParamSlice]) -> np.ndarray:
        """Boolean per scalar, True where the value may change."""
        parts = list(layout)
        flags = np.ones(parts[-1].stop if parts else 0, dtype=bool)
        for part in parts:
            if part.name in self.frozen:
                flags[part.start:part.stop] = False
        return flags


class _LayoutBuilder:
    def __init__(self):
        self.parts: list[ParamSlice] = []
        self.chunks: list[np.ndarray] = []
        self.offset = 0

    def add(self, name: str, values, kind: str) -> None:
        values = np.atleast_1d(np.asarray(values, dtype=float)).reshape(-1)
        self.parts.append(ParamSlice(name, self.offset, self.offset + len(values), kind))
        self.chunks.append(values)
        self.offset += len(values)

    def build(self) -> ParamVector:
        return ParamVector(np.concatenate(self.chunks), tuple(self.parts))


def pack(state: SceneState) -> ParamVector:
    """Flatten every optimizable parameter of the state."""
    builder = _LayoutBuilder()
    builder.add("camera.pitch", state.camera.pitch, ANGLE)
    builder.add("camera.roll", state.camera.roll, ANGLE)
    for i, obj in enumerate(state.objects):
        builder.add(f"objects[{i}].centroid", obj.box.centroid, LENGTH)
        builder.add(f"objects[{i}].size", obj.box.size, LENGTH)
        builder.add(f"objects[{i}].yaw", obj.box.yaw, ANGLE)
    builder.add("layout.centroid", state.layout.box.centroid, LENGTH)
    builder.add("layout.size", state.layout.box.size, LENGTH)
    builder.add("layout.yaw", state.layout.box.yaw, ANGLE)
    if state.body is not None:
        params = state.body.params
        builder.add("body.translation", params.translation, LENGTH)
        builder.add("body.global_rotation", params.global_rotation, ANGLE)
        builder.add("body.pose", params.pose, ANGLE)
        builder.add("body.shape_scale", params.shape_scale, UNITLESS)
    return builder.build()


def _box_from(vector: ParamVector, prefix: str, box: BBox3D) -> BBox3D:
    centroid = vector.get(f"{prefix}.centroid")
    size = vector.get(f"{prefix}.size")
    yaw = float(vector.get(f"{prefix}.yaw")[0])
    if np.array_equal(centroid, box.centroid) and np.array_equal(size, box.size) and yaw == box.yaw:
        return box
    return BBox3D(centroid=centroid, size=np.maximum(size, MIN_BOX_SIZE), yaw=yaw)


def unpack(state: SceneState, vector: ParamVector) -> SceneState:
    """State with the vector's values; untouched objects and body are reused as-is.

    SDF grids are carried over unchanged. Box sizes are floored at MIN_BOX_SIZE.
    """
    pitch = float(vector.get("camera.pitch")[0])
    roll = float(vector.get("camera.roll")[0])
    camera = state.camera
    if pitch != camera.pitch or roll != camera.roll:
        camera = CameraPose(pitch=pitch, roll=roll)

    objects = []
    for i, obj in enumerate(state.objects):
        box = _box_from(vector, f"objects[{i}]", obj.box)
        objects.append(obj if box is obj.box else obj.with_box(box))
    objects = tuple(objects)
    if all(a is b for a, b in zip(objects, state.objects)):
        objects = state.objects

    layout_box = _box_from(vector, "layout", state.layout.box)
    layout = state.layout if layout_box is state.layout.box else RoomLayout(layout_box)

    body = state.body
    if body is not None:
        params = body.params
        translation = vector.get("body.translation")
        global_rotation = vector.get("body.global_rotation")
        pose = vector.get("body.pose").reshape(-1, 3)
        shape_scale = vector.get("body.shape_scale")
        changed = not (
            np.array_equal(translation, params.translation)
            and np.array_equal(global_rotation, params.global_rotation)
            and np.array_equal(pose, params.pose)
            and np.array_equal(shape_scale, params.shape_scale)
        )
        if changed:
            body = body.with_params(
                BodyParams(translation=translation, global_rotation=global_rotation, pose=pose,
                           shape_scale=shape_scale)
            )
    return state.replace(camera=camera, objects=objects, layout=layout, body=body)


def step_scales(vector: ParamVector, length_scale: float, angle_scale: float) -> np.ndarray:
    """Per-scalar step multipliers by parameter kind."""
    kinds = vector.kinds()
    scales = np.ones(len(vector))
    scales[kinds == LENGTH] = length_scale
    scales[kinds == ANGLE] = angle_scale
    return scales
