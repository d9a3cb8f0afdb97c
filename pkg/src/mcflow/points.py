"""Flat containers for control points.

A control point is an intersection of the hypersurface with a grid line.
Point clouds are stored as structure-of-arrays (`PointSet`) so that seeding,
reseeding and component construction stay vectorized; `ControlPoint` is the
scalar view used for inspection and single-point queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ControlPoint:
    """One surface/grid-line intersection.

    position    : point in R^d
    normal      : outward unit normal at the point
    axis        : axis of the grid line the point lies on (0-based)
    line_index  : grid indices of the fixed coordinates (base dims, ascending)
    height      : coordinate of the point along `axis`
    component   : component id, or -1 before component assignment
    """

    position: tuple
    normal: tuple
    axis: int
    line_index: tuple
    height: float
    component: int = -1


class PointSet:
    """Structure-of-arrays batch of control points.

    Arrays (n points in R^d):
      position   (n, d) float
      normal     (n, d) float, unit length
      axis       (n,)   int
      line_index (n, d-1) int, grid indices of the fixed coordinates
      height     (n,)   float, position[:, axis]
    """

    __slots__ = ("position", "normal", "axis", "line_index", "height")

    def __init__(self, position, normal, axis, line_index, height=None):
        self.position = np.ascontiguousarray(position, dtype=float)
        self.normal = np.ascontiguousarray(normal, dtype=float)
        self.axis = np.ascontiguousarray(axis, dtype=np.int64)
        self.line_index = np.ascontiguousarray(line_index, dtype=np.int64)
        if self.line_index.ndim == 1:
            self.line_index = self.line_index[:, None]
        if height is None:
            n = len(self.axis)
            height = self.position[np.arange(n), self.axis] if n else np.empty(0)
        self.height = np.ascontiguousarray(height, dtype=float)

    @property
    def dim(self):
        return self.position.shape[1]

    def __len__(self):
        return self.position.shape[0]

    @classmethod
    def empty(cls, dim):
        return cls(
            np.empty((0, dim)), np.empty((0, dim)),
            np.empty(0, dtype=np.int64), np.empty((0, dim - 1), dtype=np.int64),
            np.empty(0),
        )

    @classmethod
    def concatenate(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("cannot concatenate empty list of PointSets")
        return cls(
            np.concatenate([p.position for p in parts]),
            np.concatenate([p.normal for p in parts]),
            np.concatenate([p.axis for p in parts]),
            np.concatenate([p.line_index for p in parts]),
            np.concatenate([p.height for p in parts]),
        )

    def select(self, mask_or_index):
        return PointSet(
            self.position[mask_or_index], self.normal[mask_or_index],
            self.axis[mask_or_index], self.line_index[mask_or_index],
            self.height[mask_or_index],
        )

    def control_point(self, i, component=-1):
        return ControlPoint(
            position=tuple(self.position[i]),
            normal=tuple(self.normal[i]),
            axis=int(self.axis[i]),
            line_index=tuple(self.line_index[i]),
            height=float(self.height[i]),
            component=component,
        )
