"""Workspace model: ellipsoidal obstacles, bounds, goal region, collision predicates.

The robot is bounded by a sphere of radius ``robot_radius``; collision
checks test the robot center against obstacles inflated by that radius on
each semi-axis.  Boundary contact counts as collision (the free set is
open), and segments are checked by sampling at a fixed resolution.  Both
choices are conservative by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_RESOLUTION = 0.01  # segment sampling spacing, m


class ScenarioError(ValueError):
    """A scenario operation that cannot be applied (e.g. an obstacle placed
    on top of the robot)."""


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid {center, semi-axes}."""

    center: np.ndarray
    semi_axes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "semi_axes", np.asarray(self.semi_axes, dtype=float))
        if self.center.shape != (3,) or self.semi_axes.shape != (3,):
            raise ValueError("center and semi_axes must have shape (3,)")
        if not np.all(self.semi_axes > 0.0):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")

    def contains(self, p, inflation: float = 0.0) -> np.ndarray:
        """True where the inflated quadratic form is <= 1 (boundary included)."""
        p = np.asarray(p, dtype=float)
        scaled = (p - self.center) / (self.semi_axes + inflation)
        return np.sum(scaled ** 2, axis=-1) <= 1.0


@dataclass(frozen=True)
class GoalRegion:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.center.shape != (3,):
            raise ValueError("goal center must have shape (3,)")
        if not self.radius > 0.0:
            raise ValueError("goal radius must be positive")

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.linalg.norm(p - self.center, axis=-1) <= self.radius


@dataclass(frozen=True)
class World:
    """Immutable snapshot of obstacles, workspace bounds and goal region.

    ``bounds`` is a (2, 3) array of [lower; upper] corner of the free-space
    outer box.  Obstacle insertion produces a new snapshot (see
    ``add_obstacle``), delivered to planners between replan cycles.
    """

    obstacles: tuple
    bounds: np.ndarray
    goal: GoalRegion
    robot_radius: float

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        if self.bounds.shape != (2, 3):
            raise ValueError("bounds must have shape (2, 3)")
        if not np.all(self.bounds[1] > self.bounds[0]):
            raise ValueError("bounds must be non-degenerate")
        if not self.robot_radius >= 0.0:
            raise ValueError("robot_radius must be nonnegative")
        for obs in self.obstacles:
            # goal must stay reachable: keep the whole goal sphere clear
            if obs.contains(self.goal.center, self.robot_radius + self.goal.radius):
                raise ValueError("goal region intersects an inflated obstacle")

    def _obstacle_arrays(self):
        if not self.obstacles:
            return None, None
        centers = np.stack([o.center for o in self.obstacles])
        axes = np.stack([o.semi_axes for o in self.obstacles])
        return centers, axes


def point_free(p, world: World) -> np.ndarray:
    """True where p lies strictly inside bounds and strictly outside every
    obstacle inflated by the robot radius.  Broadcasts over leading axes."""
    p = np.asarray(p, dtype=float)
    inside = np.all((p > world.bounds[0]) & (p < world.bounds[1]), axis=-1)
    centers, axes = world._obstacle_arrays()
    if centers is None:
        return inside
    scaled = (p[..., None, :] - centers) / (axes + world.robot_radius)
    qf = np.sum(scaled ** 2, axis=-1)
    return inside & np.all(qf > 1.0, axis=-1)


def segment_free(p0, p1, world: World, resolution: float = DEFAULT_RESOLUTION) -> bool:
    """Collision check of the segment [p0, p1] by sampling at spacing
    <= resolution, endpoints included."""
    if not resolution > 0.0:
        raise ValueError("resolution must be positive")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = max(2, int(np.ceil(np.linalg.norm(p1 - p0) / resolution)) + 1)
    pts = p0 + np.linspace(0.0, 1.0, n)[:, None] * (p1 - p0)
    return bool(np.all(point_free(pts, world)))


def _segment_hits_ellipsoid(p0, p1, e: Ellipsoid, inflation: float,
                            resolution: float) -> bool:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = max(2, int(np.ceil(np.linalg.norm(p1 - p0) / resolution)) + 1)
    pts = p0 + np.linspace(0.0, 1.0, n)[:, None] * (p1 - p0)
    return bool(np.any(e.contains(pts, inflation)))


def add_obstacle(world: World, e: Ellipsoid, robot_position, plan_positions=None,
                 resolution: float = DEFAULT_RESOLUTION):
    """Append an obstacle, returning (new world, replan_needed flag).

    The flag is True iff the remaining edges of the active plan
    (``plan_positions``, consecutive waypoints) intersect the new inflated
    obstacle.  Rejects an obstacle that swallows the robot's current
    position: that is a scenario error, not a planning problem.
    """
    robot_position = np.asarray(robot_position, dtype=float)
    if e.contains(robot_position, world.robot_radius):
        raise ScenarioError("new obstacle contains the robot's current position")
    new_world = replace(world, obstacles=world.obstacles + (e,))
    flag = False
    if plan_positions is not None:
        pts = np.asarray(plan_positions, dtype=float)
        for k in range(len(pts) - 1):
            if _segment_hits_ellipsoid(pts[k], pts[k + 1], e,
                                       world.robot_radius, resolution):
                flag = True
                break
        if len(pts) == 1:
            flag = bool(e.contains(pts[0], world.robot_radius))
    return new_world, flag
