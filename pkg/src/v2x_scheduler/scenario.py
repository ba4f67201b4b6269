"""Synthetic intersection worlds and the per-unit confidence surrogate.

A world is a grid of ``grid_h x grid_w`` cells holding the ego (unit 0), ``N``
collaborators (one optionally a static roadside unit), moving objects that make up the
ground-truth occupancy map, and static opaque blocks that only occlude. A unit sees a
cell when the cell lies within its sensing radius and the segment from the unit to the
cell centre does not pass through any opaque footprint before it reaches that cell.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from v2x_scheduler.context import ScenarioConfig
from v2x_scheduler.utils import derive_seed

logger = logging.getLogger(__name__)

KMH_TO_MPS = 1.0 / 3.6

_PLACEMENT_ATTEMPTS = 400
_T_EPS = 1e-9


class ScenarioError(ValueError):
    """Raised when a scenario cannot be generated from a config."""


@dataclass(frozen=True)
class UnitState:
    """A unit (ego, CAV or roadside unit) at a position in metres."""

    x_m: float
    y_m: float
    speed_mps: float = 0.0
    heading_rad: float = 0.0
    is_rsu: bool = False
    sensor_range_m: float = 20.0

    @property
    def position(self) -> Tuple[float, float]:
        """Position ``(x, y)`` in metres."""
        return (self.x_m, self.y_m)

    @property
    def velocity(self) -> np.ndarray:
        """Velocity vector in m/s."""
        return self.speed_mps * np.array([math.cos(self.heading_rad), math.sin(self.heading_rad)])


@dataclass(frozen=True)
class SceneObject:
    """Axis-aligned footprint whose lower-left corner sits at ``(x_m, y_m)``.

    The footprint is rasterized by snapping the corner to the nearest cell corner.
    """

    x_m: float
    y_m: float
    size_x_cells: int
    size_y_cells: int
    vx_mps: float = 0.0
    vy_mps: float = 0.0

    def cells(self, cell_size_m: float) -> Tuple[int, int, int, int]:
        """Return ``(row0, row1, col0, col1)`` of the rasterized footprint (half-open)."""
        col0 = int(round(self.x_m / cell_size_m))
        row0 = int(round(self.y_m / cell_size_m))
        return row0, row0 + self.size_y_cells, col0, col0 + self.size_x_cells

    def box_m(self, cell_size_m: float) -> Tuple[float, float, float, float]:
        """Return ``(xmin, xmax, ymin, ymax)`` of the rasterized footprint in metres."""
        row0, row1, col0, col1 = self.cells(cell_size_m)
        return (col0 * cell_size_m, col1 * cell_size_m, row0 * cell_size_m, row1 * cell_size_m)


@dataclass(frozen=True)
class ScenarioWorld:
    """One frame of the intersection."""

    grid_h: int
    grid_w: int
    cell_size_m: float
    units: Tuple[UnitState, ...]
    objects: Tuple[SceneObject, ...]
    occluders: Tuple[SceneObject, ...] = ()
    gt_map: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        """Rasterize the ground truth when it was not supplied."""
        if len(self.units) < 2:
            raise ScenarioError("a world needs the ego and at least one collaborator")
        if self.gt_map is None:
            object.__setattr__(self, "gt_map", rasterize(self.objects, self.grid_h, self.grid_w, self.cell_size_m))

    @property
    def ego(self) -> UnitState:
        """The receiving vehicle."""
        return self.units[0]

    @property
    def collaborators(self) -> Tuple[UnitState, ...]:
        """Units 1..N."""
        return self.units[1:]

    @property
    def n_collaborators(self) -> int:
        """Number of collaborators N."""
        return len(self.units) - 1

    @property
    def shape(self) -> Tuple[int, int]:
        """Grid shape ``(H, W)``."""
        return (self.grid_h, self.grid_w)

    def opaque_boxes(self) -> np.ndarray:
        """Return every opaque footprint as rows of ``(xmin, xmax, ymin, ymax)``."""
        boxes = [o.box_m(self.cell_size_m) for o in (*self.objects, *self.occluders)]
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)

    def distances_to_ego(self) -> np.ndarray:
        """Euclidean distance from every collaborator to the ego, in metres."""
        ego = np.asarray(self.ego.position)
        return np.array([np.hypot(*(np.asarray(u.position) - ego)) for u in self.collaborators])

    def relative_speeds(self) -> np.ndarray:
        """Magnitude of every collaborator's velocity relative to the ego."""
        ego_v = self.ego.velocity
        return np.array([float(np.linalg.norm(u.velocity - ego_v)) for u in self.collaborators])

    def to_dict(self) -> Dict[str, Any]:
        """Export the world as JSON-ready data."""
        return {
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "cell_size_m": self.cell_size_m,
            "units": [vars(u).copy() for u in self.units],
            "objects": [vars(o).copy() for o in self.objects],
            "occluders": [vars(o).copy() for o in self.occluders],
            "gt_map": self.gt_map.astype(int).tolist(),
        }


@dataclass(frozen=True)
class ScenarioFrame:
    """A world with every unit's visibility map precomputed.

    Frames cut from one sequence share ``sequence_seed`` and carry, per earlier frame
    step, how far each ego-collaborator link moved. The environment replays those moves
    to keep the shadowing of a sequence correlated from frame to frame.
    """

    world: ScenarioWorld
    visibility: np.ndarray = field(compare=False)
    sequence_seed: Optional[int] = None
    link_moves_m: Tuple[np.ndarray, ...] = field(default=(), compare=False)


def rasterize(objects: Sequence[SceneObject], grid_h: int, grid_w: int, cell_size_m: float) -> np.ndarray:
    """Return the binary occupancy map covered by ``objects``."""
    gt = np.zeros((grid_h, grid_w), dtype=np.uint8)
    for obj in objects:
        row0, row1, col0, col1 = obj.cells(cell_size_m)
        gt[max(row0, 0) : min(row1, grid_h), max(col0, 0) : min(col1, grid_w)] = 1
    return gt


def _slab(p: float, d: np.ndarray, lo: np.ndarray | float, hi: np.ndarray | float) -> Tuple[np.ndarray, np.ndarray]:
    """Entry/exit parameters of ``p + t d`` through the open slab ``(lo, hi)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p) / d
        t2 = (hi - p) / d
    t_lo = np.minimum(t1, t2)
    t_hi = np.maximum(t1, t2)
    parallel = d == 0
    inside = (p > lo) & (p < hi)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
    return t_lo, t_hi


def visibility_map(unit: UnitState, world: ScenarioWorld) -> np.ndarray:
    """Return the boolean ``H x W`` map of cells ``unit`` can see in ``world``.

    A cell is visible iff its centre lies within the sensing radius and the segment from
    the unit to the centre crosses no opaque footprint before entering the cell; a cell
    inside an object is therefore visible when the ray reaches it through the object's
    near face. Footprints that contain the unit itself are ignored.
    """
    cs = world.cell_size_m
    px, py = unit.position
    cols = np.arange(world.grid_w, dtype=np.float64)
    rows = np.arange(world.grid_h, dtype=np.float64)
    dx = np.broadcast_to((cols + 0.5) * cs - px, world.shape)
    dy = np.broadcast_to(((rows + 0.5) * cs - py)[:, None], world.shape)
    in_range = np.hypot(dx, dy) <= unit.sensor_range_m

    # Parameter at which each segment enters its own target cell.
    cx_lo, cx_hi = _slab(px, dx, cols * cs, (cols + 1) * cs)
    cy_lo, cy_hi = _slab(py, dy, (rows * cs)[:, None], ((rows + 1) * cs)[:, None])
    t_cell = np.maximum(np.maximum(cx_lo, cy_lo), 0.0)

    visible = in_range.copy()
    for xmin, xmax, ymin, ymax in world.opaque_boxes():
        if xmin <= px <= xmax and ymin <= py <= ymax:
            continue
        x_lo, x_hi = _slab(px, dx, xmin, xmax)
        y_lo, y_hi = _slab(py, dy, ymin, ymax)
        t_in = np.maximum(np.maximum(x_lo, y_lo), 0.0)
        t_out = np.minimum(np.minimum(x_hi, y_hi), t_cell)
        visible &= ~(t_out - t_in > _T_EPS)
    return visible


def prepare_frame(
    world: ScenarioWorld,
    sequence_seed: Optional[int] = None,
    link_moves_m: Sequence[np.ndarray] = (),
) -> ScenarioFrame:
    """Precompute visibility for every unit of ``world``."""
    vis = np.stack([visibility_map(u, world) for u in world.units])
    return ScenarioFrame(
        world=world,
        visibility=vis,
        sequence_seed=sequence_seed,
        link_moves_m=tuple(np.asarray(m, dtype=np.float64) for m in link_moves_m),
    )


def link_moves(before: ScenarioWorld, after: ScenarioWorld) -> np.ndarray:
    """Return, per collaborator, how far the ego and that collaborator moved together.

    The move of a link is the ego displacement plus the collaborator displacement.
    """
    ego = math.dist(before.ego.position, after.ego.position)
    return np.array(
        [ego + math.dist(a.position, b.position) for a, b in zip(before.collaborators, after.collaborators)]
    )


def initial_confidence(
    unit: UnitState,
    world: ScenarioWorld,
    rng: np.random.Generator,
    cfg: Optional[ScenarioConfig] = None,
    visibility: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Return a unit's initial spatial confidence map.

    Visible occupied cells start at ``base_hit``, visible empty cells at ``base_miss``
    and unseen cells at ``occluded_prior``. Visible empty cells turn into false
    positives with probability ``false_positive_prob``. Every cell is perturbed by
    Gaussian noise and the result is clamped to ``[0.01, 0.99]``.

    The same number of random draws is consumed regardless of the configuration.
    """
    cfg = cfg or ScenarioConfig()
    vis = visibility_map(unit, world) if visibility is None else np.asarray(visibility, dtype=bool)
    gt = world.gt_map.astype(bool)
    tau = np.where(vis, np.where(gt, cfg.base_hit, cfg.base_miss), cfg.occluded_prior)

    fp_draw = rng.random(world.shape)
    fp_value = rng.uniform(cfg.false_positive_low, cfg.false_positive_high, size=world.shape)
    noise = rng.normal(0.0, 1.0, size=world.shape) * cfg.confidence_noise_std

    false_pos = vis & ~gt & (fp_draw < cfg.false_positive_prob)
    tau = np.where(false_pos, fp_value, tau) + noise
    return np.clip(tau, 0.01, 0.99)


def _reflect(pos: float, lo: float, hi: float) -> Tuple[float, bool]:
    """Fold ``pos`` back into ``[lo, hi]``; report whether the direction flips."""
    if hi <= lo:
        return lo, False
    span = hi - lo
    shifted = (pos - lo) % (2.0 * span)
    if shifted <= span:
        folds = math.floor((pos - lo) / span)
        return lo + shifted, folds % 2 == 1
    return hi - (shifted - span), True


def step_mobility(world: ScenarioWorld, interval_s: float) -> ScenarioWorld:
    """Advance units and objects by ``v * interval_s``, reflecting at the grid bounds.

    Roadside units stay where they are.
    """
    if interval_s <= 0:
        raise ValueError(f"interval_s must be > 0, got {interval_s}")
    cs = world.cell_size_m
    width_m = world.grid_w * cs
    height_m = world.grid_h * cs
    # Units live strictly inside the grid.
    hi_x = width_m - 1e-6
    hi_y = height_m - 1e-6

    units: List[UnitState] = []
    for unit in world.units:
        if unit.is_rsu or unit.speed_mps == 0.0:
            units.append(unit)
            continue
        vx, vy = unit.velocity
        x, flip_x = _reflect(unit.x_m + vx * interval_s, 0.0, hi_x)
        y, flip_y = _reflect(unit.y_m + vy * interval_s, 0.0, hi_y)
        vx = -vx if flip_x else vx
        vy = -vy if flip_y else vy
        units.append(replace(unit, x_m=x, y_m=y, heading_rad=math.atan2(vy, vx)))

    objects: List[SceneObject] = []
    for obj in world.objects:
        x, flip_x = _reflect(obj.x_m + obj.vx_mps * interval_s, 0.0, width_m - obj.size_x_cells * cs)
        y, flip_y = _reflect(obj.y_m + obj.vy_mps * interval_s, 0.0, height_m - obj.size_y_cells * cs)
        objects.append(
            replace(
                obj,
                x_m=x,
                y_m=y,
                vx_mps=-obj.vx_mps if flip_x else obj.vx_mps,
                vy_mps=-obj.vy_mps if flip_y else obj.vy_mps,
            )
        )
    return replace(world, units=tuple(units), objects=tuple(objects), gt_map=None)


class _Layout:
    """Cell bookkeeping used while placing things into a fresh world."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.rng = rng
        self.taken = np.zeros((cfg.grid_h, cfg.grid_w), dtype=bool)
        self.reserved = np.zeros_like(self.taken)

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        cs = self.cfg.cell_size_m
        return int(y // cs), int(x // cs)

    def inside(self, x: float, y: float) -> bool:
        cs = self.cfg.cell_size_m
        return 0.0 <= x < self.cfg.grid_w * cs and 0.0 <= y < self.cfg.grid_h * cs

    def unit_free(self, x: float, y: float) -> bool:
        if not self.inside(x, y):
            return False
        row, col = self.cell_of(x, y)
        r0, c0 = max(row - 1, 0), max(col - 1, 0)
        return not self.taken[r0 : row + 2, c0 : col + 2].any()

    def claim_unit(self, x: float, y: float) -> None:
        row, col = self.cell_of(x, y)
        self.taken[max(row - 1, 0) : row + 2, max(col - 1, 0) : col + 2] = True

    def footprint_free(self, obj: SceneObject, respect_reserved: bool = True) -> bool:
        row0, row1, col0, col1 = obj.cells(self.cfg.cell_size_m)
        if row0 < 0 or col0 < 0 or row1 > self.cfg.grid_h or col1 > self.cfg.grid_w:
            return False
        r0, c0 = max(row0 - 1, 0), max(col0 - 1, 0)
        if self.taken[r0 : row1 + 1, c0 : col1 + 1].any():
            return False
        return not (respect_reserved and self.reserved[row0:row1, col0:col1].any())

    def claim_footprint(self, obj: SceneObject) -> None:
        row0, row1, col0, col1 = obj.cells(self.cfg.cell_size_m)
        self.taken[row0:row1, col0:col1] = True

    def reserve_corridor(self, start: np.ndarray, end: np.ndarray, half_width_m: float) -> None:
        cs = self.cfg.cell_size_m
        rows, cols = np.mgrid[0 : self.cfg.grid_h, 0 : self.cfg.grid_w]
        centers = np.stack([(cols + 0.5) * cs, (rows + 0.5) * cs], axis=-1)
        seg = end - start
        t = np.clip(((centers - start) @ seg) / float(seg @ seg), 0.0, 1.0)
        closest = start + t[..., None] * seg
        self.reserved |= np.linalg.norm(centers - closest, axis=-1) <= half_width_m


def _vehicle(cfg: ScenarioConfig, cx: float, cy: float, along_x: bool, speed: float, sign: float) -> SceneObject:
    cs = cfg.cell_size_m
    sx, sy = (cfg.object_length_cells, cfg.object_width_cells) if along_x else (cfg.object_width_cells, cfg.object_length_cells)
    vx, vy = (sign * speed, 0.0) if along_x else (0.0, sign * speed)
    return SceneObject(x_m=cx - sx * cs / 2.0, y_m=cy - sy * cs / 2.0, size_x_cells=sx, size_y_cells=sy, vx_mps=vx, vy_mps=vy)


def _snap(obj: SceneObject, cell_size_m: float) -> SceneObject:
    row0, _, col0, _ = obj.cells(cell_size_m)
    return replace(obj, x_m=col0 * cell_size_m, y_m=row0 * cell_size_m)


def _random_speed(cfg: ScenarioConfig, rng: np.random.Generator) -> float:
    return float(rng.uniform(0.0, cfg.max_speed_kmh * KMH_TO_MPS))


def _plant_occlusion(
    cfg: ScenarioConfig, layout: _Layout, ego: UnitState, rng: np.random.Generator, as_rsu: bool = False
) -> Tuple[List[SceneObject], UnitState]:
    """Place a blocker, an object hidden behind it and a collaborator that sees it.

    With ``as_rsu`` the collaborator is the static roadside unit.
    """
    cs = cfg.cell_size_m
    p = np.asarray(ego.position)
    for _ in range(_PLACEMENT_ATTEMPTS):
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        direction = np.array([math.cos(theta), math.sin(theta)])
        blocker_c = p + 5.0 * cs * direction
        target_c = p + 12.0 * cs * direction
        helper = p + 20.0 * cs * direction
        if not (layout.inside(*helper) and layout.unit_free(*helper)):
            continue
        # Blocker lies across the ray so the segment crosses its interior.
        blocker = _snap(_vehicle(cfg, *blocker_c, along_x=abs(direction[1]) > abs(direction[0]), speed=0.0, sign=1.0), cs)
        target = _snap(_vehicle(cfg, *target_c, along_x=bool(rng.integers(2)), speed=0.0, sign=1.0), cs)
        if not (layout.footprint_free(blocker, False) and layout.footprint_free(target, False)):
            continue
        trial = ScenarioWorld(
            grid_h=cfg.grid_h,
            grid_w=cfg.grid_w,
            cell_size_m=cs,
            units=(
                ego,
                UnitState(
                    x_m=float(helper[0]),
                    y_m=float(helper[1]),
                    is_rsu=as_rsu,
                    sensor_range_m=cfg.rsu_sensor_range_m if as_rsu else cfg.sensor_range_m,
                ),
            ),
            objects=(blocker, target),
        )
        row0, row1, col0, col1 = target.cells(cs)
        hidden = ~visibility_map(ego, trial)[row0:row1, col0:col1]
        helper_unit = trial.units[1]
        seen = visibility_map(helper_unit, trial)[row0:row1, col0:col1]
        if not hidden.any() or not seen[hidden].any():
            continue
        layout.claim_footprint(blocker)
        layout.claim_footprint(target)
        layout.claim_unit(*helper)
        layout.reserve_corridor(p, helper, half_width_m=2.0 * cs)
        if as_rsu:
            return [blocker, target], helper_unit
        speed = _random_speed(cfg, rng)
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        return [blocker, target], replace(helper_unit, speed_mps=speed, heading_rad=heading)
    raise ScenarioError("could not plant a forced-occlusion constellation")


def generate_scenario(cfg: ScenarioConfig, seed: int) -> ScenarioWorld:
    """Generate a reproducible intersection world.

    Args:
        cfg: Grid size, unit count, object-count range and occluder density.
        seed: Seed of the world; equal seeds give identical worlds.

    Raises:
        ScenarioError: The object count cannot fit into the grid or placement failed.
    """
    cfg.validate()
    cs = cfg.cell_size_m
    footprint = (cfg.object_length_cells + 1) * (cfg.object_width_cells + 1)
    if cfg.max_objects * footprint > 0.5 * cfg.grid_h * cfg.grid_w:
        raise ScenarioError(
            f"{cfg.max_objects} objects of {cfg.object_length_cells}x{cfg.object_width_cells} "
            f"cells exceed the capacity of a {cfg.grid_h}x{cfg.grid_w} grid"
        )
    rng = np.random.default_rng(seed)
    layout = _Layout(cfg, rng)
    width_m, height_m = cfg.grid_w * cs, cfg.grid_h * cs

    ego = UnitState(
        x_m=float(width_m / 2.0 + rng.uniform(-4.0, 4.0) * cs),
        y_m=float(height_m / 2.0 + rng.uniform(-4.0, 4.0) * cs),
        speed_mps=_random_speed(cfg, rng),
        heading_rad=float(rng.uniform(0.0, 2.0 * math.pi)),
        sensor_range_m=cfg.sensor_range_m,
    )
    layout.claim_unit(*ego.position)

    objects: List[SceneObject] = []
    collaborators: List[UnitState] = []
    rsu: Optional[UnitState] = None
    n_cav = cfg.n_collaborators - (1 if cfg.include_rsu else 0)
    if cfg.force_occlusion:
        if cfg.max_objects < 2:
            raise ScenarioError("forced occlusion plants two objects; scenario.max_objects must be >= 2")
        # Only the roadside unit is left to see the hidden object.
        planted, helper = _plant_occlusion(cfg, layout, ego, rng, as_rsu=n_cav == 0)
        objects.extend(planted)
        if helper.is_rsu:
            rsu = helper
        else:
            collaborators.append(helper)

    while len(collaborators) < n_cav:
        for _ in range(_PLACEMENT_ATTEMPTS):
            radius = rng.uniform(8.0, min(cfg.sensor_range_m, 0.45 * max(width_m, height_m)))
            angle = rng.uniform(0.0, 2.0 * math.pi)
            x = ego.x_m + radius * math.cos(angle)
            y = ego.y_m + radius * math.sin(angle)
            if layout.unit_free(x, y):
                break
        else:
            raise ScenarioError("could not place a collaborator")
        layout.claim_unit(x, y)
        collaborators.append(
            UnitState(
                x_m=float(x),
                y_m=float(y),
                speed_mps=_random_speed(cfg, rng),
                heading_rad=float(rng.uniform(0.0, 2.0 * math.pi)),
                sensor_range_m=cfg.sensor_range_m,
            )
        )

    if cfg.include_rsu and rsu is None:
        corners = [(-1, -1), (1, -1), (-1, 1), (1, 1)]
        order = rng.permutation(len(corners))
        for idx in order:
            sx, sy = corners[idx]
            x = width_m / 2.0 + sx * 0.2 * width_m
            y = height_m / 2.0 + sy * 0.2 * height_m
            if layout.unit_free(x, y):
                break
        else:
            x, y = _free_point(layout, rng, width_m, height_m)
        layout.claim_unit(x, y)
        rsu = UnitState(x_m=float(x), y_m=float(y), is_rsu=True, sensor_range_m=cfg.rsu_sensor_range_m)
    if rsu is not None:
        collaborators.append(rsu)

    occluders: List[SceneObject] = []
    n_blocks = int(round(cfg.occluder_density * cfg.grid_h * cfg.grid_w / cfg.occluder_size_cells**2))
    size = cfg.occluder_size_cells
    for _ in range(n_blocks):
        for _ in range(_PLACEMENT_ATTEMPTS):
            block = SceneObject(
                x_m=float(rng.integers(0, cfg.grid_w - size + 1) * cs),
                y_m=float(rng.integers(0, cfg.grid_h - size + 1) * cs),
                size_x_cells=size,
                size_y_cells=size,
            )
            if layout.footprint_free(block):
                layout.claim_footprint(block)
                occluders.append(block)
                break
        else:
            logger.debug("skipping an occluder block after %d attempts", _PLACEMENT_ATTEMPTS)

    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    while len(objects) < n_objects:
        for _ in range(_PLACEMENT_ATTEMPTS):
            along_x = bool(rng.integers(2))
            obj = _snap(
                _vehicle(
                    cfg,
                    float(rng.uniform(0.0, width_m)),
                    float(rng.uniform(0.0, height_m)),
                    along_x=along_x,
                    speed=_random_speed(cfg, rng),
                    sign=1.0 if rng.integers(2) else -1.0,
                ),
                cs,
            )
            if layout.footprint_free(obj):
                break
        else:
            raise ScenarioError(f"could not place object {len(objects) + 1} of {n_objects}")
        layout.claim_footprint(obj)
        objects.append(obj)

    return ScenarioWorld(
        grid_h=cfg.grid_h,
        grid_w=cfg.grid_w,
        cell_size_m=cs,
        units=(ego, *collaborators),
        objects=tuple(objects),
        occluders=tuple(occluders),
    )


def _free_point(layout: _Layout, rng: np.random.Generator, width_m: float, height_m: float) -> Tuple[float, float]:
    for _ in range(_PLACEMENT_ATTEMPTS):
        x, y = float(rng.uniform(0.0, width_m)), float(rng.uniform(0.0, height_m))
        if layout.unit_free(x, y):
            return x, y
    raise ScenarioError("could not place the roadside unit")


def build_pool(cfg: ScenarioConfig, seed: int, size: int, name: str = "pool") -> List[ScenarioFrame]:
    """Build ``size`` frames from sequences of consecutive, mobility-advanced worlds.

    Each sequence starts from :func:`generate_scenario` and advances by
    ``frame_interval_s`` per frame with :func:`step_mobility`. Every frame records the
    sequence seed and the link moves that led up to it.
    """
    frames: List[ScenarioFrame] = []
    sequence = 0
    while len(frames) < size:
        sequence_seed = derive_seed(seed, name, sequence)
        world = generate_scenario(cfg, sequence_seed)
        moves: List[np.ndarray] = []
        for k in range(cfg.frames_per_sequence):
            if len(frames) >= size:
                break
            if k:
                previous, world = world, step_mobility(world, cfg.frame_interval_s)
                moves.append(link_moves(previous, world))
            frames.append(prepare_frame(world, sequence_seed, moves))
        sequence += 1
    logger.info("built %s pool: %d frames from %d sequences", name, len(frames), sequence)
    return frames


def case_study_config(base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Return the forced-occlusion scenario family used for case studies."""
    base = base or ScenarioConfig()
    return replace(base, force_occlusion=True, frames_per_sequence=1)
