"""
Procedural Grid-World family compiled to tabular MDPs.

Map text format (lossless round trip through `format_grid`/`parse_grid`):

    name = two_rooms
    gamma = 0.99
    slip_prob = 0.0
    object A = 1.0 respawn
    object B = 0.5 consume
    ---
    ....#....
    .S..#..B.
    .........

'#' is a wall, '.' floor, 'S' a start cell, other capitals objects and the
lowercase letter of a label an object on a start cell.
"""
import logging
import string
from collections import deque
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from pmdlab.config import settings
from pmdlab.errors import GridValidationError, RetryLimitError
from pmdlab.mdp.tabular import TabularMdp
from pmdlab.models.schemas import Cell, GridDistribution, GridObject, GridSpec

logger = logging.getLogger(__name__)

# up, down, left, right, no-op
MOVES: Tuple[Cell, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
ACTION_NAMES = ("up", "down", "left", "right", "stay")

# "S" marks start cells, so it is not an object label.
OBJECT_LABELS = string.ascii_uppercase.replace("S", "")

HELD_OUT_NAMES = ("open_room", "two_rooms", "four_rooms", "corridor", "maze")

DEFAULT_MAX_STATES = 1024


# ============================================================================
# Validation
# ============================================================================

def _in_bounds(spec: GridSpec, cell: Cell) -> bool:
    return 0 <= cell[0] < spec.height and 0 <= cell[1] < spec.width


def _step(spec: GridSpec, cell: Cell, move: Cell) -> Cell:
    target = (cell[0] + move[0], cell[1] + move[1])
    if not _in_bounds(spec, target) or target in spec.walls:
        return cell
    return target


def reachable_cells(spec: GridSpec, start: Cell) -> FrozenSet[Cell]:
    """Cells reachable from `start` by the four moves."""
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for move in MOVES[:4]:
            nxt = _step(spec, cell, move)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return frozenset(seen)


def validate_spec(spec: GridSpec, max_states: int = DEFAULT_MAX_STATES) -> None:
    """Raise GridValidationError unless the layout is well formed."""
    for wall in spec.walls:
        if not _in_bounds(spec, wall):
            raise GridValidationError(f"wall {wall} is outside the grid")
    for cell in spec.start_cells:
        if not _in_bounds(spec, cell) or cell in spec.walls:
            raise GridValidationError(f"start cell {cell} is outside the grid or a wall")
    object_cells = [obj.cell for obj in spec.objects]
    if len(set(object_cells)) != len(object_cells):
        raise GridValidationError("at most one object per cell")
    if len(spec.objects) > len(OBJECT_LABELS):
        raise GridValidationError(f"at most {len(OBJECT_LABELS)} objects per grid")
    for cell in object_cells:
        if not _in_bounds(spec, cell) or cell in spec.walls:
            raise GridValidationError(f"object cell {cell} is outside the grid or a wall")
    if num_grid_states(spec) > max_states:
        raise GridValidationError(f"grid has {num_grid_states(spec)} states, more than {max_states}")
    rewarding = {obj.cell for obj in spec.objects if obj.reward > 0}
    for start in spec.start_cells:
        if not rewarding & reachable_cells(spec, start):
            raise GridValidationError(f"no rewarding object reachable from start cell {start}")


# ============================================================================
# Compilation
# ============================================================================

def free_cells(spec: GridSpec) -> List[Cell]:
    return [(r, c) for r in range(spec.height) for c in range(spec.width) if (r, c) not in spec.walls]


def _consumables(spec: GridSpec) -> List[GridObject]:
    return [obj for obj in spec.objects if not obj.respawn]


def num_grid_states(spec: GridSpec) -> int:
    return len(free_cells(spec)) * 2 ** len(_consumables(spec))


def state_index(spec: GridSpec) -> Dict[Tuple[Cell, int], int]:
    """Map (cell, consumable-presence mask) to a state index."""
    cells = free_cells(spec)
    masks = 2 ** len(_consumables(spec))
    return {(cell, mask): i * masks + mask for i, cell in enumerate(cells) for mask in range(masks)}


def compile_grid(spec: GridSpec, max_states: int = DEFAULT_MAX_STATES) -> TabularMdp:
    """Compile a layout into a TabularMdp with 5 actions (4 moves and no-op).

    Entering (or staying on) an object's cell collects it; respawning objects
    stay, consumable ones clear their bit in the state's presence mask.
    """
    validate_spec(spec, max_states)
    index = state_index(spec)
    consumables = _consumables(spec)
    bit_of = {obj.cell: j for j, obj in enumerate(consumables)}
    respawning = {obj.cell: obj.reward for obj in spec.objects if obj.respawn}
    consumable_reward = {obj.cell: obj.reward for obj in consumables}
    full_mask = 2 ** len(consumables) - 1

    S, A = len(index), len(MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for (cell, mask), s in index.items():
        for a in range(A):
            # Intended move with prob 1 - slip, otherwise a uniformly random action.
            weights = np.full(A, spec.slip_prob / A)
            weights[a] += 1.0 - spec.slip_prob
            for b, w in enumerate(weights):
                if w == 0.0:
                    continue
                dest = _step(spec, cell, MOVES[b])
                next_mask = mask
                reward = respawning.get(dest, 0.0)
                if dest in bit_of and mask >> bit_of[dest] & 1:
                    reward = consumable_reward[dest]
                    next_mask = mask & ~(1 << bit_of[dest])
                P[s, a, index[(dest, next_mask)]] += w
                R[s, a] += w * reward
    P /= P.sum(axis=2, keepdims=True)
    R = np.clip(R, 0.0, 1.0)

    mu = np.zeros(S)
    for cell in spec.start_cells:
        mu[index[(cell, full_mask)]] = 1.0
    mu /= mu.sum()
    return TabularMdp(P, R, spec.gamma, mu)


# ============================================================================
# Sampling
# ============================================================================

def _grid_rng(dist: GridDistribution, seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([dist.seed, seed])))


def sample_task(dist: GridDistribution, seed: int) -> GridSpec:
    """Draw one valid layout; deterministic in (dist.seed, seed)."""
    rng = _grid_rng(dist, seed)
    for attempt in range(dist.max_retries):
        width = int(rng.integers(dist.width_range[0], dist.width_range[1] + 1))
        height = int(rng.integers(dist.height_range[0], dist.height_range[1] + 1))
        density = float(rng.uniform(*dist.wall_density_range))
        wall_mask = rng.random((height, width)) < density
        walls = frozenset((r, c) for r in range(height) for c in range(width) if wall_mask[r, c])
        cells = [(r, c) for r in range(height) for c in range(width) if (r, c) not in walls]
        num_objects = int(rng.integers(dist.object_count_range[0], dist.object_count_range[1] + 1))
        if len(cells) < num_objects + 1:
            continue
        chosen = rng.permutation(len(cells))[: num_objects + 1]
        start = cells[chosen[0]]
        objects = tuple(
            GridObject(cell=cells[i], reward=float(rng.choice(dist.reward_values)), respawn=True)
            for i in chosen[1:]
        )
        spec = GridSpec(
            name=f"sampled_{dist.seed}_{seed}",
            width=width,
            height=height,
            walls=walls,
            objects=objects,
            start_cells=frozenset([start]),
            gamma=dist.gamma,
            slip_prob=dist.slip_prob,
        )
        try:
            validate_spec(spec, dist.max_states)
        except GridValidationError as e:
            logger.debug("Rejected sampled grid (attempt %d): %s", attempt, e)
            continue
        return spec
    raise RetryLimitError(f"no valid grid after {dist.max_retries} attempts (seed={seed})")


# ============================================================================
# Text format
# ============================================================================

def format_grid(spec: GridSpec) -> str:
    """Render a layout in the map text format."""
    lines = [f"name = {spec.name}", f"gamma = {spec.gamma!r}", f"slip_prob = {spec.slip_prob!r}"]
    cell_char: Dict[Cell, str] = {cell: "#" for cell in spec.walls}
    for cell in spec.start_cells:
        cell_char[cell] = "S"
    for label, obj in zip(OBJECT_LABELS, spec.objects):
        mode = "respawn" if obj.respawn else "consume"
        lines.append(f"object {label} = {obj.reward!r} {mode}")
        cell_char[obj.cell] = label.lower() if obj.cell in spec.start_cells else label
    lines.append("---")
    for r in range(spec.height):
        lines.append("".join(cell_char.get((r, c), ".") for c in range(spec.width)))
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> GridSpec:
    """Parse the map text format; raises GridValidationError on malformed input."""
    header_lines, sep, body = text.partition("\n---\n")
    if not sep:
        raise GridValidationError("map text needs a '---' line between header and map")
    header: Dict[str, str] = {}
    object_defs: Dict[str, Tuple[float, bool]] = {}
    for raw in header_lines.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise GridValidationError(f"bad header line: {raw!r}")
        key, value = key.strip(), value.strip()
        if key.startswith("object "):
            label = key.split()[1]
            parts = value.split()
            if len(label) != 1 or label not in OBJECT_LABELS or len(parts) != 2 \
                    or parts[1] not in ("respawn", "consume"):
                raise GridValidationError(f"bad object line: {raw!r}")
            object_defs[label] = (float(parts[0]), parts[1] == "respawn")
        else:
            header[key] = value

    rows = [row for row in body.splitlines() if row.strip()]
    if not rows or len({len(row) for row in rows}) != 1:
        raise GridValidationError("map rows must be nonempty and of equal width")
    walls, starts, placed = set(), set(), {}
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                starts.add((r, c))
            elif ch.upper() in object_defs:
                if ch.upper() in placed:
                    raise GridValidationError(f"object {ch.upper()} placed twice")
                placed[ch.upper()] = (r, c)
                if ch.islower():
                    starts.add((r, c))
            elif ch != ".":
                raise GridValidationError(f"unknown map character {ch!r} at {(r, c)}")
    missing = set(object_defs) - set(placed)
    if missing:
        raise GridValidationError(f"objects {sorted(missing)} are declared but not placed")
    objects = tuple(
        GridObject(cell=placed[label], reward=reward, respawn=respawn)
        for label, (reward, respawn) in object_defs.items()
    )
    try:
        spec = GridSpec(
            name=header.get("name", "grid"),
            width=len(rows[0]),
            height=len(rows),
            walls=frozenset(walls),
            objects=objects,
            start_cells=frozenset(starts),
            gamma=float(header.get("gamma", 0.99)),
            slip_prob=float(header.get("slip_prob", 0.0)),
        )
    except ValueError as e:
        raise GridValidationError(f"invalid grid: {e}") from e
    validate_spec(spec)
    return spec


def load_grid_file(path: Path) -> GridSpec:
    return parse_grid(Path(path).read_text())


def held_out_configs(directory: Optional[Path] = None) -> List[GridSpec]:
    """The shipped evaluation layouts, in documented order."""
    directory = settings.gridworld_dir if directory is None else Path(directory)
    return [load_grid_file(directory / f"{name}.txt") for name in HELD_OUT_NAMES]


def held_out_config(name: str, directory: Optional[Path] = None) -> GridSpec:
    if name not in HELD_OUT_NAMES:
        raise KeyError(f"unknown held-out grid {name!r}; choose from {', '.join(HELD_OUT_NAMES)}")
    directory = settings.gridworld_dir if directory is None else Path(directory)
    return load_grid_file(directory / f"{name}.txt")


def resolve_environment(env: Optional[str], sample_seed: Optional[int] = None,
                        dist: Optional[GridDistribution] = None) -> GridSpec:
    """Held-out name, path to a map file, or a sample from the distribution."""
    if env is None:
        if sample_seed is None:
            raise GridValidationError("need an environment name, a map file or a sample seed")
        return sample_task(dist or GridDistribution(), sample_seed)
    if env in HELD_OUT_NAMES:
        return held_out_config(env)
    path = Path(env)
    if path.exists():
        return load_grid_file(path)
    raise GridValidationError(f"unknown environment {env!r}")
