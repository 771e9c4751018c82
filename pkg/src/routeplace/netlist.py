"""Circuit data model, netlist/placement file IO, and synthetic generation.

A netlist is a hypergraph: cells carry pins, pins belong to nets. The file
format is a minimal line-based text form (see parse_netlist). Cell
coordinates refer to the lower-left corner; a pin's absolute position is
cell origin plus its offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DanglingReferenceError,
    InfeasibleSpecError,
    InvariantError,
    ParseError,
)

DIR_INPUT = "I"
DIR_OUTPUT = "O"


@dataclass(frozen=True)
class LayoutRegion:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvariantError(f"degenerate region {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


@dataclass(frozen=True)
class RoutingGrid:
    n: int  # horizontal grid count (columns, x direction)
    m: int  # vertical grid count (rows, y direction)
    cap_h: float  # wires per grid crossed horizontally
    cap_v: float

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvariantError(f"grid must be at least 1x1, got {self.n}x{self.m}")
        if self.cap_h <= 0 or self.cap_v <= 0:
            raise InvariantError("grid capacities must be positive")


@dataclass(frozen=True)
class Cell:
    width: float
    height: float
    fixed: bool = False
    pin_offsets: tuple[tuple[float, float], ...] = ()
    # Optional coordinates from the netlist file; mandatory for fixed cells.
    x: float | None = None
    y: float | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvariantError(f"cell sizes must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Net:
    pin_indices: tuple[int, ...]


@dataclass(frozen=True)
class Pin:
    cell: int
    net: int
    direction: str  # DIR_INPUT or DIR_OUTPUT
    offset: tuple[float, float]

    def __post_init__(self):
        if self.direction not in (DIR_INPUT, DIR_OUTPUT):
            raise InvariantError(f"pin direction must be I or O, got {self.direction!r}")


@dataclass(frozen=True)
class Placement:
    x: np.ndarray
    y: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Placement):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)


@dataclass
class NetlistArrays:
    """Vectorized views of a netlist, shared by every numeric module."""

    cell_w: np.ndarray
    cell_h: np.ndarray
    fixed_mask: np.ndarray
    movable_mask: np.ndarray
    cell_x: np.ndarray  # nan where the file gave no coordinate
    cell_y: np.ndarray
    pin_cell: np.ndarray
    pin_net: np.ndarray
    pin_dx: np.ndarray
    pin_dy: np.ndarray
    pin_is_input: np.ndarray
    cell_degree: np.ndarray  # pins per cell
    net_degree: np.ndarray  # pins per net


@dataclass(eq=False)
class Netlist:
    cells: list[Cell]
    nets: list[Net]
    pins: list[Pin]
    region: LayoutRegion
    grid: RoutingGrid

    def __eq__(self, other):
        if not isinstance(other, Netlist):
            return NotImplemented
        return (
            self.cells == other.cells
            and self.nets == other.nets
            and self.pins == other.pins
            and self.region == other.region
            and self.grid == other.grid
        )

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_nets(self) -> int:
        return len(self.nets)

    @property
    def num_pins(self) -> int:
        return len(self.pins)

    def validate(self) -> None:
        """Check every structural invariant; raise InvariantError on failure."""
        num_cells, num_nets, num_pins = self.num_cells, self.num_nets, self.num_pins
        for k, pin in enumerate(self.pins):
            if not (0 <= pin.cell < num_cells):
                raise DanglingReferenceError(f"pin {k} references cell {pin.cell}")
            if not (0 <= pin.net < num_nets):
                raise DanglingReferenceError(f"pin {k} references net {pin.net}")
        for e, net in enumerate(self.nets):
            if len(net.pin_indices) < 2:
                raise InvariantError(f"net {e} has {len(net.pin_indices)} pins, needs >= 2")
            if len(set(net.pin_indices)) != len(net.pin_indices):
                raise InvariantError(f"net {e} lists a pin twice")
            for k in net.pin_indices:
                if not (0 <= k < num_pins):
                    raise DanglingReferenceError(f"net {e} references pin {k}")
                if self.pins[k].net != e:
                    raise InvariantError(f"pin {k} disagrees with net {e} membership")
        for v, cell in enumerate(self.cells):
            if cell.fixed:
                if cell.x is None or cell.y is None:
                    raise InvariantError(f"fixed cell {v} has no coordinates")
                if not (
                    self.region.x0 <= cell.x
                    and cell.x + cell.width <= self.region.x1
                    and self.region.y0 <= cell.y
                    and cell.y + cell.height <= self.region.y1
                ):
                    raise InvariantError(f"fixed cell {v} lies outside the region")

    def arrays(self) -> NetlistArrays:
        cached = getattr(self, "_arrays", None)
        if cached is not None:
            return cached
        num_cells = self.num_cells
        fixed = np.array([c.fixed for c in self.cells], dtype=bool)
        arr = NetlistArrays(
            cell_w=np.array([c.width for c in self.cells], dtype=float),
            cell_h=np.array([c.height for c in self.cells], dtype=float),
            fixed_mask=fixed,
            movable_mask=~fixed,
            cell_x=np.array(
                [c.x if c.x is not None else math.nan for c in self.cells], dtype=float
            ),
            cell_y=np.array(
                [c.y if c.y is not None else math.nan for c in self.cells], dtype=float
            ),
            pin_cell=np.array([p.cell for p in self.pins], dtype=np.intp),
            pin_net=np.array([p.net for p in self.pins], dtype=np.intp),
            pin_dx=np.array([p.offset[0] for p in self.pins], dtype=float),
            pin_dy=np.array([p.offset[1] for p in self.pins], dtype=float),
            pin_is_input=np.array([p.direction == DIR_INPUT for p in self.pins], dtype=bool),
            cell_degree=np.bincount(
                [p.cell for p in self.pins], minlength=num_cells
            ).astype(float),
            net_degree=np.array([len(n.pin_indices) for n in self.nets], dtype=float),
        )
        self._arrays = arr
        return arr

    def initial_placement(self) -> Placement:
        """Placement from the coordinates in the netlist file (nan if absent)."""
        arr = self.arrays()
        return Placement(arr.cell_x.copy(), arr.cell_y.copy())


class GridGeometry:
    """Derived geometry of a routing grid laid over a region.

    Grid cell (i, j) covers [x0 + i*pitch_x, x0 + (i+1)*pitch_x) x
    [y0 + j*pitch_y, ...); points exactly on the upper region boundary
    fall into the last column/row.
    """

    def __init__(self, region: LayoutRegion, grid: RoutingGrid):
        self.region = region
        self.grid = grid
        self.n = grid.n
        self.m = grid.m
        self.pitch_x = region.width / grid.n
        self.pitch_y = region.height / grid.m
        self.pitch = min(self.pitch_x, self.pitch_y)
        self.edges_x = region.x0 + self.pitch_x * np.arange(grid.n + 1)
        self.edges_y = region.y0 + self.pitch_y * np.arange(grid.m + 1)
        self.centers_x = region.x0 + self.pitch_x * (np.arange(grid.n) + 0.5)
        self.centers_y = region.y0 + self.pitch_y * (np.arange(grid.m) + 0.5)
        self.bin_area = self.pitch_x * self.pitch_y

    def bin_x(self, px):
        """Column index of x-coordinate(s); upper boundary clamps to n-1."""
        i = np.floor((np.asarray(px, dtype=float) - self.region.x0) / self.pitch_x)
        return np.clip(i, 0, self.n - 1).astype(np.intp)

    def bin_y(self, py):
        j = np.floor((np.asarray(py, dtype=float) - self.region.y0) / self.pitch_y)
        return np.clip(j, 0, self.m - 1).astype(np.intp)


def _fmt(v: float) -> str:
    """Shortest decimal text that round-trips the float exactly."""
    return repr(float(v))


# --------------------------------------------------------------------------
# Netlist file format


def parse_netlist(text: str) -> Netlist:
    """Parse the line-based netlist format.

    Lines: `region x0 y0 x1 y1`, `grid n m cap_h cap_v`,
    `cell <id> <w> <h> <fixed:0|1> [<x> <y>]`, `net <id>`,
    `pin <cell_id> <net_id> <dir:I|O> <dx> <dy>`. `#` starts a comment.
    Cell and net ids must be dense, zero-based, and in order; a pin line
    must follow the declarations of its cell and net.
    """
    region = None
    grid = None
    cells: list[Cell] = []
    nets: list[tuple[int, list[int]]] = []
    pins: list[Pin] = []

    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        try:
            if kind == "region":
                if len(tok) != 5:
                    raise ParseError(f"line {ln}: region needs 4 values")
                region = LayoutRegion(*map(float, tok[1:5]))
            elif kind == "grid":
                if len(tok) != 5:
                    raise ParseError(f"line {ln}: grid needs 4 values")
                grid = RoutingGrid(int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4]))
            elif kind == "cell":
                if len(tok) not in (5, 7):
                    raise ParseError(f"line {ln}: cell needs 4 or 6 values")
                cid = int(tok[1])
                if cid != len(cells):
                    raise ParseError(f"line {ln}: expected cell id {len(cells)}, got {cid}")
                x = float(tok[5]) if len(tok) == 7 else None
                y = float(tok[6]) if len(tok) == 7 else None
                fixed_tok = tok[4]
                if fixed_tok not in ("0", "1"):
                    raise ParseError(f"line {ln}: fixed flag must be 0 or 1")
                cells.append(
                    Cell(float(tok[2]), float(tok[3]), fixed_tok == "1", (), x, y)
                )
            elif kind == "net":
                if len(tok) != 2:
                    raise ParseError(f"line {ln}: net needs 1 value")
                eid = int(tok[1])
                if eid != len(nets):
                    raise ParseError(f"line {ln}: expected net id {len(nets)}, got {eid}")
                nets.append((eid, []))
            elif kind == "pin":
                if len(tok) != 6:
                    raise ParseError(f"line {ln}: pin needs 5 values")
                cid, eid = int(tok[1]), int(tok[2])
                if not (0 <= cid < len(cells)):
                    raise DanglingReferenceError(
                        f"line {ln}: pin references undeclared cell {cid}"
                    )
                if not (0 <= eid < len(nets)):
                    raise DanglingReferenceError(
                        f"line {ln}: pin references undeclared net {eid}"
                    )
                pin = Pin(cid, eid, tok[3], (float(tok[4]), float(tok[5])))
                nets[eid][1].append(len(pins))
                pins.append(pin)
            else:
                raise ParseError(f"line {ln}: unknown directive {kind!r}")
        except (ValueError, InvariantError) as exc:
            if isinstance(exc, InvariantError):
                raise
            raise ParseError(f"line {ln}: {exc}") from exc

    if region is None:
        raise ParseError("missing region line")
    if grid is None:
        raise ParseError("missing grid line")

    # Rebuild cells with pin offsets gathered from their pins.
    offsets: list[list[tuple[float, float]]] = [[] for _ in cells]
    for p in pins:
        offsets[p.cell].append(p.offset)
    cells = [replace(c, pin_offsets=tuple(offs)) for c, offs in zip(cells, offsets)]

    netlist = Netlist(
        cells=cells,
        nets=[Net(tuple(members)) for _, members in nets],
        pins=pins,
        region=region,
        grid=grid,
    )
    netlist.validate()
    return netlist


def write_netlist(netlist: Netlist) -> str:
    """Serialize to the netlist format; pins grouped under their net."""
    out = [
        "# routeplace netlist",
        "region "
        + " ".join(
            _fmt(v)
            for v in (
                netlist.region.x0,
                netlist.region.y0,
                netlist.region.x1,
                netlist.region.y1,
            )
        ),
        f"grid {netlist.grid.n} {netlist.grid.m} "
        f"{_fmt(netlist.grid.cap_h)} {_fmt(netlist.grid.cap_v)}",
    ]
    for v, cell in enumerate(netlist.cells):
        line = f"cell {v} {_fmt(cell.width)} {_fmt(cell.height)} {1 if cell.fixed else 0}"
        if cell.x is not None and cell.y is not None:
            line += f" {_fmt(cell.x)} {_fmt(cell.y)}"
        out.append(line)
    for e, net in enumerate(netlist.nets):
        out.append(f"net {e}")
        for k in net.pin_indices:
            pin = netlist.pins[k]
            out.append(
                f"pin {pin.cell} {pin.net} {pin.direction} "
                f"{_fmt(pin.offset[0])} {_fmt(pin.offset[1])}"
            )
    return "\n".join(out) + "\n"


def write_placement(placement: Placement) -> str:
    """One `x y` line per cell, ordered by cell id, full precision."""
    if placement.x.shape != placement.y.shape:
        raise InvariantError("placement x/y length mismatch")
    return "\n".join(
        f"{_fmt(x)} {_fmt(y)}" for x, y in zip(placement.x, placement.y)
    ) + "\n"


def read_placement(text: str, expected_cells: int | None = None) -> Placement:
    xs: list[float] = []
    ys: list[float] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise ParseError(f"line {ln}: placement line needs 2 values")
        try:
            xs.append(float(tok[0]))
            ys.append(float(tok[1]))
        except ValueError as exc:
            raise ParseError(f"line {ln}: {exc}") from exc
    if expected_cells is not None and len(xs) != expected_cells:
        raise InvariantError(
            f"placement has {len(xs)} cells, netlist has {expected_cells}"
        )
    return Placement(np.array(xs, dtype=float), np.array(ys, dtype=float))


# --------------------------------------------------------------------------
# Synthetic generation


@dataclass
class SyntheticSpec:
    """Parameters for generate_synthetic; mirrors the `gen` config file."""

    cell_count: int = 100
    net_count: int = 80
    pins_min: int = 2
    pins_max: int = 6
    degree_power: float = 2.0  # P(d) ~ d^-power, truncated to [pins_min, pins_max]
    region: LayoutRegion = field(default_factory=lambda: LayoutRegion(0.0, 0.0, 64.0, 64.0))
    grid: RoutingGrid = field(default_factory=lambda: RoutingGrid(8, 8, 12.0, 12.0))
    fixed_fraction: float = 0.05
    cell_w_min: float = 1.0
    cell_w_max: float = 2.0
    cell_h_min: float = 1.0
    cell_h_max: float = 2.0
    connected: bool = True
    seed: int = 0


def _net_degrees(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.pins_min, spec.pins_max
    if lo < 2:
        raise InfeasibleSpecError("pins_min must be >= 2")
    if hi < lo:
        raise InfeasibleSpecError("pins_max < pins_min")
    if lo > spec.cell_count:
        raise InfeasibleSpecError(
            f"pins_min {lo} exceeds cell count {spec.cell_count}"
        )
    degrees = np.arange(lo, min(hi, spec.cell_count) + 1)
    weights = degrees.astype(float) ** -spec.degree_power
    weights /= weights.sum()
    return rng.choice(degrees, size=spec.net_count, p=weights)


def generate_synthetic(spec: SyntheticSpec) -> Netlist:
    """Deterministic synthetic netlist from a spec.

    Net degrees follow a truncated power law. When spec.connected is set,
    membership is grown so that every cell ends up reachable from net 0:
    each net takes one already-covered cell (after the first net) and draws
    the rest from the not-yet-covered pool while it lasts.
    """
    if spec.cell_count < 1 or spec.net_count < 1:
        raise InfeasibleSpecError("cell_count and net_count must be >= 1")
    rng = np.random.default_rng(spec.seed)
    num_cells = spec.cell_count

    widths = rng.uniform(spec.cell_w_min, spec.cell_w_max, num_cells)
    heights = rng.uniform(spec.cell_h_min, spec.cell_h_max, num_cells)
    num_fixed = int(round(spec.fixed_fraction * num_cells))
    fixed_ids = set(rng.choice(num_cells, size=num_fixed, replace=False).tolist())
    xs = spec.region.x0 + rng.uniform(0.0, 1.0, num_cells) * (
        spec.region.width - widths
    )
    ys = spec.region.y0 + rng.uniform(0.0, 1.0, num_cells) * (
        spec.region.height - heights
    )

    degrees = _net_degrees(spec, rng)
    memberships: list[list[int]] = []
    if spec.connected:
        uncovered = list(rng.permutation(num_cells))
        covered: list[int] = []
        for d in degrees:
            members: list[int] = []
            if covered:
                members.append(covered[rng.integers(len(covered))])
            while len(members) < d and uncovered:
                members.append(uncovered.pop())
            if len(members) < d:
                pool = [v for v in covered if v not in members]
                extra = rng.choice(len(pool), size=d - len(members), replace=False)
                members.extend(pool[i] for i in extra)
            covered.extend(m for m in members if m not in covered)
            memberships.append(members)
        if uncovered:
            raise InfeasibleSpecError(
                f"{len(uncovered)} cells left unconnected; add nets or pins"
            )
    else:
        for d in degrees:
            memberships.append(list(rng.choice(num_cells, size=d, replace=False)))

    pin_offsets: list[list[tuple[float, float]]] = [[] for _ in range(num_cells)]
    pins: list[Pin] = []
    nets: list[Net] = []
    for e, members in enumerate(memberships):
        ids = []
        for rank, v in enumerate(members):
            off = (
                float(rng.uniform(0.0, widths[v])),
                float(rng.uniform(0.0, heights[v])),
            )
            direction = DIR_OUTPUT if rank == 0 else DIR_INPUT
            ids.append(len(pins))
            pins.append(Pin(int(v), e, direction, off))
            pin_offsets[v].append(off)
        nets.append(Net(tuple(ids)))

    cells = [
        Cell(
            float(widths[v]),
            float(heights[v]),
            v in fixed_ids,
            tuple(pin_offsets[v]),
            float(xs[v]),
            float(ys[v]),
        )
        for v in range(num_cells)
    ]
    netlist = Netlist(cells, nets, pins, spec.region, spec.grid)
    netlist.validate()
    return netlist
