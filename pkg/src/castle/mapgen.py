"""Custom game map generation and the .castlemap text format.

A map is an object grid densely packed with immobile units or buildings
plus a rectangular rally-point region kept free of objects.  The region
is appended past the object grid at the highest-coordinate corner, so
object placement and region size never compete for the same cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

OBJECT_KINDS = ("unit", "building")


class MapError(Exception):
    """Base class for map construction and serialization failures."""


class CapacityError(MapError):
    """Requested object count does not fit the grid."""


class MapFormatError(MapError):
    """Malformed .castlemap content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class MapObject:
    id: int
    x: int
    y: int
    kind: str


@dataclass(frozen=True)
class RallyRegion:
    """Unoccupied rectangle addressed by region-relative coordinates."""

    origin_x: int
    origin_y: int
    x_max: int
    y_max: int

    @property
    def area(self) -> int:
        return self.x_max * self.y_max

    def contains(self, x: int, y: int) -> bool:
        return (self.origin_x <= x < self.origin_x + self.x_max
                and self.origin_y <= y < self.origin_y + self.y_max)

    def to_map(self, xy: tuple[int, int]) -> tuple[int, int]:
        """Region-relative cell -> absolute map cell."""
        return self.origin_x + xy[0], self.origin_y + xy[1]

    def from_map(self, xy: tuple[int, int]) -> tuple[int, int]:
        """Absolute map cell -> region-relative cell."""
        return xy[0] - self.origin_x, xy[1] - self.origin_y


@dataclass(frozen=True)
class MapSpec:
    width: int
    height: int
    objects: tuple[MapObject, ...]
    rally_region: RallyRegion

    def __post_init__(self) -> None:
        if not self.objects:
            raise MapError("map needs at least one object")
        ids = sorted(o.id for o in self.objects)
        if ids != list(range(len(self.objects))):
            raise MapError("object ids must be exactly 0..n-1")
        coords = set()
        for o in self.objects:
            if o.kind not in OBJECT_KINDS:
                raise MapError(f"unknown object kind {o.kind!r}")
            if not (0 <= o.x < self.width and 0 <= o.y < self.height):
                raise MapError(f"object {o.id} at ({o.x},{o.y}) outside map")
            if (o.x, o.y) in coords:
                raise MapError(f"objects overlap at ({o.x},{o.y})")
            coords.add((o.x, o.y))
            if self.rally_region.contains(o.x, o.y):
                raise MapError(f"object {o.id} inside the rally region")
        r = self.rally_region
        if r.x_max < 1 or r.y_max < 1:
            raise MapError("rally region must be non-empty")
        if (r.origin_x < 0 or r.origin_y < 0
                or r.origin_x + r.x_max > self.width
                or r.origin_y + r.y_max > self.height):
            raise MapError("rally region outside map bounds")

    @property
    def n(self) -> int:
        return len(self.objects)

    def object_cell(self, object_id: int) -> tuple[int, int]:
        o = self.objects[object_id]
        if o.id != object_id:  # objects are stored sorted by id on parse/generate
            for cand in self.objects:
                if cand.id == object_id:
                    return cand.x, cand.y
            raise MapError(f"no object with id {object_id}")
        return o.x, o.y


def region_dims(region_bits: int) -> tuple[int, int]:
    """Smallest power-of-two rectangle holding ``region_bits`` of location data."""
    if region_bits < 1:
        raise MapError("region must encode at least one bit")
    return 1 << ((region_bits + 1) // 2), 1 << (region_bits // 2)


def generate_map(
    n: int,
    grid: tuple[int, int],
    region_bits: int = 16,
    kind: str = "building",
) -> MapSpec:
    """Deterministically pack n objects into ``grid`` and carve the region.

    Objects fill the grid row-major from the origin; the rally region is
    appended past the grid at the highest-coordinate corner of the map.
    """
    gw, gh = grid
    if kind not in OBJECT_KINDS:
        raise MapError(f"unknown object kind {kind!r}")
    if n < 1:
        raise CapacityError("need at least one object")
    if n > gw * gh:
        raise CapacityError(f"{n} objects do not fit a {gw}x{gh} grid")
    rx, ry = region_dims(region_bits)
    width = max(gw, rx)
    height = gh + ry
    region = RallyRegion(width - rx, height - ry, rx, ry)
    objects = tuple(
        MapObject(i, i % gw, i // gw, kind) for i in range(n)
    )
    return MapSpec(width, height, objects, region)


def serialize_map(spec: MapSpec) -> bytes:
    """Render a MapSpec in the .castlemap line format."""
    lines = [f"castlemap v1 {spec.width} {spec.height}"]
    for o in spec.objects:
        lines.append(f"obj {o.id} {o.x} {o.y} {o.kind}")
    r = spec.rally_region
    lines.append(f"region {r.origin_x} {r.origin_y} {r.x_max} {r.y_max}")
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_map(data: bytes) -> MapSpec:
    """Parse .castlemap bytes, validating all map invariants."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MapFormatError(f"not ascii text: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise MapFormatError("empty map file")

    header = lines[0].split()
    if len(header) != 4 or header[0] != "castlemap" or header[1] != "v1":
        raise MapFormatError("bad header, expected 'castlemap v1 <w> <h>'", 1)
    width, height = _ints(header[2:], 1)

    objects: list[MapObject] = []
    region: RallyRegion | None = None
    seen_ids: set[int] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "obj":
            if len(parts) != 5:
                raise MapFormatError("obj needs '<id> <x> <y> <kind>'", lineno)
            oid, x, y = _ints(parts[1:4], lineno)
            if parts[4] not in OBJECT_KINDS:
                raise MapFormatError(f"unknown kind {parts[4]!r}", lineno)
            if oid in seen_ids:
                raise MapFormatError(f"duplicate object id {oid}", lineno)
            seen_ids.add(oid)
            objects.append(MapObject(oid, x, y, parts[4]))
        elif parts[0] == "region":
            if len(parts) != 5:
                raise MapFormatError("region needs '<ox> <oy> <xmax> <ymax>'", lineno)
            if region is not None:
                raise MapFormatError("duplicate region line", lineno)
            ox, oy, xm, ym = _ints(parts[1:], lineno)
            region = RallyRegion(ox, oy, xm, ym)
        else:
            raise MapFormatError(f"unknown directive {parts[0]!r}", lineno)

    if region is None:
        raise MapFormatError("missing region line")
    if not objects:
        raise MapFormatError("map has no objects")
    objects.sort(key=lambda o: o.id)
    try:
        return MapSpec(width, height, tuple(objects), region)
    except MapError as exc:
        raise MapFormatError(str(exc)) from None


def _ints(tokens: Iterable[str], lineno: int) -> list[int]:
    out = []
    for tok in tokens:
        try:
            out.append(int(tok))
        except ValueError:
            raise MapFormatError(f"expected integer, got {tok!r}", lineno) from None
    return out


def load_map(path) -> MapSpec:
    with open(path, "rb") as fh:
        return parse_map(fh.read())


def save_map(spec: MapSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_map(spec))
