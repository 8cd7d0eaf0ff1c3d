"""Label spaces, the cross-taxonomy mapping table, and translation of label maps.

A label space is a finite set of semantic classes with integer ids. Id 0 is
reserved in every space as the unknown/unlabeled sentinel of label *maps*; a
space may still declare a class with id 0 (ADE20k's zero-based ids do), in
which case that class can appear as a correspondence target but can never be
distinguished from "unknown" inside a dense label map.

The mapping table is a list of canonical concept rows. Each row carries a
canonical id, a WordNet-style synkey, and per-space ordered id lists. Querying
a (space, class) pair against another space yields one of three cases:
no correspondence, exactly one corresponding class, or several (the target
taxonomy is finer). List order inside a row is meaningful: the first entry is
the fallback used when an ambiguity cannot be resolved otherwise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ClassDef",
    "LabelSpace",
    "LabelMap",
    "MappingCase",
    "NO_CORRESPONDENCE",
    "One",
    "Many",
    "MappingTable",
    "MappingError",
    "TranslationPolicy",
    "AmbiguousTranslationError",
    "load_label_space",
    "load_spaces",
    "load_mapping",
    "translate_map",
    "validate_table",
]

UNKNOWN_ID = 0


class MappingError(ValueError):
    """Raised for malformed mapping/space files or invalid queries."""


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    synonyms: tuple[str, ...] = ()

    def __post_init__(self):
        if self.class_id < 0:
            raise MappingError(f"negative class id {self.class_id}")
        if not self.name:
            raise MappingError("class name must be non-empty")


class LabelSpace:
    """An ordered set of class definitions under a short space id.

    ``resolution_rank`` orders spaces by taxonomy fineness (higher = finer);
    it defaults to the class count, which orders the shipped spaces correctly
    (nyu40 < replica < ade20k < wordnet < scannet).
    """

    def __init__(self, space_id: str, classes: list[ClassDef], resolution_rank: int | None = None):
        if not space_id:
            raise MappingError("space_id must be non-empty")
        ids = [c.class_id for c in classes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise MappingError(f"space '{space_id}': duplicate class ids {dup}")
        names = [c.name for c in classes]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise MappingError(f"space '{space_id}': duplicate class names {dup}")
        self.space_id = space_id
        self.classes = list(classes)
        self.resolution_rank = len(classes) if resolution_rank is None else int(resolution_rank)
        self._by_id = {c.class_id: c for c in classes}
        self._by_name = {c.name: c for c in classes}
        self.max_id = max(ids) if ids else 0

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._by_id

    def __len__(self) -> int:
        return len(self.classes)

    def get(self, class_id: int) -> ClassDef | None:
        return self._by_id.get(class_id)

    def name_of(self, class_id: int) -> str:
        c = self._by_id.get(class_id)
        return c.name if c is not None else f"<{class_id}>"

    def id_of(self, name: str) -> int:
        return self._by_name[name].class_id

    def class_ids(self) -> list[int]:
        return sorted(self._by_id)

    def __repr__(self):
        return f"LabelSpace({self.space_id!r}, {len(self.classes)} classes, rank={self.resolution_rank})"


@dataclass
class LabelMap:
    """Dense H x W grid of class ids in a declared space. 0 = unknown."""

    space_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise MappingError(f"label map must be 2-D, got shape {self.values.shape}")
        if not np.issubdtype(self.values.dtype, np.integer):
            raise MappingError(f"label map must be integer-typed, got {self.values.dtype}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def validate_against(self, space: LabelSpace) -> None:
        """Check every nonzero value is a declared class of ``space``."""
        present = np.unique(self.values)
        bad = [int(v) for v in present if v != UNKNOWN_ID and int(v) not in space]
        if bad:
            raise MappingError(f"label map contains ids {bad} not declared in space '{space.space_id}'")


# --- mapping cases ----------------------------------------------------------

class MappingCase:
    """Result of a correspondence query: NO_CORRESPONDENCE, One, or Many."""

    __slots__ = ()

    @property
    def ids(self) -> tuple[int, ...]:
        return ()


class _NoCorrespondence(MappingCase):
    __slots__ = ()

    def __repr__(self):
        return "NoCorrespondence"

    def __eq__(self, other):
        return isinstance(other, _NoCorrespondence)

    def __hash__(self):
        return hash("NoCorrespondence")


NO_CORRESPONDENCE = _NoCorrespondence()


@dataclass(frozen=True)
class One(MappingCase):
    class_id: int

    @property
    def ids(self) -> tuple[int, ...]:
        return (self.class_id,)


@dataclass(frozen=True)
class Many(MappingCase):
    class_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.class_ids) < 2:
            raise MappingError("Many requires at least two ids")

    @property
    def ids(self) -> tuple[int, ...]:
        return self.class_ids


def _make_case(ids: tuple[int, ...]) -> MappingCase:
    if not ids:
        return NO_CORRESPONDENCE
    if len(ids) == 1:
        return One(ids[0])
    return Many(ids)


# --- mapping table ----------------------------------------------------------

@dataclass(frozen=True)
class MappingRow:
    canonical_id: int
    synkey: str
    cells: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def ids_for(self, space_id: str) -> tuple[int, ...]:
        return self.cells.get(space_id, ())


class TranslationTables:
    """Vectorized lookup tables for one (src, dst) space pair.

    ``layers`` is a list of int32 arrays indexed by source class id; layer k
    holds the k-th correspondence candidate or -1. ``direct`` marks source
    classes whose correspondence is unambiguous (exactly one candidate).
    """

    def __init__(self, layers: list[np.ndarray], direct: np.ndarray, declared: np.ndarray):
        self.layers = layers
        self.direct = direct
        self.declared = declared

    @property
    def fanout(self) -> int:
        return len(self.layers)


class MappingTable:
    """Immutable many-to-many correspondence graph across label spaces."""

    def __init__(self, spaces: dict[str, LabelSpace], rows: list[MappingRow]):
        self.spaces = dict(spaces)
        self.rows = sorted(rows, key=lambda r: r.canonical_id)
        seen = set()
        for row in self.rows:
            if row.canonical_id <= 0:
                raise MappingError(f"canonical_id must be positive, got {row.canonical_id}")
            if row.canonical_id in seen:
                raise MappingError(f"duplicate canonical_id {row.canonical_id}")
            seen.add(row.canonical_id)
            for space_id, ids in row.cells.items():
                space = self.spaces.get(space_id)
                if space is None:
                    raise MappingError(f"row {row.canonical_id}: unknown space '{space_id}'")
                for cid in ids:
                    if cid not in space:
                        raise MappingError(
                            f"row {row.canonical_id}: class {cid} not declared in space '{space_id}'")
        # index: (space_id, class_id) -> rows containing it, in canonical order
        self._membership: dict[tuple[str, int], list[MappingRow]] = {}
        for row in self.rows:
            for space_id, ids in row.cells.items():
                for cid in ids:
                    self._membership.setdefault((space_id, cid), []).append(row)
        self._luts: dict[tuple[str, str], TranslationTables] = {}

    def space(self, space_id: str) -> LabelSpace:
        try:
            return self.spaces[space_id]
        except KeyError:
            raise MappingError(f"unknown space '{space_id}'") from None

    def correspondences(self, src_space: str, src_class: int, dst_space: str) -> MappingCase:
        """Resolve the correspondence case for one source class.

        The union of destination ids over every canonical row containing the
        source class, rows in canonical-id order and ids in the row's list
        order, deduplicated keeping first occurrence.
        """
        self.space(src_space)
        self.space(dst_space)
        if src_class == UNKNOWN_ID:
            raise MappingError("class id 0 is the unknown sentinel and is never translated")
        ids: list[int] = []
        for row in self._membership.get((src_space, src_class), ()):
            for cid in row.ids_for(dst_space):
                if cid not in ids:
                    ids.append(cid)
        return _make_case(tuple(ids))

    def lut(self, src_space: str, dst_space: str) -> TranslationTables:
        """Cached vectorized translation tables for a space pair."""
        key = (src_space, dst_space)
        cached = self._luts.get(key)
        if cached is not None:
            return cached
        src = self.space(src_space)
        self.space(dst_space)
        n = src.max_id + 1
        cases: list[tuple[int, ...]] = [()] * n
        for cid in src.class_ids():
            if cid == UNKNOWN_ID:
                continue
            cases[cid] = self.correspondences(src_space, cid, dst_space).ids
        fanout = max((len(c) for c in cases), default=0)
        layers = [np.full(n, -1, dtype=np.int32) for _ in range(fanout)]
        direct = np.zeros(n, dtype=bool)
        declared = np.zeros(n, dtype=bool)
        declared[[c for c in src.class_ids()]] = True
        declared[UNKNOWN_ID] = True  # sentinel always legal in maps
        for cid, ids in enumerate(cases):
            for k, dst_id in enumerate(ids):
                layers[k][cid] = dst_id
            direct[cid] = len(ids) == 1
        tables = TranslationTables(layers, direct, declared)
        self._luts[key] = tables
        return tables

    def check_map(self, label_map: LabelMap) -> None:
        """Cheap per-call validation: space registered, ids declared."""
        lut = self.lut(label_map.space_id, label_map.space_id)
        values = label_map.values
        if values.size and values.max(initial=0) >= lut.declared.size:
            bad = int(values.max())
            raise MappingError(
                f"label map contains id {bad} not declared in space '{label_map.space_id}'")
        if values.size and not lut.declared[values].all():
            bad = sorted(int(v) for v in np.unique(values[~lut.declared[values]]))
            raise MappingError(
                f"label map contains ids {bad} not declared in space '{label_map.space_id}'")


# --- file loading -----------------------------------------------------------

def load_label_space(path: str | Path, space_id: str | None = None,
                     resolution_rank: int | None = None) -> LabelSpace:
    """Load a space definition file: ``class_id<TAB>name<TAB>syn|syn|...``.

    The third column is optional. ``#`` lines and blank lines are ignored.
    The space id defaults to the file stem.
    """
    path = Path(path)
    if space_id is None:
        space_id = path.stem
    classes: list[ClassDef] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise MappingError(f"{path}:{lineno}: expected 'id<TAB>name[<TAB>synonyms]'")
        try:
            cid = int(parts[0])
        except ValueError:
            raise MappingError(f"{path}:{lineno}: bad class id {parts[0]!r}") from None
        synonyms = tuple(s for s in parts[2].split("|") if s) if len(parts) > 2 else ()
        classes.append(ClassDef(cid, parts[1], synonyms))
    return LabelSpace(space_id, classes, resolution_rank)


def load_spaces(directory: str | Path) -> dict[str, LabelSpace]:
    """Load every ``*.tsv`` space definition in a directory."""
    directory = Path(directory)
    spaces = {}
    for path in sorted(directory.glob("*.tsv")):
        space = load_label_space(path)
        spaces[space.space_id] = space
    if not spaces:
        raise MappingError(f"no *.tsv space definitions found in {directory}")
    return spaces


def load_mapping(path: str | Path, spaces: dict[str, LabelSpace]) -> MappingTable:
    """Load the mapping CSV: header ``canonical_id,synkey,<space_id>,...``.

    Space cells are empty or comma-separated id lists (quoted when multiple).
    ``#`` lines are ignored. Every referenced (space, id) must be declared;
    duplicate canonical ids, duplicate ids within one cell, and canonical id 0
    are errors.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header: list[str] | None = None
    rows: list[MappingRow] = []
    seen_ids: set[int] = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        try:
            parsed = next(csv.reader(io.StringIO(raw)))
        except (csv.Error, StopIteration) as exc:
            raise MappingError(f"{path}:{lineno}: CSV parse error: {exc}") from None
        parsed = [cell.strip() for cell in parsed]
        if header is None:
            header = parsed
            if len(header) < 2 or header[0] != "canonical_id" or header[1] != "synkey":
                raise MappingError(f"{path}:{lineno}: header must start 'canonical_id,synkey,...'")
            for space_id in header[2:]:
                if space_id not in spaces:
                    raise MappingError(f"{path}:{lineno}: unknown space column '{space_id}'")
            continue
        if len(parsed) != len(header):
            raise MappingError(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(parsed)}")
        try:
            canonical_id = int(parsed[0])
        except ValueError:
            raise MappingError(f"{path}:{lineno}: bad canonical_id {parsed[0]!r}") from None
        if canonical_id == 0:
            raise MappingError(f"{path}:{lineno}: canonical_id 0 is reserved for unknown")
        if canonical_id < 0:
            raise MappingError(f"{path}:{lineno}: canonical_id must be positive")
        if canonical_id in seen_ids:
            raise MappingError(f"{path}:{lineno}: duplicate canonical_id {canonical_id}")
        seen_ids.add(canonical_id)
        cells: dict[str, tuple[int, ...]] = {}
        for space_id, cell in zip(header[2:], parsed[2:]):
            if not cell:
                continue
            try:
                ids = tuple(int(tok) for tok in cell.split(","))
            except ValueError:
                raise MappingError(
                    f"{path}:{lineno}: bad id list {cell!r} in column '{space_id}'") from None
            if len(set(ids)) != len(ids):
                raise MappingError(
                    f"{path}:{lineno}: duplicate ids in column '{space_id}'")
            for cid in ids:
                if cid not in spaces[space_id]:
                    raise MappingError(
                        f"{path}:{lineno}: class {cid} not declared in space '{space_id}'")
            cells[space_id] = ids
        rows.append(MappingRow(canonical_id, parsed[1], cells))
    if header is None:
        raise MappingError(f"{path}: empty file, expected at least a header line")
    return MappingTable(spaces, rows)


# --- translation ------------------------------------------------------------

class TranslationPolicy:
    FIRST_CORRESPONDENCE = "first"
    FAIL_ON_MANY = "fail"


class AmbiguousTranslationError(MappingError):
    """FailOnMany policy hit; carries the first offending pixel."""

    def __init__(self, space_id: str, class_id: int, row: int, col: int, ids: tuple[int, ...]):
        super().__init__(
            f"class {class_id} of space '{space_id}' has {len(ids)} correspondences "
            f"{list(ids)}; first ambiguous pixel at row={row}, col={col}")
        self.class_id = class_id
        self.pixel = (row, col)
        self.candidate_ids = ids


def translate_map(label_map: LabelMap, table: MappingTable, dst_space: str,
                  policy: str = TranslationPolicy.FIRST_CORRESPONDENCE) -> LabelMap:
    """Translate a label map into another space, pixelwise.

    Unknown stays unknown; a missing correspondence becomes unknown; an
    ambiguous correspondence takes the first candidate under the ``first``
    policy and raises under ``fail``.
    """
    if policy not in (TranslationPolicy.FIRST_CORRESPONDENCE, TranslationPolicy.FAIL_ON_MANY):
        raise MappingError(f"unknown policy {policy!r}")
    table.check_map(label_map)
    lut = table.lut(label_map.space_id, dst_space)
    values = label_map.values
    if policy == TranslationPolicy.FAIL_ON_MANY and lut.fanout > 1:
        ambiguous = ~lut.direct[values] & (lut.layers[1][values] >= 0)
        if ambiguous.any():
            r, c = np.argwhere(ambiguous)[0]
            cid = int(values[r, c])
            ids = table.correspondences(label_map.space_id, cid, dst_space).ids
            raise AmbiguousTranslationError(label_map.space_id, cid, int(r), int(c), ids)
    if lut.fanout == 0:
        out = np.zeros_like(values, dtype=np.int32)
    else:
        out = lut.layers[0][values]
        out = np.where(out < 0, UNKNOWN_ID, out)
    out = np.where(values == UNKNOWN_ID, UNKNOWN_ID, out)
    return LabelMap(dst_space, out.astype(values.dtype, copy=False))


# --- validation report ------------------------------------------------------

@dataclass
class ValidationReport:
    """Deterministic, ordered audit of a mapping table.

    ``coverage_gaps``: declared classes appearing in zero rows.
    ``multi_row``: classes appearing in more than one row (legal).
    ``missing_cells``: per space, rows whose cell is empty.
    ``rows_without_synkey``: rows lacking a synkey or canonical-space entry.
    ``sentinel_collisions``: spaces declaring a class with id 0.
    """

    coverage_gaps: list[tuple[str, int, str]] = field(default_factory=list)
    multi_row: list[tuple[str, int, tuple[int, ...]]] = field(default_factory=list)
    missing_cells: list[tuple[str, int]] = field(default_factory=list)
    rows_without_synkey: list[int] = field(default_factory=list)
    sentinel_collisions: list[tuple[str, str]] = field(default_factory=list)

    @property
    def warning_count(self) -> int:
        return len(self.coverage_gaps) + len(self.rows_without_synkey) + len(self.sentinel_collisions)

    def lines(self) -> list[str]:
        out = []
        for space_id, cid, name in self.coverage_gaps:
            out.append(f"warning: coverage gap: {space_id} class {cid} ({name}) appears in no row")
        for row_id in self.rows_without_synkey:
            out.append(f"warning: row {row_id} lacks a canonical synkey entry")
        for space_id, name in self.sentinel_collisions:
            out.append(f"warning: space {space_id} declares class id 0 ({name}); "
                       "id 0 in label maps always reads as unknown")
        for space_id, cid, row_ids in self.multi_row:
            out.append(f"info: {space_id} class {cid} appears in rows {list(row_ids)}")
        for space_id, row_id in self.missing_cells:
            out.append(f"info: row {row_id} has no {space_id} entry")
        return out


def validate_table(table: MappingTable, canonical_space: str | None = None) -> ValidationReport:
    """Audit coverage and multi-row membership. Never raises."""
    report = ValidationReport()
    membership: dict[tuple[str, int], list[int]] = {}
    for row in table.rows:
        for space_id, ids in row.cells.items():
            for cid in ids:
                membership.setdefault((space_id, cid), []).append(row.canonical_id)
    for space_id in sorted(table.spaces):
        space = table.spaces[space_id]
        for cid in space.class_ids():
            if cid == UNKNOWN_ID:
                report.sentinel_collisions.append((space_id, space.name_of(cid)))
            rows = membership.get((space_id, cid), [])
            if not rows and cid != UNKNOWN_ID:
                report.coverage_gaps.append((space_id, cid, space.name_of(cid)))
            elif len(rows) > 1:
                report.multi_row.append((space_id, cid, tuple(rows)))
    for space_id in sorted(table.spaces):
        for row in table.rows:
            if not row.ids_for(space_id):
                report.missing_cells.append((space_id, row.canonical_id))
    if canonical_space is None and "wordnet" in table.spaces:
        canonical_space = "wordnet"
    for row in table.rows:
        lacks_key = not row.synkey
        if canonical_space is not None and not row.ids_for(canonical_space):
            lacks_key = True
        if lacks_key:
            report.rows_without_synkey.append(row.canonical_id)
    return report
