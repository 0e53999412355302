"""Domain types and portfolio/hierarchy ingestion.

A portfolio holds company-year observations (claim amount, claim count,
salary mass) classified by a multi-level hierarchy of categories, e.g. an
industry classification. Category codes are kept as strings because leading
zeros are significant, but every code must parse as an integer so that
categories can be ordered and "consecutive" codes are well defined.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import (
    DataError,
    MalformedRow,
    NegativeAmount,
    NonPositiveMass,
    UnknownCategory,
)


@dataclass(frozen=True)
class CategoryNode:
    """One category in the hierarchy tree."""

    code: str
    label: str
    children: tuple["CategoryNode", ...] = ()

    def __post_init__(self):
        if not self.label:
            raise DataError(f"category {self.code!r} has an empty label")
        code_order(self.code)  # raises if not integer-like
        seen = set()
        for child in self.children:
            if child.code in seen:
                raise DataError(f"duplicate child code {child.code!r} under {self.code!r}")
            seen.add(child.code)


def code_order(code: str) -> int:
    """Numeric sort key of a category code (leading zeros preserved in the string)."""
    try:
        return int(code)
    except ValueError:
        raise DataError(f"category code {code!r} does not parse as an integer") from None


@dataclass(frozen=True)
class HierarchySpec:
    """The L-level tree of categories with ordered codes and textual labels."""

    level_names: tuple[str, ...]
    roots: tuple[CategoryNode, ...]

    def __post_init__(self):
        if not self.level_names:
            raise DataError("hierarchy needs at least one level")
        if not self.roots:
            raise DataError("hierarchy has no categories")
        for level in range(self.level_count):
            nodes = self.nodes_at_level(level)
            orders = [code_order(n.code) for n in nodes]
            if len(set(n.code for n in nodes)) != len(nodes) or len(set(orders)) != len(nodes):
                raise DataError(f"codes at level {level + 1} are not uniquely ordered")

    @property
    def level_count(self) -> int:
        return len(self.level_names)

    def nodes_at_level(self, level: int) -> list[CategoryNode]:
        """All nodes at 0-based ``level``, sorted by numeric code."""
        nodes = list(self.roots)
        for _ in range(level):
            nodes = [c for n in nodes for c in n.children]
        return sorted(nodes, key=lambda n: code_order(n.code))

    def codes_at_level(self, level: int) -> list[str]:
        return [n.code for n in self.nodes_at_level(level)]

    def resolve(self, codes: Sequence[str]) -> list[CategoryNode]:
        """Resolve a path of codes to its node chain; raises DataError if absent."""
        chain = []
        nodes = self.roots
        for code in codes:
            match = next((n for n in nodes if n.code == code), None)
            if match is None:
                raise DataError(f"no category {code!r} under {'/'.join(c.code for c in chain) or 'root'}")
            chain.append(match)
            nodes = match.children
        return chain

    def contains(self, codes: Sequence[str]) -> bool:
        try:
            self.resolve(codes)
            return True
        except DataError:
            return False

    def parent_code(self, level: int, code: str) -> str:
        """Code of the level-above parent of ``code`` at 0-based ``level`` (level >= 1)."""
        for node in self.nodes_at_level(level - 1):
            if any(c.code == code for c in node.children):
                return node.code
        raise DataError(f"category {code!r} not found at level {level + 1}")

    def label_of(self, level: int, code: str) -> str:
        for node in self.nodes_at_level(level):
            if node.code == code:
                return node.label
        raise DataError(f"category {code!r} not found at level {level + 1}")


@dataclass(frozen=True)
class CategoryPath:
    """Ordered category codes, one per hierarchy level (outermost first)."""

    codes: tuple[str, ...]

    def __post_init__(self):
        if not self.codes:
            raise DataError("empty category path")


@dataclass(frozen=True)
class PolicyRecord:
    """One company-year observation.

    ``claim_amount`` is the capped total claim amount for the year,
    ``claim_count`` the number of claims and ``salary_mass`` the insured
    wage exposure used as weight/offset.
    """

    company_id: str
    year: int
    path: CategoryPath
    claim_amount: float
    claim_count: int
    salary_mass: float

    def __post_init__(self):
        if self.salary_mass <= 0:
            raise DataError(f"salary_mass must be > 0, got {self.salary_mass}")
        if self.claim_amount < 0:
            raise DataError(f"claim_amount must be >= 0, got {self.claim_amount}")
        if self.claim_count < 0:
            raise DataError(f"claim_count must be >= 0, got {self.claim_count}")
        if self.claim_count == 0 and self.claim_amount != 0:
            raise DataError("claim_amount must be 0 when claim_count is 0")


def damage_rate(record: PolicyRecord) -> float:
    """Claim amount per unit of salary mass for one company-year."""
    return record.claim_amount / record.salary_mass


@dataclass(frozen=True)
class Portfolio:
    """Validated records plus the hierarchy they are classified by."""

    records: tuple[PolicyRecord, ...]
    hierarchy: HierarchySpec
    split_year: Optional[int] = None

    def __post_init__(self):
        if self.split_year is not None and not self.train_records():
            raise DataError(f"no records at or before split year {self.split_year}")

    def train_records(self) -> tuple[PolicyRecord, ...]:
        if self.split_year is None:
            return self.records
        return tuple(r for r in self.records if r.year <= self.split_year)

    def test_records(self) -> tuple[PolicyRecord, ...]:
        if self.split_year is None:
            return ()
        return tuple(r for r in self.records if r.year > self.split_year)

    def train(self) -> "Portfolio":
        return Portfolio(self.train_records(), self.hierarchy, split_year=None)


# --- CSV ingestion ------------------------------------------------------------


def _open_rows(source) -> Iterable[list[str]]:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as handle:
            yield from csv.reader(handle)
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        yield from csv.reader(source)
    else:
        yield from source  # already an iterable of rows


def load_hierarchy(source) -> HierarchySpec:
    """Read a hierarchy file: one row per leaf, level codes then level labels.

    The header carries the level names in its first half, e.g.
    ``level1,level2,level1_label,level2_label`` for a two-level hierarchy.
    """
    rows = list(_open_rows(source))
    if not rows:
        raise DataError("hierarchy file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) % 2 != 0 or not header:
        raise DataError("hierarchy header must have one code and one label column per level")
    level_count = len(header) // 2
    level_names = tuple(header[:level_count])

    # nested dict code -> (label, children-dict), built leaf row by leaf row
    tree: dict = {}
    for number, row in enumerate(rows[1:], start=1):
        if len(row) != 2 * level_count:
            raise MalformedRow(number, f"expected {2 * level_count} columns, got {len(row)}")
        codes = [c.strip() for c in row[:level_count]]
        labels = [c.strip() for c in row[level_count:]]
        if any(not c for c in codes):
            raise MalformedRow(number, "empty category code")
        node = tree
        for code, label in zip(codes, labels):
            if code not in node:
                node[code] = (label, {})
            elif node[code][0] != label:
                raise MalformedRow(number, f"conflicting label for category {code!r}")
            node = node[code][1]

    def build(subtree: dict) -> tuple[CategoryNode, ...]:
        nodes = []
        for code, (label, children) in subtree.items():
            nodes.append(CategoryNode(code=code, label=label, children=build(children)))
        return tuple(sorted(nodes, key=lambda n: code_order(n.code)))

    return HierarchySpec(level_names=level_names, roots=build(tree))


def load_portfolio(records_source, hierarchy: HierarchySpec,
                   split_year: Optional[int] = None) -> Portfolio:
    """Read and validate portfolio rows against ``hierarchy``.

    Expects the header ``company_id,year,<level columns...>,claim_amount,
    claim_count,salary_mass`` with one column per hierarchy level. Rows are
    validated one by one; the first offending row raises with its number.
    Records are returned in deterministic (company_id, year) order.
    """
    rows = list(_open_rows(records_source))
    if not rows:
        raise DataError("portfolio file is empty")
    header = [h.strip() for h in rows[0]]
    expected = ["company_id", "year", *hierarchy.level_names,
                "claim_amount", "claim_count", "salary_mass"]
    if header != expected:
        raise DataError(f"portfolio header {header} does not match expected {expected}")

    levels = hierarchy.level_count
    records = []
    for number, row in enumerate(rows[1:], start=1):
        if len(row) != len(expected):
            raise MalformedRow(number, f"expected {len(expected)} columns, got {len(row)}")
        company_id = row[0].strip()
        if not company_id:
            raise MalformedRow(number, "empty company_id")
        try:
            year = int(row[1])
        except ValueError:
            raise MalformedRow(number, f"year {row[1]!r} is not an integer") from None
        codes = tuple(c.strip() for c in row[2:2 + levels])
        if not hierarchy.contains(codes):
            raise UnknownCategory(number, codes)
        try:
            amount = float(row[2 + levels])
            count = int(row[3 + levels])
            mass = float(row[4 + levels])
        except ValueError:
            raise MalformedRow(number, f"non-numeric claim columns {row[2 + levels:]}") from None
        if mass <= 0:
            raise NonPositiveMass(number, mass)
        if amount < 0:
            raise NegativeAmount(number, amount)
        if count < 0:
            raise MalformedRow(number, f"claim_count must be >= 0, got {count}")
        if count == 0 and amount != 0:
            raise MalformedRow(number, f"claim_amount {amount} with zero claim_count")
        records.append(PolicyRecord(company_id=company_id, year=year,
                                    path=CategoryPath(codes),
                                    claim_amount=amount, claim_count=count,
                                    salary_mass=mass))

    if not records:
        raise DataError("portfolio has no data rows")
    records.sort(key=lambda r: (r.company_id, r.year))
    return Portfolio(records=tuple(records), hierarchy=hierarchy, split_year=split_year)


def format_number(value) -> str:
    """Round-trip-stable text form used by every CSV writer in the package."""
    if isinstance(value, float):
        return repr(float(value))  # plain float repr, even for numpy scalars
    return str(value)


def write_portfolio(portfolio: Portfolio, path) -> None:
    """Re-serialize a portfolio in the ingestion format (lossless)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["company_id", "year", *portfolio.hierarchy.level_names,
                         "claim_amount", "claim_count", "salary_mass"])
        for r in portfolio.records:
            writer.writerow([r.company_id, r.year, *r.path.codes,
                             format_number(r.claim_amount), r.claim_count,
                             format_number(r.salary_mass)])


def write_hierarchy(hierarchy: HierarchySpec, path) -> None:
    """Write the one-row-per-leaf hierarchy format."""
    deepest = hierarchy.level_count - 1
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([*hierarchy.level_names,
                         *(f"{name}_label" for name in hierarchy.level_names)])

        def walk(node: CategoryNode, chain):
            chain = chain + [(node.code, node.label)]
            if len(chain) == hierarchy.level_count or not node.children:
                writer.writerow([*(c for c, _ in chain), *(l for _, l in chain)])
                return
            for child in sorted(node.children, key=lambda n: code_order(n.code)):
                walk(child, chain)

        for root in sorted(hierarchy.roots, key=lambda n: code_order(n.code)):
            walk(root, [])
