"""ICD-9 style code hierarchy with sibling and mutual-exclusion relations."""
from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path

ROOT = "ROOT"

_CODE_RE = re.compile(r"^(?P<prefix>[EV]?)(?P<cat>\d{2,3})(?:\.(?P<sub>\d{1,2}))?$")
_RANGE_RE = re.compile(r"^(?P<lo>[EV]?\d{2,3})-(?P<hi>[EV]?\d{2,3})$")


class CodeParseError(ValueError):
    def __init__(self, code, position, reason):
        super().__init__(f"cannot parse code {code!r} at position {position}: {reason}")
        self.code = code
        self.position = position


class GraphBuildError(ValueError):
    pass


class UnknownCodeError(KeyError):
    pass


@dataclass(frozen=True)
class ParsedCode:
    kind: str  # "root" | "range" | "category" | "subcode"
    prefix: str = ""
    category: int | None = None
    subdivisions: str = ""
    range: tuple[int, int] | None = None

    @property
    def parent_code(self):
        """Direct structural parent for subcodes, None otherwise."""
        if self.kind != "subcode":
            return None
        head = f"{self.prefix}{self.category:0{self.width}d}"
        if len(self.subdivisions) == 2:
            return f"{head}.{self.subdivisions[0]}"
        return head

    @property
    def width(self):
        return 3 if self.prefix in ("", "E") else 2


def parse_code(code: str) -> ParsedCode:
    """Structural decomposition of an ICD-9 style code, range or ROOT.

    >>> parse_code("783.1")
    ParsedCode(kind='subcode', prefix='', category=783, subdivisions='1', range=None)
    """
    if code == ROOT:
        return ParsedCode("root")
    if not code:
        raise CodeParseError(code, 0, "empty code")
    m = _RANGE_RE.match(code)
    if m:
        lo, hi = parse_code(m["lo"]), parse_code(m["hi"])
        if lo.prefix != hi.prefix:
            raise CodeParseError(code, code.index("-") + 1, "range endpoints use different prefixes")
        if lo.category > hi.category:
            raise CodeParseError(code, code.index("-") + 1, "range end precedes start")
        return ParsedCode("range", prefix=lo.prefix, range=(lo.category, hi.category))
    m = _CODE_RE.match(code)
    if m:
        prefix, cat, sub = m["prefix"], m["cat"], m["sub"] or ""
        want = 2 if prefix == "V" else 3
        if len(cat) != want:
            raise CodeParseError(code, len(prefix), f"category needs {want} digits")
        return ParsedCode("subcode" if sub else "category", prefix=prefix, category=int(cat),
                          subdivisions=sub)
    for pos, ch in enumerate(code):
        if not (ch.isdigit() or ch in ".-" or (pos == 0 and ch in "EV")):
            raise CodeParseError(code, pos, f"unexpected character {ch!r}")
    pos = 0
    if code[0] in "EV":
        pos = 1
    digits = 0
    while pos < len(code) and code[pos].isdigit():
        pos += 1
        digits += 1
    if digits < 2 or digits > 3:
        raise CodeParseError(code, pos, "category must have 3 digits (2 after V)")
    if pos < len(code) and code[pos] == ".":
        pos += 1
        sub = 0
        while pos < len(code) and code[pos].isdigit():
            pos += 1
            sub += 1
        if sub == 0 or sub > 2:
            raise CodeParseError(code, pos, "subdivision must be 1-2 digits")
    raise CodeParseError(code, pos, "trailing characters")


@dataclass(frozen=True)
class CodeNode:
    id: int
    code: str
    level: int
    is_leaf: bool


class CodeGraph:
    """Immutable forest of codes under a virtual ROOT.

    Parent-child and exclusion edges are stored; sibling edges are derived
    from shared parents on demand, so storage is O(|V| + |E|).
    """

    def __init__(self, parent_of: dict[str, str], exclusions=()):
        codes = set(parent_of) | {ROOT}
        for child, parent in parent_of.items():
            if parent not in codes:
                raise GraphBuildError(f"parent {parent!r} of {child!r} is not a node")
        if ROOT in parent_of:
            raise GraphBuildError("ROOT cannot have a parent")
        kids: dict[str, list[str]] = {c: [] for c in codes}
        for child, parent in parent_of.items():
            kids[parent].append(child)

        # BFS from ROOT assigns levels and ids; anything unreached sits on a cycle.
        order, level = [ROOT], {ROOT: 0}
        queue = deque([ROOT])
        while queue:
            u = queue.popleft()
            for v in sorted(kids[u]):
                level[v] = level[u] + 1
                order.append(v)
                queue.append(v)
        if len(order) != len(codes):
            stuck = sorted(codes - set(order))
            raise GraphBuildError(f"parent-child edges contain a cycle through {stuck[:5]}")

        self.nodes = [CodeNode(i, c, level[c], not kids[c] and c != ROOT) for i, c in enumerate(order)]
        self._index = {n.code: n.id for n in self.nodes}
        self.parent = [-1] * len(order)
        for child, parent in parent_of.items():
            self.parent[self._index[child]] = self._index[parent]
        self.children = [sorted(self._index[k] for k in kids[c]) for c in order]
        self.exclusion: list[set[int]] = [set() for _ in order]
        for a, b in exclusions:
            ia, ib = self.id_of(a), self.id_of(b)
            if ia == ib:
                raise GraphBuildError(f"exclusion pair ({a}, {b}) is reflexive")
            self.exclusion[ia].add(ib)
            self.exclusion[ib].add(ia)
        self._check_forest()

    # ---------------------------------------------------------------- queries

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self):
        return 0

    def id_of(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise UnknownCodeError(code) from None

    def code_of(self, node: int) -> str:
        return self.nodes[node].code

    def is_leaf(self, node: int) -> bool:
        return self.nodes[node].is_leaf

    def level(self, node: int) -> int:
        return self.nodes[node].level

    @property
    def depth(self):
        return max(n.level for n in self.nodes)

    @property
    def max_branching(self):
        return max(len(c) for c in self.children)

    def siblings(self, node: int) -> list[int]:
        p = self.parent[node]
        if p < 0:
            return []
        return [s for s in self.children[p] if s != node]

    def ancestors(self, node: int) -> list[int]:
        """Path from ROOT down to ``node`` inclusive."""
        path = []
        while node >= 0:
            path.append(node)
            node = self.parent[node]
        return path[::-1]

    def excluded(self, a: int, b: int) -> bool:
        return b in self.exclusion[a]

    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_leaf]

    def parent_child_edges(self):
        return [(self.parent[v], v) for v in range(1, len(self.nodes))]

    def exclusion_edges(self):
        return sorted((a, b) for a in range(len(self.nodes)) for b in self.exclusion[a] if a < b)

    def sibling_edges(self):
        return [(a, b) for kids in self.children for i, a in enumerate(kids) for b in kids[i + 1:]]

    @property
    def n_edges(self):
        """Stored edges: parent-child plus exclusion (siblings are derived)."""
        return len(self.nodes) - 1 + len(self.exclusion_edges())

    def _check_forest(self):
        # DFS from ROOT must reach every node exactly once.
        seen = set()
        stack = [0]
        while stack:
            u = stack.pop()
            if u in seen:
                raise GraphBuildError(f"node {self.code_of(u)} reached twice")
            seen.add(u)
            stack.extend(self.children[u])
        if len(seen) != len(self.nodes):
            raise GraphBuildError("graph is not a single tree under ROOT")

    # ---------------------------------------------------------------- io

    def to_tsv(self) -> str:
        lines = ["# labgraph code graph: pc <parent> <child> | ex <a> <b>"]
        for p, c in self.parent_child_edges():
            lines.append(f"pc\t{self.code_of(p)}\t{self.code_of(c)}")
        for a, b in self.exclusion_edges():
            lines.append(f"ex\t{self.code_of(a)}\t{self.code_of(b)}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def from_tsv(cls, text: str) -> "CodeGraph":
        parent_of, exclusions = {}, []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("pc", "ex"):
                raise GraphBuildError(f"line {lineno}: expected '<pc|ex> <code_a> <code_b>'")
            kind, a, b = parts
            if kind == "pc":
                if b in parent_of and parent_of[b] != a:
                    raise GraphBuildError(f"line {lineno}: {b} has two parents")
                parent_of[b] = a
            else:
                exclusions.append((a, b))
        return cls(parent_of, exclusions)

    @classmethod
    def load(cls, path) -> "CodeGraph":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


def _enclosing_range(parsed: ParsedCode, ranges, exclude=None):
    """Smallest declared range strictly containing ``parsed``."""
    if parsed.kind == "range":
        lo, hi = parsed.range
    else:
        lo = hi = parsed.category
    best = None
    for code, r in ranges:
        if code == exclude or r.prefix != parsed.prefix:
            continue
        rlo, rhi = r.range
        if rlo <= lo and hi <= rhi and (rlo, rhi) != (lo, hi):
            if best is None or (rhi - rlo) < (best[1].range[1] - best[1].range[0]):
                best = (code, r)
    return best[0] if best else ROOT


def build_graph(codes, declared_ranges=(), exclusions=()) -> CodeGraph:
    """Build the hierarchy for ``codes`` using declared chapter/block ranges.

    Missing structural parents of subcodes (e.g. "410" for "410.1") are
    inserted. Ranges that partially overlap cannot be nested and are rejected.
    """
    codes = list(codes)
    if not codes:
        raise GraphBuildError("no codes given")
    dupes = [c for c, n in Counter(codes).items() if n > 1]
    if dupes:
        raise GraphBuildError(f"duplicate codes: {sorted(dupes)}")
    ranges = []
    for r in declared_ranges:
        p = parse_code(r)
        if p.kind != "range":
            raise GraphBuildError(f"declared range {r!r} is not a range")
        ranges.append((r, p))
    seen_spans = Counter((p.prefix, p.range) for _, p in ranges)
    conflicts = [f"{a}~{b}" for (a, pa) in ranges for (b, pb) in ranges if a < b and pa.prefix == pb.prefix
                 and _partial_overlap(pa.range, pb.range)]
    conflicts += [f"{a} duplicated" for a, p in ranges if seen_spans[(p.prefix, p.range)] > 1]
    if conflicts:
        raise GraphBuildError(f"range overlap ambiguity: {sorted(set(conflicts))}")

    parent_of: dict[str, str] = {}
    pending = [c for c in codes if c != ROOT]
    range_codes = {r for r, _ in ranges}
    known = set(pending) | range_codes
    while pending:
        code = pending.pop()
        if code in parent_of:
            continue
        p = parse_code(code)
        if p.kind == "subcode":
            parent = p.parent_code
            if parent not in known:
                known.add(parent)
                pending.append(parent)
        elif p.kind in ("category", "range"):
            parent = _enclosing_range(p, ranges, exclude=code)
        else:
            raise GraphBuildError(f"unexpected code {code!r}")
        parent_of[code] = parent
        if parent != ROOT and parent not in parent_of:
            pending.append(parent)
    return CodeGraph(parent_of, exclusions)


def _partial_overlap(a, b):
    (alo, ahi), (blo, bhi) = a, b
    overlap = alo <= bhi and blo <= ahi
    nested = (alo <= blo and bhi <= ahi) or (blo <= alo and ahi <= bhi)
    return overlap and not nested


def neighbors(g: CodeGraph, node: int, forbidden=(), context=(), siblings=True) -> list[int]:
    """Candidate moves from ``node``: children plus siblings, ascending id.

    Nodes in ``forbidden`` are removed, as is any candidate sharing an
    exclusion edge with a node in ``forbidden`` or ``context``. ``context``
    nodes themselves stay selectable.
    """
    if not 0 <= node < len(g):
        raise UnknownCodeError(node)
    forbidden = set(forbidden)
    blockers = forbidden | set(context)
    out = []
    pool = g.children[node] + g.siblings(node) if siblings else g.children[node]
    for c in sorted(pool):
        if c in forbidden or g.exclusion[c] & blockers:
            continue
        out.append(c)
    return out


def level_stats(g: CodeGraph, labels) -> dict[int, float]:
    """Fraction of label occurrences at each hierarchy level."""
    counts = Counter()
    total = 0
    for code in labels:
        node = g.id_of(code) if isinstance(code, str) else code
        if not 0 <= node < len(g):
            raise UnknownCodeError(code)
        counts[g.level(node)] += 1
        total += 1
    if total == 0:
        raise ValueError("level_stats needs at least one label")
    return {lvl: n / total for lvl, n in sorted(counts.items())}


def uniform_tree(branching, prefix_width=3) -> CodeGraph:
    """Balanced hierarchy with ICD-9 shaped code strings.

    ``branching`` lists the fan-out per level below ROOT. Upper levels become
    ranges, the level where the cumulative count first needs individual
    numbers becomes 3-digit categories, and at most two further levels are
    decimal subdivisions.
    """
    branching = list(branching)
    if any(b < 1 for b in branching):
        raise ValueError("branching factors must be positive")
    counts = [1]
    for b in branching:
        counts.append(counts[-1] * b)
    cat_level = len(branching)
    while cat_level > 1 and counts[cat_level] > 1000:
        cat_level -= 1
    if counts[cat_level] > 1000:
        raise ValueError("too many categories for 3-digit codes")
    sub_levels = branching[cat_level:]
    if len(sub_levels) > 2 or any(b > 10 for b in sub_levels):
        raise ValueError("at most two subdivision levels of fan-out <= 10")
    if any(b == 1 for b in branching[:cat_level - 1]):
        raise ValueError("fan-out 1 above the category level repeats its parent's range")
    n_cat = counts[cat_level]
    spacing = 1000 // n_cat

    # category numbers per leaf of the range/category tree, in order
    parent_of = {}
    level_codes = [[ROOT]]
    for lvl in range(1, cat_level + 1):
        codes = []
        per_parent = branching[lvl - 1]
        block = counts[cat_level] // counts[lvl]
        for pi, parent in enumerate(level_codes[-1]):
            for j in range(per_parent):
                first = (pi * per_parent + j) * block
                lo, hi = first * spacing, (first + block - 1) * spacing + spacing - 1
                if lvl == cat_level:
                    code = f"{first * spacing:03d}"
                else:
                    code = f"{lo:03d}-{hi:03d}"
                parent_of[code] = parent
                codes.append(code)
        level_codes.append(codes)
    for depth, b in enumerate(sub_levels):
        codes = []
        for parent in level_codes[-1]:
            for j in range(b):
                code = f"{parent}.{j}" if depth == 0 else f"{parent}{j}"
                parent_of[code] = parent
                codes.append(code)
        level_codes.append(codes)
    return CodeGraph(parent_of)
