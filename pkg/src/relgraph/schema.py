"""Table-level schema graph: tables as node types, fk links plus inverses as edge types."""

from __future__ import annotations

from dataclasses import dataclass

from .store import Database


@dataclass(frozen=True)
class EdgeType:
    """One directed relation between two tables, induced by a foreign key.

    A foreign-key column gives a forward type (fkey table -> pkey table) and
    a paired inverse type running the other way. Two fk columns pointing at
    the same target stay distinct types: they carry different semantics.
    """

    src: str
    dst: str
    fk_column: str
    forward: bool

    @property
    def name(self) -> str:
        marker = "" if self.forward else "rev_"
        return f"{self.src}__{marker}{self.fk_column}__{self.dst}"

    def inverse(self) -> "EdgeType":
        return EdgeType(self.dst, self.src, self.fk_column, not self.forward)


class SchemaGraph:
    def __init__(self, node_types: list[str], edge_types: list[EdgeType]):
        self.node_types = node_types
        self.edge_types = edge_types
        self.by_name = {et.name: et for et in edge_types}

    def incoming(self, table: str) -> list[EdgeType]:
        """Edge types whose destination is ``table`` (message sources in Eq. order)."""
        return [et for et in self.edge_types if et.dst == table]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SchemaGraph)
            and self.node_types == other.node_types
            and self.edge_types == other.edge_types
        )


def build_schema_graph(db: Database) -> SchemaGraph:
    """Derive the schema graph; edge types ordered lexicographically by (src, fk, dst),
    each forward type immediately followed by its inverse."""
    links = sorted(db.links, key=lambda l: (l.fkey_table, l.fk_column, l.pkey_table))
    edge_types: list[EdgeType] = []
    for link in links:
        fwd = EdgeType(link.fkey_table, link.pkey_table, link.fk_column, forward=True)
        edge_types.append(fwd)
        edge_types.append(fwd.inverse())
    return SchemaGraph(list(db.tables.keys()), edge_types)


def is_connected(sg: SchemaGraph) -> bool:
    """True iff every table is reachable from every other, links read undirected."""
    if len(sg.node_types) <= 1:
        return True
    adjacency: dict[str, set[str]] = {t: set() for t in sg.node_types}
    for et in sg.edge_types:
        adjacency[et.src].add(et.dst)
        adjacency[et.dst].add(et.src)
    seen = {sg.node_types[0]}
    frontier = [sg.node_types[0]]
    while frontier:
        nxt = frontier.pop()
        for other in adjacency[nxt]:
            if other not in seen:
                seen.add(other)
                frontier.append(other)
    return len(seen) == len(sg.node_types)


def to_dot(sg: SchemaGraph) -> str:
    """Render as DOT; forward links solid, inverse links dashed."""
    lines = ["digraph schema {"]
    for t in sg.node_types:
        lines.append(f'  "{t}";')
    for et in sg.edge_types:
        style = "solid" if et.forward else "dashed"
        lines.append(f'  "{et.src}" -> "{et.dst}" [label="{et.fk_column}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
