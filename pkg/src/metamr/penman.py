"""PENMAN notation for AMR graphs: parsing, serialization, validation.

A graph is a rooted, labeled multigraph. Variables name the nodes, each node
carries a concept label, edges connect variables, and attributes attach
constants (quoted strings, numbers, ``-``/``+``) to variables.

    >>> g = parse_penman('(e / eat-01 :ARG0 (d / dog) :ARG1 (b / bone))')
    >>> g.root
    'e'
    >>> g.nodes['d']
    'dog'
    >>> serialize_penman(g)
    '(e / eat-01 :ARG0 (d / dog) :ARG1 (b / bone))'

Inverse roles written ``:R-of`` are normalized on parse: ``:ARG0-of`` between
a node ``a`` and a child ``b`` is stored as the edge ``(b, :ARG0, a)``. The
serializer re-inverts when it has to reach a node against edge direction, so
parse/serialize round-trips preserve the triple set exactly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field


class PenmanError(Exception):
    """Malformed PENMAN input. ``offset`` is a byte offset into the text."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__("%s (byte %d)" % (message, offset))
        self.offset = offset


class UnbalancedParens(PenmanError):
    pass


class DuplicateVariable(PenmanError):
    pass


class DanglingReference(PenmanError):
    pass


class EmptyConcept(PenmanError):
    pass


class InvariantViolation(Exception):
    """Raised when asked to serialize a graph that fails validate()."""


# Tokens: parens, slash, quoted string, or a run of non-delimiter characters.
_TOKEN_RE = re.compile(r'\(|\)|/|"[^"]*"|[^\s()/]+')

_NUMBER_RE = re.compile(r'^[+-]?\d+(\.\d+)?([eE][+-]?\d+)?$')


def is_constant_token(tok: str) -> bool:
    """True for tokens that can only be attribute constants.

    Quoted strings, numbers, and the bare polarity markers ``-`` and ``+``
    never name variables.
    """
    if tok.startswith('"'):
        return True
    if tok in ("-", "+"):
        return True
    return bool(_NUMBER_RE.match(tok))


@dataclass(frozen=True, eq=False)
class AmrGraph:
    """An AMR graph.

    Fields:
        root: variable of the top node.
        nodes: variable -> concept label.
        edges: (source-variable, role, target-variable) triples.
        attributes: (variable, role, constant) triples.

    Equality compares the root, the node map, and the edge/attribute
    multisets; the order triples were listed in does not matter.
    """

    root: str
    nodes: dict[str, str]
    edges: tuple[tuple[str, str, str], ...] = ()
    attributes: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        object.__setattr__(self, "attributes",
                           tuple(tuple(a) for a in self.attributes))

    def __eq__(self, other):
        if not isinstance(other, AmrGraph):
            return NotImplemented
        return (self.root == other.root
                and self.nodes == other.nodes
                and sorted(self.edges) == sorted(other.edges)
                and sorted(self.attributes) == sorted(other.attributes))

    def __repr__(self):
        return "AmrGraph(root=%r, %d nodes, %d edges, %d attributes)" % (
            self.root, len(self.nodes), len(self.edges), len(self.attributes))


def _invert_role(role: str) -> tuple[str, bool]:
    """Strip a ``-of`` suffix. Returns (base role, was_inverted)."""
    if role.endswith("-of") and len(role) > len(":-of"):
        return role[:-3], True
    return role, False


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN string into an AmrGraph.

    Any input is accepted; malformed input raises a PenmanError subclass
    carrying the byte offset of the problem. Bare tokens in argument position
    that are quoted, numeric, or ``-``/``+`` become attribute constants; bare
    alphabetic tokens must name a variable declared somewhere in the string
    (forward references are fine) or the parse fails with DanglingReference.
    """
    tokens = [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]
    pos = 0

    nodes: dict[str, str] = {}
    edges: list[tuple[str, str, str]] = []
    attributes: list[tuple[str, str, str]] = []
    # Bare argument tokens, resolved after the whole string is read so that
    # forward re-entrancies work: (holder-var, role, token, offset).
    deferred: list[tuple[str, str, str, int]] = []

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(text))

    def parse_node() -> str:
        nonlocal pos
        tok, off = peek()
        if tok != "(":
            raise PenmanError("expected '('", off)
        pos += 1
        tok, off = peek()
        if tok is None or tok in ("(", ")", "/") or tok.startswith(":"):
            raise PenmanError("expected a variable after '('", off)
        if is_constant_token(tok):
            raise PenmanError("constant %r cannot name a node" % tok, off)
        var = tok
        if var in nodes:
            raise DuplicateVariable("variable %r declared twice" % var, off)
        pos += 1
        tok, off = peek()
        if tok != "/":
            raise EmptyConcept("missing '/ concept' for %r" % var, off)
        pos += 1
        tok, off = peek()
        if tok is None or tok in ("(", ")", "/") or tok.startswith(":"):
            raise EmptyConcept("missing concept for %r" % var, off)
        nodes[var] = tok
        pos += 1
        while True:
            tok, off = peek()
            if tok == ")":
                pos += 1
                return var
            if tok is None:
                raise UnbalancedParens("unclosed '('", off)
            if not tok.startswith(":") or len(tok) < 2:
                raise PenmanError("expected a role, got %r" % tok, off)
            role = tok
            pos += 1
            tok, off = peek()
            if tok == "(":
                child = parse_node()
                base, inv = _invert_role(role)
                edges.append((child, base, var) if inv else (var, base, child))
            elif tok is None or tok == ")" or tok == "/" or tok.startswith(":"):
                raise PenmanError("missing value after %s" % role, off)
            else:
                deferred.append((var, role, tok, off))
                pos += 1

    root = parse_node()
    tok, off = peek()
    if tok == ")":
        raise UnbalancedParens("extra ')'", off)
    if tok is not None:
        raise PenmanError("trailing content %r" % tok, off)

    for var, role, tok, off in deferred:
        if tok in nodes:
            base, inv = _invert_role(role)
            edges.append((tok, base, var) if inv else (var, base, tok))
        elif is_constant_token(tok):
            attributes.append((var, role, tok))
        else:
            raise DanglingReference(
                "%r is neither a declared variable nor a constant" % tok, off)

    return AmrGraph(root=root, nodes=nodes, edges=edges,
                    attributes=attributes)


def validate(g: AmrGraph) -> list[str]:
    """Check structural invariants. Returns a list of violation strings.

    An empty list means the graph is valid: the root is a declared node,
    every edge endpoint and attribute holder is declared, concepts are
    non-empty, roles start with ':', and every node is reachable from the
    root when edge direction is ignored.
    """
    problems = []
    if g.root not in g.nodes:
        problems.append("DanglingReference: root %r is not a node" % g.root)
    for var, concept in g.nodes.items():
        if not var:
            problems.append("EmptyConcept: empty variable name")
        if not concept:
            problems.append("EmptyConcept: node %r has an empty concept" % var)
    for s, r, t in g.edges:
        for end in (s, t):
            if end not in g.nodes:
                problems.append(
                    "DanglingReference: edge %s endpoint %r is not declared"
                    % (r, end))
        if not r.startswith(":") or len(r) < 2:
            problems.append("InvalidRole: edge role %r" % r)
    for v, r, c in g.attributes:
        if v not in g.nodes:
            problems.append(
                "DanglingReference: attribute holder %r is not declared" % v)
        if not r.startswith(":") or len(r) < 2:
            problems.append("InvalidRole: attribute role %r" % r)
        if c == "":
            problems.append("EmptyConcept: empty constant under %s" % r)

    if g.root in g.nodes:
        seen = {g.root}
        frontier = [g.root]
        neighbors: dict[str, list[str]] = {v: [] for v in g.nodes}
        for s, _, t in g.edges:
            if s in neighbors and t in neighbors:
                neighbors[s].append(t)
                neighbors[t].append(s)
        while frontier:
            v = frontier.pop()
            for w in neighbors[v]:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        for v in g.nodes:
            if v not in seen:
                problems.append(
                    "Disconnected: node %r is unreachable from the root" % v)
    return problems


def _ordered_children(g: AmrGraph):
    """Child lists used by the serializer and the linearizer.

    For every node: attributes plus one entry per incident edge (forward
    entries keep the role, reverse entries get ``-of`` appended), sorted by
    (display role, other endpoint / constant). Each edge is identified by its
    index so the two incident entries can be deduplicated during traversal.

    Returns {var: [(display_role, kind, payload, edge_index)]} with kind in
    {"attr", "edge"}; payload is the constant or the other endpoint.
    """
    children: dict[str, list] = {v: [] for v in g.nodes}
    for idx, (s, r, t) in enumerate(g.edges):
        if s in children:
            children[s].append((r, "edge", t, idx))
        if t in children:
            children[t].append((r + "-of", "edge", s, idx))
    for v, r, c in g.attributes:
        if v in children:
            children[v].append((r, "attr", c, -1))
    for v in children:
        children[v].sort(key=lambda item: (item[0], item[2], item[1]))
    return children


def serialize_penman(g: AmrGraph) -> str:
    """Serialize a valid AmrGraph to a single-line PENMAN string.

    Deterministic: children are ordered by role then target, each node is
    declared at its first visit and referenced bare afterwards, and edges
    that point against traversal direction are written with ``-of`` roles.
    Raises InvariantViolation if validate() reports problems.
    """
    problems = validate(g)
    if problems:
        raise InvariantViolation("; ".join(problems))

    children = _ordered_children(g)
    declared: set[str] = set()
    used_edges: set[int] = set()

    def emit(var: str) -> str:
        declared.add(var)
        parts = ["(%s / %s" % (var, g.nodes[var])]
        for role, kind, payload, idx in children[var]:
            if kind == "attr":
                parts.append("%s %s" % (role, payload))
                continue
            if idx in used_edges:
                continue
            used_edges.add(idx)
            if payload in declared:
                parts.append("%s %s" % (role, payload))
            else:
                parts.append("%s %s" % (role, emit(payload)))
        return " ".join(parts) + ")"

    return emit(g.root)
