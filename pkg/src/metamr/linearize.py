"""Graph <-> token-sequence conversion for sequence models.

``preprocess`` turns an AmrGraph into a flat token sequence a seq2seq model
can emit: variables and ``:wiki`` attributes are dropped, and every
re-entrant reference is replaced by a duplicated single-node copy of the
concept it pointed at. ``restore`` is the inverse direction for *arbitrary*
token sequences: it repairs whatever a model produced into a valid graph and
only gives up when there is no concept token at all.

    >>> g = penman.parse_penman('(e / eat-01 :ARG0 (d / dog))')
    >>> preprocess(g).text
    '( eat-01 :ARG0 ( dog ) )'
    >>> penman.serialize_penman(restore(['(', 'eat-01', ':ARG0', '(', 'dog', ')', ')']))
    '(v0 / eat-01 :ARG0 (v1 / dog))'
"""
from __future__ import annotations

from dataclasses import dataclass

from . import penman
from .penman import AmrGraph, is_constant_token


class Unrestorable(Exception):
    """restore() input contained no token that could head a node."""


@dataclass(frozen=True)
class LinearizedAmr:
    """A linearized graph: parens, roles, concepts and constants."""

    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def remove_wiki(g: AmrGraph) -> AmrGraph:
    """Copy of ``g`` without ``:wiki`` attributes."""
    return AmrGraph(root=g.root, nodes=dict(g.nodes), edges=g.edges,
                    attributes=tuple(a for a in g.attributes
                                     if a[1] != ":wiki"))


def preprocess(g: AmrGraph) -> LinearizedAmr:
    """Linearize a valid graph to tokens.

    Traversal order matches the serializer (children sorted by role then
    target), so output is deterministic. Variables never appear in the
    output; a reference back to an already-visited node is emitted as a
    fresh single-node copy of that node's concept, which makes the token
    sequence tree-shaped by construction.
    """
    problems = penman.validate(g)
    if problems:
        raise penman.InvariantViolation("; ".join(problems))

    children = penman._ordered_children(g)
    visited: set[str] = set()
    used_edges: set[int] = set()
    out: list[str] = []

    def emit(var: str):
        visited.add(var)
        out.append("(")
        out.append(g.nodes[var])
        for role, kind, payload, idx in children[var]:
            if kind == "attr":
                if role == ":wiki":
                    continue
                out.extend([role, payload])
                continue
            if idx in used_edges:
                continue
            used_edges.add(idx)
            out.append(role)
            if payload in visited:
                out.extend(["(", g.nodes[payload], ")"])
            else:
                emit(payload)
        out.append(")")

    emit(g.root)
    return LinearizedAmr(tokens=tuple(out))


def _is_role(tok: str) -> bool:
    return tok.startswith(":") and len(tok) > 1


def _drop_orphan_roles(tokens: list[str]) -> list[str]:
    """Drop role tokens whose operand position cannot hold a value.

    Right-to-left so that cascades (a role followed only by dropped roles)
    resolve in a single pass.
    """
    keep = [True] * len(tokens)
    for i in range(len(tokens) - 1, -1, -1):
        if not _is_role(tokens[i]):
            continue
        j = i + 1
        while j < len(tokens) and not keep[j]:
            j += 1
        nxt = tokens[j] if j < len(tokens) else None
        if nxt is None or nxt == ")" or _is_role(nxt):
            keep[i] = False
    return [t for t, k in zip(tokens, keep) if k]


def _balance_parens(tokens: list[str]) -> list[str]:
    """Drop unmatched closers, append missing closers at the end."""
    out = []
    depth = 0
    for t in tokens:
        if t == ")":
            if depth == 0:
                continue
            depth -= 1
        elif t == "(":
            depth += 1
        out.append(t)
    out.extend(")" * depth)
    return out


# Parsed-item kinds used while rebuilding structure.
_NODE, _CONST, _SPLICE = 0, 1, 2


def _parse_group(tokens: list[str], i: int):
    """Parse one '(...)' group starting at tokens[i] == '('.

    Returns ((kind, payload), next_index). A group whose body contains a
    concept token becomes (_NODE, (head, children)); a headless group
    becomes (_SPLICE, children) and the caller folds its children into its
    own level, dropping whatever role pointed at the dissolved group.
    children entries are (role-or-None, item).
    """
    i += 1
    head = None
    children: list[tuple[str | None, tuple]] = []

    def attach(role, item):
        if item[0] == _SPLICE:
            children.extend(item[1])
        else:
            children.append((role, item))

    while i < len(tokens) and tokens[i] != ")":
        tok = tokens[i]
        if tok == "(":
            item, i = _parse_group(tokens, i)
            attach(None, item)
        elif _is_role(tok):
            nxt = tokens[i + 1]
            if nxt == "(":
                item, i = _parse_group(tokens, i + 1)
                attach(tok, item)
            elif is_constant_token(nxt):
                attach(tok, (_CONST, nxt))
                i += 2
            else:
                attach(tok, (_NODE, (nxt, [])))
                i += 2
        elif is_constant_token(tok):
            i += 1  # a constant with no role to live under: dropped
        elif head is None:
            head = tok
            i += 1
        else:
            i += 1  # a second bare concept in the same group: dropped
    i += 1  # consume ')'

    if head is None:
        return (_SPLICE, children), i
    return (_NODE, (head, children)), i


def restore(tokens) -> AmrGraph:
    """Repair an arbitrary token sequence into a valid AmrGraph.

    The input is re-tokenized first (so glued parentheses like ``(dog`` and
    quoted constants split across tokens both come apart correctly), then
    repaired in a fixed order: structural ``/`` and bare ``:`` tokens are
    dropped, orphaned role tokens are dropped, parentheses are balanced, and
    the remaining material is parsed as one node body with fresh variables
    ``v0, v1, ...`` assigned in order of appearance. Tokens that can neither
    head a node nor serve as a role are dropped, as are parenthesized groups
    left with nothing to attach them. Duplicated concepts are NOT merged and
    no re-entrancies are ever produced, so the result is tree-shaped.

    Raises Unrestorable only when the input contains no concept token.
    """
    text = " ".join(str(t) for t in tokens)
    toks = [m.group(0) for m in penman._TOKEN_RE.finditer(text)]
    toks = [t for t in toks if t not in ("/", ":")]
    toks = _drop_orphan_roles(toks)
    toks = _balance_parens(toks)

    # Wrapping lets stray top-level roles attach to the first concept, e.g.
    # "dog :ARG0 cat" restores the way "( dog :ARG0 ( cat ) )" would.
    item, _ = _parse_group(["("] + toks + [")"], 0)
    if item[0] == _SPLICE:
        root_item = next((it for _, it in item[1] if it[0] == _NODE), None)
    else:
        root_item = item
    if root_item is None:
        raise Unrestorable("no concept token in %r" % (list(tokens),))

    nodes: dict[str, str] = {}
    edges: list[tuple[str, str, str]] = []
    attributes: list[tuple[str, str, str]] = []

    def build(item) -> str:
        head, children = item[1]
        var = "v%d" % len(nodes)
        nodes[var] = head
        for role, child in children:
            if role is None:
                continue  # a nested group that never had a role: dropped
            if child[0] == _CONST:
                attributes.append((var, role, child[1]))
            else:
                child_var = build(child)
                base, inverted = penman._invert_role(role)
                if inverted:
                    edges.append((child_var, base, var))
                else:
                    edges.append((var, role, child_var))
        return var

    root = build(root_item)
    return AmrGraph(root=root, nodes=nodes, edges=edges,
                    attributes=attributes)


def roundtrip_score(g: AmrGraph, restarts: int = 4, seed: int = 0):
    """Smatch of restore(preprocess(g)) against ``g`` with :wiki removed.

    The restored graph is scored as the candidate. Tree-shaped graphs come
    back with F1 = 1.0; every duplicated re-entrancy costs matches.
    """
    from .smatch import compute_smatch

    gold = remove_wiki(g)
    candidate = restore(preprocess(g).tokens)
    return compute_smatch(candidate, gold, restarts=restarts, seed=seed)
