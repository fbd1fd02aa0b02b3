"""Smatch: triple-overlap F1 between two AMR graphs.

Graphs are broken into instance, relation, and attribute triples (the top
pointer becomes the attribute ``(TOP, root, "top")``), then an injective
mapping from the candidate's variables to the gold graph's variables is
sought that maximizes matched triples. ``compute_smatch`` uses restarted
hill-climbing; ``compute_smatch_exact`` enumerates every injective mapping
and is the oracle the hill-climber is tested against.

Scoring orientation: the first graph is the candidate (precision
denominator), the second the gold (recall denominator). Internally the
search always runs in a canonical orientation derived from the triple sets
themselves, so swapping the arguments exchanges precision and recall exactly.
"""
from __future__ import annotations

import itertools
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .penman import AmrGraph


class TooLarge(Exception):
    """compute_smatch_exact() refused a graph with too many variables."""


class EmptyCorpus(Exception):
    """corpus_smatch() was given no pairs."""


EXACT_LIMIT = 8  # exhaustive search bound, per side


@dataclass(frozen=True)
class TripleSet:
    """The triples of one graph, as sets."""

    instances: frozenset  # (variable, concept)
    relations: frozenset  # (role, source, target)
    attributes: frozenset  # (role, variable, constant); includes TOP

    def total(self) -> int:
        return len(self.instances) + len(self.relations) + len(self.attributes)

    def variables(self) -> list[str]:
        vs = {v for v, _ in self.instances}
        for _, s, t in self.relations:
            vs.add(s)
            vs.add(t)
        for _, v, _ in self.attributes:
            vs.add(v)
        return sorted(vs)


@dataclass(frozen=True)
class SmatchScore:
    precision: float
    recall: float
    f1: float
    matched: int
    total_left: int
    total_right: int
    mapping: dict = field(default_factory=dict, compare=False)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def extract_triples(g: AmrGraph) -> TripleSet:
    """Instance/relation/attribute triples of ``g``, plus the TOP marker."""
    instances = frozenset((v, c) for v, c in g.nodes.items())
    relations = frozenset((r, s, t) for s, r, t in g.edges)
    attributes = frozenset((r, v, c) for v, r, c in g.attributes)
    attributes |= {("TOP", g.root, "top")}
    return TripleSet(instances, relations, attributes)


def score_mapping(left: TripleSet, right: TripleSet, mapping: dict) -> int:
    """Matched-triple count for an explicit variable mapping.

    ``mapping`` sends left variables to right variables and must be
    injective; left variables absent from it match nothing.
    """
    values = list(mapping.values())
    if len(values) != len(set(values)):
        raise ValueError("mapping is not injective: %r" % mapping)
    matched = 0
    for v, c in left.instances:
        if (mapping.get(v), c) in right.instances:
            matched += 1
    for r, s, t in left.relations:
        if s in mapping and t in mapping:
            if (r, mapping[s], mapping[t]) in right.relations:
                matched += 1
    for r, v, c in left.attributes:
        if (r, mapping.get(v), c) in right.attributes:
            matched += 1
    return matched


class _Problem:
    """Index-based matching problem between two triple sets.

    Variables get integer indices (sorted name order). ``unary[i][j]`` counts
    triples matched by mapping i->j alone (instances, attributes, and
    self-loop relations); ``binary[(i, j)][(k, l)]`` counts relation triples
    matched when i->j and k->l hold together. ``pool[i]`` holds every j that
    can contribute anything for i.
    """

    def __init__(self, left: TripleSet, right: TripleSet):
        self.left = left
        self.right = right
        self.lvars = left.variables()
        self.rvars = right.variables()
        self.lidx = {v: i for i, v in enumerate(self.lvars)}
        self.ridx = {v: j for j, v in enumerate(self.rvars)}
        n, m = len(self.lvars), len(self.rvars)

        self.unary = [dict() for _ in range(n)]
        self.binary: dict = {}
        self.pool = [set() for _ in range(n)]

        by_concept: dict = {}
        for v, c in right.instances:
            by_concept.setdefault(c, []).append(self.ridx[v])
        for v, c in left.instances:
            i = self.lidx[v]
            for j in by_concept.get(c, ()):
                self._bump_unary(i, j)

        by_attr: dict = {}
        for r, v, c in right.attributes:
            by_attr.setdefault((r, c), []).append(self.ridx[v])
        for r, v, c in left.attributes:
            i = self.lidx[v]
            for j in by_attr.get((r, c), ()):
                self._bump_unary(i, j)

        by_role: dict = {}
        for r, s, t in right.relations:
            by_role.setdefault(r, []).append((self.ridx[s], self.ridx[t]))
        for r, s, t in left.relations:
            i, k = self.lidx[s], self.lidx[t]
            for j, l in by_role.get(r, ()):
                if i == k and j == l:
                    self._bump_unary(i, j)  # self-loop matches self-loop
                elif i != k and j != l:
                    self._bump_binary(i, j, k, l)

    def _bump_unary(self, i, j):
        self.unary[i][j] = self.unary[i].get(j, 0) + 1
        self.pool[i].add(j)

    def _bump_binary(self, i, j, k, l):
        self.binary.setdefault((i, j), {})
        self.binary[(i, j)][(k, l)] = self.binary[(i, j)].get((k, l), 0) + 1
        self.binary.setdefault((k, l), {})
        self.binary[(k, l)][(i, j)] = self.binary[(k, l)].get((i, j), 0) + 1
        self.pool[i].add(j)
        self.pool[k].add(l)

    def score(self, m: list[int]) -> int:
        total = 0
        for i, j in enumerate(m):
            if j < 0:
                continue
            total += self.unary[i].get(j, 0)
            for (k, l), w in self.binary.get((i, j), {}).items():
                if k > i and m[k] == l:
                    total += w
        return total

    def _neigh(self, i, j, m, skip):
        s = 0
        for (k, l), w in self.binary.get((i, j), {}).items():
            if k != skip and m[k] == l:
                s += w
        return s

    def climb(self, m: list[int]) -> tuple[int, list[int]]:
        """Greedy best-gain hill-climbing from mapping ``m`` (modified).

        Moves are single reassignments to a free candidate or swaps with the
        candidate's current owner; among equal gains the first move in
        variable-then-candidate order wins, so climbs are deterministic.
        """
        n = len(self.lvars)
        owner = {}
        for i, j in enumerate(m):
            if j >= 0:
                owner[j] = i
        score = self.score(m)
        while True:
            best_gain = 0
            best_move = None
            for i in range(n):
                jo = m[i]
                base = (self.unary[i].get(jo, 0) + self._neigh(i, jo, m, i)
                        if jo >= 0 else 0)
                for jn in sorted(self.pool[i]):
                    if jn == jo:
                        continue
                    k = owner.get(jn)
                    if k is None:
                        gain = (self.unary[i].get(jn, 0)
                                + self._neigh(i, jn, m, i) - base)
                        if gain > best_gain:
                            best_gain, best_move = gain, (i, jn, None)
                    elif k != i:
                        gain = self._swap_gain(i, k, m)
                        if gain > best_gain:
                            best_gain, best_move = gain, (i, jn, k)
            if best_move is None:
                return score, m
            i, jn, k = best_move
            if k is None:
                jo = m[i]
                if jo >= 0:
                    del owner[jo]
                m[i] = jn
                owner[jn] = i
            else:
                ji, jk = m[i], m[k]
                m[i], m[k] = jk, ji
                owner[jk] = i
                if ji >= 0:
                    owner[ji] = k
            score += best_gain

    def _swap_gain(self, i, k, m):
        """Gain of exchanging the targets of left variables i and k."""
        ji, jk = m[i], m[k]

        def u(a, j):
            return self.unary[a].get(j, 0) if j >= 0 else 0

        def pair(a, ja, c, jc):
            if ja < 0 or jc < 0:
                return 0
            return self.binary.get((a, ja), {}).get((c, jc), 0)

        # Excluding each other via ``skip``, then adding the mutual pair
        # term once, counts every affected triple exactly once.
        old = (u(i, ji) + u(k, jk)
               + self._neigh(i, ji, m, k) + self._neigh(k, jk, m, i)
               + pair(i, ji, k, jk))
        new = (u(i, jk) + u(k, ji)
               + self._neigh(i, jk, m, k) + self._neigh(k, ji, m, i)
               + pair(i, jk, k, ji))
        return new - old

    def concept_of(self, side: str):
        src = self.left.instances if side == "left" else self.right.instances
        out = {}
        for v, c in src:
            out.setdefault(v, c)
        return out


def _greedy_init(p: _Problem) -> list[int]:
    lcon = p.concept_of("left")
    rcon = p.concept_of("right")
    m = [-1] * len(p.lvars)
    used = set()
    for i, lv in enumerate(p.lvars):
        want = lcon.get(lv)
        for j in sorted(p.pool[i]):
            if j not in used and rcon.get(p.rvars[j]) == want:
                m[i] = j
                used.add(j)
                break
    return m


def _random_init(p: _Problem, rng: random.Random) -> list[int]:
    m = [-1] * len(p.lvars)
    used = set()
    for i in range(len(p.lvars)):
        cands = [j for j in sorted(p.pool[i]) if j not in used]
        if cands:
            m[i] = rng.choice(cands)
            used.add(m[i])
    return m


def _search(left: TripleSet, right: TripleSet, restarts: int,
            seed: int) -> tuple[int, dict]:
    p = _Problem(left, right)
    best_score = -1
    best_m = [-1] * len(p.lvars)
    for r in range(restarts):
        if r == 0:
            m = _greedy_init(p)
        else:
            m = _random_init(p, random.Random(seed * 1000003 + r))
        score, m = p.climb(m)
        if score > best_score:
            best_score, best_m = score, list(m)
    mapping = {p.lvars[i]: p.rvars[j]
               for i, j in enumerate(best_m) if j >= 0}
    return best_score, mapping


def _orient_key(t: TripleSet):
    return (len(t.variables()), t.total(), sorted(t.instances),
            sorted(t.relations), sorted(t.attributes))


def _score_from_matched(matched, tl, tr, mapping) -> SmatchScore:
    p = matched / tl if tl else 0.0
    r = matched / tr if tr else 0.0
    return SmatchScore(precision=p, recall=r, f1=_f1(p, r), matched=matched,
                       total_left=tl, total_right=tr, mapping=mapping)


def compute_smatch(g1: AmrGraph, g2: AmrGraph, restarts: int = 4,
                   seed: int = 0) -> SmatchScore:
    """Hill-climbing Smatch of candidate ``g1`` against gold ``g2``.

    ``restarts`` >= 1 restarts: the first is seeded greedily by concept
    match, the rest randomly from the candidate pools. Deterministic for a
    fixed seed, and the search orientation is canonicalized so that
    compute_smatch(b, a) returns the exact mirror of compute_smatch(a, b).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    t1, t2 = extract_triples(g1), extract_triples(g2)
    if _orient_key(t1) <= _orient_key(t2):
        matched, mapping = _search(t1, t2, restarts, seed)
    else:
        matched, inv = _search(t2, t1, restarts, seed)
        mapping = {v: k for k, v in inv.items()}
    return _score_from_matched(matched, t1.total(), t2.total(), mapping)


def compute_smatch_exact(g1: AmrGraph, g2: AmrGraph) -> SmatchScore:
    """Exhaustive-search Smatch. Raises TooLarge beyond 8 variables a side."""
    t1, t2 = extract_triples(g1), extract_triples(g2)
    for t in (t1, t2):
        if len(t.variables()) > EXACT_LIMIT:
            raise TooLarge("%d variables exceeds the exhaustive limit of %d"
                           % (len(t.variables()), EXACT_LIMIT))

    a, b, swapped = t1, t2, False
    if len(t1.variables()) > len(t2.variables()):
        a, b, swapped = t2, t1, True
    avars, bvars = a.variables(), b.variables()
    best = -1
    best_mapping: dict = {}
    for perm in itertools.permutations(range(len(bvars)), len(avars)):
        mapping = {avars[i]: bvars[j] for i, j in enumerate(perm)}
        matched = score_mapping(a, b, mapping)
        if matched > best:
            best = matched
            best_mapping = mapping
    if swapped:
        best_mapping = {v: k for k, v in best_mapping.items()}
    return _score_from_matched(best, t1.total(), t2.total(), best_mapping)


def _derived_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(ss.generate_state(1)[0])


def corpus_smatch_detailed(pairs, restarts: int = 4, seed: int = 0,
                           workers: int = 1):
    """Corpus micro-average plus the per-pair scores.

    Each pair gets its own seed derived from (seed, index), so results are
    identical no matter how many workers evaluate the pairs.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpus("no graph pairs to score")

    def one(item):
        idx, (cand, gold) = item
        return compute_smatch(cand, gold, restarts=restarts,
                              seed=_derived_seed(seed, idx))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            per_pair = list(ex.map(one, enumerate(pairs)))
    else:
        per_pair = [one(item) for item in enumerate(pairs)]

    matched = sum(s.matched for s in per_pair)
    tl = sum(s.total_left for s in per_pair)
    tr = sum(s.total_right for s in per_pair)
    return _score_from_matched(matched, tl, tr, {}), per_pair


def corpus_smatch(pairs, restarts: int = 4, seed: int = 0,
                  workers: int = 1) -> SmatchScore:
    """Micro-averaged Smatch over (candidate, gold) pairs."""
    score, _ = corpus_smatch_detailed(pairs, restarts=restarts, seed=seed,
                                      workers=workers)
    return score
