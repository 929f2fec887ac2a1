"""Ordered labelled dependency trees built from logical forms, and a partial-tree enumerator.

Two logical-form dialects are understood:

``cogs``
    COGS-style conjunctions such as
    ``* rose ( x _ 1 ) ; help . theme ( x _ 3 , x _ 1 ) AND help . agent ( x _ 3 , Emma )``.
    Atoms sharing an event variable are merged into one head labelled with the
    verb lemma; role fillers become its children.
``synth``
    Bracketed predicate-argument terms, e.g. ``see ( dog , cat )``.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import DataError, TreeParseError

# children of an event head are ordered by role; unknown roles follow alphabetically
ROLE_ORDER = ("theme", "agent", "recipient")

_TOKEN_RE = re.compile(r"[(),;.*]|[^\s(),;.*]+")

Nested = Union[str, tuple]


@dataclass(frozen=True)
class DepTree:
    labels: tuple[str, ...]
    children: tuple[tuple[int, ...], ...]
    root: int = 0

    def __post_init__(self):
        if len(self.labels) != len(self.children) or not self.labels:
            raise ValueError("labels and children must be non-empty and of equal length")
        seen = [0] * len(self.labels)
        for kids in self.children:
            for k in kids:
                seen[k] += 1
        if seen[self.root] != 0 or any(c != 1 for i, c in enumerate(seen) if i != self.root):
            raise ValueError("not a tree: every non-root node needs exactly one parent")
        # reachability from the root rules out cycles among non-root nodes
        stack, reached = [self.root], 0
        while stack:
            reached += 1
            stack.extend(self.children[stack.pop()])
            if reached > len(self.labels):
                break
        if reached != len(self.labels):
            raise ValueError("not a tree: nodes unreachable from the root")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_nested(cls, nested: Nested) -> "DepTree":
        """Build from ``"leaf"`` or ``(label, [child, ...])``."""
        labels: list[str] = []
        children: list[tuple[int, ...]] = []

        def add(node: Nested) -> int:
            label, kids = (node, ()) if isinstance(node, str) else node
            idx = len(labels)
            labels.append(label)
            children.append(())
            children[idx] = tuple(add(k) for k in kids)
            return idx

        add(nested)
        return cls(tuple(labels), tuple(children), 0)

    def to_nested(self, node: int | None = None) -> Nested:
        node = self.root if node is None else node
        kids = self.children[node]
        if not kids:
            return self.labels[node]
        return (self.labels[node], [self.to_nested(k) for k in kids])

    def encode(self, node: int | None = None) -> str:
        node = self.root if node is None else node
        kids = self.children[node]
        if not kids:
            return self.labels[node]
        return f"{self.labels[node]}({','.join(self.encode(k) for k in kids)})"

    def __str__(self) -> str:
        return self.encode()


# --- parsing ---------------------------------------------------------------------------

def lf_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _check_balanced(tokens: Sequence[str], text: str) -> None:
    depth = 0
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                break
    if depth != 0:
        raise TreeParseError(f"unbalanced parentheses in {text!r}")


def parse_bracketed(text: str) -> DepTree:
    """Parse ``label ( arg , arg , ... )`` terms; arguments may nest."""
    tokens = lf_tokens(text)
    if not tokens:
        raise TreeParseError("empty logical form")
    _check_balanced(tokens, text)
    pos = 0

    def term() -> Nested:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] in "(),":
            raise TreeParseError(f"expected a label at token {pos} in {text!r}")
        label = tokens[pos]
        pos += 1
        if pos < len(tokens) and tokens[pos] == "(":
            pos += 1
            kids = [term()]
            while tokens[pos] == ",":
                pos += 1
                kids.append(term())
            if tokens[pos] != ")":
                raise TreeParseError(f"expected ')' at token {pos} in {text!r}")
            pos += 1
            return (label, kids)
        return label

    tree = term()
    if pos != len(tokens):
        raise TreeParseError(f"trailing tokens after position {pos} in {text!r}")
    return DepTree.from_nested(tree)


def _role_key(role: str) -> tuple[int, str]:
    return (ROLE_ORDER.index(role), "") if role in ROLE_ORDER else (len(ROLE_ORDER), role)


def parse_cogs(text: str) -> DepTree:
    """Reconstruct the predicate-argument skeleton of a COGS logical form."""
    tokens = lf_tokens(text)
    if not tokens:
        raise TreeParseError("empty logical form")
    _check_balanced(tokens, text)

    lambda_vars: set[str] = set()
    pos = 0
    while pos + 2 < len(tokens) and tokens[pos] == "LAMBDA" and tokens[pos + 2] == ".":
        lambda_vars.add(tokens[pos + 1])
        pos += 3
    body = tokens[pos:]

    # bare proper-noun primitive, e.g. "Paula"
    if len(body) == 1 and body[0] not in "(),;.*":
        return DepTree((body[0].lower(),), ((),))

    clauses: list[list[str]] = [[]]
    depth = 0
    for tok in body:
        depth += tok == "("
        depth -= tok == ")"
        if depth == 0 and tok in (";", "AND"):
            clauses.append([])
        else:
            clauses[-1].append(tok)

    labels_of: dict[str, str] = {}                      # var -> lemma (noun or verb)
    edges: dict[str, list[tuple[str, str | None, str]]] = {}  # head var -> [(role, prep, filler)]
    order: list[str] = []
    n_const = 0

    for clause in clauses:
        if not clause:
            raise TreeParseError(f"empty conjunct in {text!r}")
        if clause[0] == "*":
            clause = clause[1:]
        if "(" not in clause or clause[-1] != ")":
            raise TreeParseError(f"malformed conjunct {' '.join(clause)!r}")
        lp = clause.index("(")
        name = [t for t in clause[:lp] if t != "."]
        args = _split_args(clause[lp + 1:-1], lambda_vars, text)
        if len(name) == 1 and len(args) == 1:                 # noun ( x )
            if args[0].startswith("const:"):
                raise TreeParseError(f"unary predicate over a constant: {' '.join(clause)!r}")
            _define(labels_of, args[0], name[0].lower(), order)
            continue
        if len(args) != 2:
            raise TreeParseError(f"unsupported conjunct: {' '.join(clause)!r}")
        head, filler = args
        if filler.startswith("const:"):
            key = f"{filler}#{n_const}"
            n_const += 1
            labels_of[key] = filler[len("const:"):].lower()
            filler = key
        if len(name) == 2:                                    # verb . role ( e , filler )
            verb, role = name
            _define(labels_of, head, verb.lower(), order)
            edges.setdefault(head, []).append((role, None, filler))
        elif len(name) == 3 and name[1] == "nmod":            # noun . nmod . prep ( x , filler )
            edges.setdefault(head, []).append(("nmod", name[2].lower(), filler))
        else:
            raise TreeParseError(f"unsupported predicate {'.'.join(name)!r}")

    for head, outs in edges.items():
        for var in (head, *(f for _, _, f in outs)):
            if var not in labels_of and not var.startswith("lam:"):
                raise TreeParseError(f"unresolvable variable {var} in {text!r}")
    with_parent = {f for outs in edges.values() for _, _, f in outs}
    roots = [v for v in order if v not in with_parent]
    if len(roots) != 1:
        names = ", ".join(labels_of[r] for r in roots) or "none"
        raise TreeParseError(f"expected one connected structure, found roots [{names}] in {text!r}")

    labels: list[str] = []
    children: list[list[int]] = []

    def new_node(label: str) -> int:
        labels.append(label)
        children.append([])
        return len(labels) - 1

    def build(var: str, path: frozenset) -> int:
        if var in path:
            raise TreeParseError(f"cyclic variable reference through {var} in {text!r}")
        node = new_node(labels_of[var])
        outs = sorted(edges.get(var, ()), key=lambda o: (_role_key(o[0]), o[1] or ""))
        for _, prep, filler in outs:
            if filler.startswith("lam:"):                      # lambda-bound argument
                continue
            # an argument shared by two heads (control verbs) is copied under each
            child = build(filler, path | {var})
            if prep is not None:
                p = new_node(prep)
                children[p].append(child)
                child = p
            children[node].append(child)
        return node

    root = build(roots[0], frozenset())
    return DepTree(tuple(labels), tuple(tuple(c) for c in children), root)


def _define(table: dict[str, str], var: str, label: str, order: list[str]) -> None:
    if table.get(var, label) != label:
        raise TreeParseError(f"variable {var} defined as both {table[var]!r} and {label!r}")
    if var not in table:
        table[var] = label
        order.append(var)


def _split_args(tokens: Sequence[str], lambda_vars: set[str], text: str) -> list[str]:
    args: list[list[str]] = [[]]
    for tok in tokens:
        if tok == ",":
            args.append([])
        else:
            args[-1].append(tok)
    out = []
    for arg in args:
        if len(arg) == 3 and arg[1] == "_" and arg[2].isdigit():
            out.append(f"x_{arg[2]}")
        elif len(arg) == 1 and arg[0] in lambda_vars:
            out.append(f"lam:{arg[0]}")
        elif len(arg) == 1 and arg[0] not in "()":
            out.append(f"const:{arg[0]}")
        else:
            raise TreeParseError(f"cannot read argument {' '.join(arg)!r} in {text!r}")
    return out


def logical_form_to_deptree(raw_target: str, dialect: str) -> DepTree:
    if dialect == "cogs":
        return parse_cogs(raw_target)
    if dialect == "synth":
        return parse_bracketed(raw_target)
    raise DataError(f"no tree reading for dialect {dialect!r}")


# --- brute-force partial trees ---------------------------------------------------------

def count_partial_trees(t: DepTree) -> int:
    """Number of partial trees, via the product formula (no enumeration)."""
    rooted = [0] * len(t)

    def visit(n: int) -> int:
        total = 1
        for c in t.children[n]:
            total *= 1 + visit(c)
        rooted[n] = total
        return total

    visit(t.root)
    return sum(rooted)


def enumerate_partial_trees(t: DepTree, cap: int = 10_000) -> Counter:
    """Every connected, order-preserving fragment of ``t`` as a canonical string, with multiplicity.

    A fragment keeps a node plus, recursively, an ordered subsequence of the
    children of every node it contains. The full tree counts as a fragment.
    """
    n = count_partial_trees(t)
    if n > cap:
        raise ValueError(f"tree has {n} partial trees, above cap {cap}")

    memo: dict[int, list[str]] = {}

    def rooted(node: int) -> list[str]:
        if node in memo:
            return memo[node]
        label = t.labels[node]
        # each child is either skipped (None) or replaced by one of its rooted fragments
        combos: list[list[str]] = [[]]
        for c in t.children[node]:
            options = rooted(c)
            combos = [prefix + extra for prefix in combos for extra in ([[]] + [[o] for o in options])]
        out = [label if not parts else f"{label}({','.join(parts)})" for parts in combos]
        memo[node] = out
        return out

    bag: Counter = Counter()
    for node in range(len(t)):
        bag.update(rooted(node))
    return bag


def shared_fragment_pairs(a: Counter, b: Counter) -> int:
    """Number of (fragment in a, fragment in b) pairs with identical encodings."""
    return sum(count * b[frag] for frag, count in a.items() if frag in b)
