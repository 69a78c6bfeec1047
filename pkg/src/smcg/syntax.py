"""Bracketed constituency trees and ordered-tree edit distance.

Reads Penn-Treebank-style bracketed strings, strips word leaves, linearizes
leaf-free trees into token sequences (tags and brackets are individual
tokens), and computes unit-cost tree edit distance both with the
keyroot/forest dynamic program and with an exhaustive mapping enumeration
that serves as its oracle on small trees.

All functions are pure; trees are treated as immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class TreeError(Exception):
    """Base class for parse and edit-distance failures."""


class EmptyInput(TreeError):
    pass


class UnbalancedBrackets(TreeError):
    def __init__(self, position: int, message: str):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class StrayToken(TreeError):
    def __init__(self, position: int, token: str):
        super().__init__(f"token {token!r} outside any group (at offset {position})")
        self.position = position
        self.token = token


class MissingLabel(TreeError):
    def __init__(self, position: int):
        super().__init__(f"expected a label after '(' (at offset {position})")
        self.position = position


class WordLeafPresent(TreeError):
    pass


class TreeTooLarge(TreeError):
    pass


@dataclass(eq=True)
class SyntaxTree:
    """Rooted ordered labeled tree; word leaves carry ``is_word=True``."""

    label: str
    children: list["SyntaxTree"] = field(default_factory=list)
    is_word: bool = False

    def serialize(self) -> str:
        """Canonical bracketed form: single spaces, no padding inside groups."""
        if self.is_word:
            return self.label
        if not self.children:
            return f"({self.label})"
        inner = " ".join(c.serialize() for c in self.children)
        return f"({self.label} {inner})"

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children)

    def __str__(self) -> str:
        return self.serialize()


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in "()":
            tokens.append((ch, i))
            i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < n and not text[i].isspace() and text[i] not in "()":
                i += 1
            tokens.append((text[start:i], start))
    return tokens


def parse_bracketed(text: str) -> SyntaxTree:
    """Parse one bracketed tree; bare words inside a group become word leaves.

    Raises EmptyInput, UnbalancedBrackets (with offset), StrayToken for
    content outside the single top-level group, and MissingLabel for a
    group that opens without a tag.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise EmptyInput("no tokens in input")

    pos = 0

    def group() -> SyntaxTree:
        nonlocal pos
        open_pos = tokens[pos][1]
        pos += 1
        if pos >= len(tokens):
            raise UnbalancedBrackets(open_pos, "group never closed")
        tok, tok_pos = tokens[pos]
        if tok in "()":
            raise MissingLabel(tok_pos)
        label = tok
        pos += 1
        children: list[SyntaxTree] = []
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets(open_pos, "group never closed")
            tok, tok_pos = tokens[pos]
            if tok == "(":
                children.append(group())
            elif tok == ")":
                pos += 1
                return SyntaxTree(label, children)
            else:
                children.append(SyntaxTree(tok, [], is_word=True))
                pos += 1

    first_tok, first_pos = tokens[0]
    if first_tok != "(":
        raise StrayToken(first_pos, first_tok)
    tree = group()
    if pos < len(tokens):
        tok, tok_pos = tokens[pos]
        if tok == ")":
            raise UnbalancedBrackets(tok_pos, "unmatched closing bracket")
        raise StrayToken(tok_pos, tok)
    return tree


def strip_leaves(tree: SyntaxTree) -> SyntaxTree:
    """Return a copy with every word leaf removed; tags are retained."""
    return SyntaxTree(
        tree.label,
        [strip_leaves(c) for c in tree.children if not c.is_word],
    )


def has_word_leaves(tree: SyntaxTree) -> bool:
    return tree.is_word or any(has_word_leaves(c) for c in tree.children)


def linearize(tree: SyntaxTree) -> list[str]:
    """Preorder token sequence where "(", ")" and each tag are one token."""
    out: list[str] = []

    def walk(node: SyntaxTree) -> None:
        if node.is_word:
            raise WordLeafPresent(f"word leaf {node.label!r} in tree to linearize")
        out.append("(")
        out.append(node.label)
        for c in node.children:
            walk(c)
        out.append(")")

    walk(tree)
    return out


def delinearize(tokens: list[str]) -> SyntaxTree:
    """Inverse of linearize; positions in errors are token indices."""
    if not tokens:
        raise EmptyInput("no tokens")

    pos = 0

    def group() -> SyntaxTree:
        nonlocal pos
        open_pos = pos
        pos += 1
        if pos >= len(tokens) or tokens[pos] in "()":
            raise MissingLabel(pos if pos < len(tokens) else open_pos)
        label = tokens[pos]
        pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets(open_pos, "group never closed")
            tok = tokens[pos]
            if tok == "(":
                children.append(group())
            elif tok == ")":
                pos += 1
                return SyntaxTree(label, children)
            else:
                raise StrayToken(pos, tok)

    if tokens[0] != "(":
        raise StrayToken(0, tokens[0])
    tree = group()
    if pos < len(tokens):
        raise StrayToken(pos, tokens[pos])
    return tree


# --- tree edit distance ----------------------------------------------------
#
# Keyroot/forest dynamic program over postorder numberings, unit costs for
# insert, delete, and relabel.


def _annotate(root: SyntaxTree) -> tuple[list[str], list[int], list[int]]:
    """Postorder labels, leftmost-leaf-descendant indices, and keyroots."""
    labels: list[str] = []
    lmld: list[int] = []

    def walk(node: SyntaxTree) -> int:
        if not node.children:
            idx = len(labels)
            labels.append(node.label)
            lmld.append(idx)
            return idx
        first = None
        for c in node.children:
            leaf = walk(c)
            if first is None:
                first = leaf
        labels.append(node.label)
        lmld.append(first)
        return first

    walk(root)
    last_for_lmld: dict[int, int] = {}
    for i, l in enumerate(lmld):
        last_for_lmld[l] = i
    keyroots = sorted(last_for_lmld.values())
    return labels, lmld, keyroots


def tree_edit_distance(a: SyntaxTree, b: SyntaxTree) -> int:
    """Minimal insert/delete/relabel count between two ordered labeled trees.

    Callers working with parsed sentences should strip word leaves first so
    the distance reflects the tag skeleton only.
    """
    la, lma, kra = _annotate(a)
    lb, lmb, krb = _annotate(b)
    n, m = len(la), len(lb)
    td = [[0] * m for _ in range(n)]

    for i in kra:
        li = lma[i]
        rows = i - li + 2
        for j in krb:
            lj = lmb[j]
            cols = j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + 1
            row0 = fd[0]
            for y in range(1, cols):
                row0[y] = row0[y - 1] + 1
            ioff = li - 1
            joff = lj - 1
            for x in range(1, rows):
                ax = x + ioff
                label_a = la[ax]
                anchored_a = lma[ax] == li
                fx = fd[x]
                fprev = fd[x - 1]
                for y in range(1, cols):
                    by = y + joff
                    if anchored_a and lmb[by] == lj:
                        cost = 0 if label_a == lb[by] else 1
                        best = fprev[y - 1] + cost
                        alt = fprev[y] + 1
                        if alt < best:
                            best = alt
                        alt = fx[y - 1] + 1
                        if alt < best:
                            best = alt
                        fx[y] = best
                        td[ax][by] = best
                    else:
                        p = lma[ax] - 1 - ioff
                        q = lmb[by] - 1 - joff
                        best = fd[p][q] + td[ax][by]
                        alt = fprev[y] + 1
                        if alt < best:
                            best = alt
                        alt = fx[y - 1] + 1
                        if alt < best:
                            best = alt
                        fx[y] = best
    return td[n - 1][m - 1]


def tree_edit_distance_normalized(a: SyntaxTree, b: SyntaxTree) -> float:
    """Edit count divided by total node count; diagnostic only, in [0, 1]."""
    return tree_edit_distance(a, b) / (a.node_count() + b.node_count())


# --- brute-force oracle ----------------------------------------------------


def _intervals(root: SyntaxTree) -> list[tuple[str, int, int]]:
    """(label, preorder index, postorder index) per node, preorder order."""
    out: list[tuple[str, int, int]] = []
    counter = [0]

    def walk(node: SyntaxTree) -> None:
        pre = len(out)
        out.append((node.label, pre, -1))
        for c in node.children:
            walk(c)
        out[pre] = (node.label, pre, counter[0])
        counter[0] += 1

    walk(root)
    return out


def ted_brute_force(a: SyntaxTree, b: SyntaxTree, max_nodes: int = 8) -> int:
    """Exact edit distance by enumerating valid ordered-tree mappings.

    A mapping is a one-to-one partial node correspondence preserving both
    ancestor order and left-to-right order; its cost is the number of
    relabels among mapped pairs plus all unmapped nodes on both sides.
    Exponential: refuses trees above ``max_nodes`` nodes.
    """
    na, nb = a.node_count(), b.node_count()
    if na > max_nodes or nb > max_nodes:
        raise TreeTooLarge(f"{na} and {nb} nodes exceed the cap of {max_nodes}")
    nodes_a = _intervals(a)
    nodes_b = _intervals(b)

    def is_ancestor(x, y):
        return x[1] < y[1] and x[2] > y[2]

    best = na + nb  # delete everything, insert everything

    def search(k: int, used: int, pairs: list[tuple[int, int]], cost: int) -> None:
        nonlocal best
        rem_a = na - k
        rem_b = nb - len(pairs)
        if cost + abs(rem_a - rem_b) >= best:
            return
        if k == na:
            total = cost + rem_b
            if total < best:
                best = total
            return
        ak = nodes_a[k]
        # mapped b-preorders must increase, so only scan past the last pair
        start = pairs[-1][1] + 1 if pairs else 0
        for bi in range(start, nb):
            if used & (1 << bi):
                continue
            bk = nodes_b[bi]
            ok = True
            for ai_idx, bj_idx in pairs:
                ai = nodes_a[ai_idx]
                bj = nodes_b[bj_idx]
                if is_ancestor(ai, ak) != is_ancestor(bj, bk):
                    ok = False
                    break
            if ok:
                pairs.append((k, bi))
                relabel = 0 if ak[0] == bk[0] else 1
                search(k + 1, used | (1 << bi), pairs, cost + relabel)
                pairs.pop()
        search(k + 1, used, pairs, cost + 1)

    search(0, 0, [], 0)
    return best
