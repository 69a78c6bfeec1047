"""Shared helpers for the test suite."""

import re

import numpy as np

from smcg.syntax import SyntaxTree


def random_tree(rng: np.random.Generator, max_nodes: int, labels: str = "ABCDE") -> SyntaxTree:
    """Random ordered labeled tree with between 1 and max_nodes nodes."""
    budget = int(rng.integers(1, max_nodes + 1))
    tree, _ = _grow(rng, budget, labels)
    return tree


def _grow(rng, budget, labels):
    node = SyntaxTree(labels[int(rng.integers(0, len(labels)))], [])
    used = 1
    budget -= 1
    while budget > 0 and rng.random() < 0.6:
        take = int(rng.integers(1, budget + 1))
        child, child_used = _grow(rng, take, labels)
        node.children.append(child)
        used += child_used
        budget -= child_used
    return node, used


def count_bracket_tokens(text: str) -> int:
    """Independent tokenizer: brackets and tags each count as one token."""
    return len(re.findall(r"[()]|[^\s()]+", text))


def normalize_brackets(text: str) -> str:
    """Canonical whitespace form of a bracketed string, by token re-join."""
    tokens = re.findall(r"[()]|[^\s()]+", text)
    out = []
    for tok in tokens:
        if out and tok != ")" and out[-1] != "(":
            out.append(" ")
        out.append(tok)
    return "".join(out)
