"""Bracket parsing, leaf stripping, linearization, and edit distance."""

import numpy as np
import pytest

from smcg.syntax import (
    EmptyInput,
    MissingLabel,
    StrayToken,
    SyntaxTree,
    TreeTooLarge,
    UnbalancedBrackets,
    WordLeafPresent,
    delinearize,
    has_word_leaves,
    linearize,
    parse_bracketed,
    strip_leaves,
    ted_brute_force,
    tree_edit_distance,
    tree_edit_distance_normalized,
)

from .util import count_bracket_tokens, normalize_brackets, random_tree

# Stripped parse of "The girl on the scooter riding in the summer sun in the
# park", as printed by a standard constituency parser.
EXEMPLAR_TREE = (
    "(ROOT (FRAG (NP (DT) (NN)) (PP (IN) (NP (NP (DT) (NN)) (VP (VBG) "
    "(PP (IN) (NP (NP (DT) (NN) (NN)) (PP (IN)(NP (DT) (NN))))))))))"
)


def test_parse_nested_tags():
    tree = parse_bracketed("(ROOT (NP (DT) (NN)))")
    assert tree.label == "ROOT"
    assert [c.label for c in tree.children] == ["NP"]
    assert [c.label for c in tree.children[0].children] == ["DT", "NN"]
    assert not has_word_leaves(tree)


def test_parse_single_node():
    tree = parse_bracketed("(X)")
    assert tree.label == "X" and tree.children == []


def test_parse_word_leaves():
    tree = parse_bracketed("(ROOT (NP (DT the) (NN girl)))")
    np_node = tree.children[0]
    dt, nn = np_node.children
    assert dt.children[0].label == "the" and dt.children[0].is_word
    assert nn.children[0].label == "girl" and nn.children[0].is_word


@pytest.mark.parametrize(
    "text",
    [
        "(ROOT (NP (DT the) (NN girl)))",
        "(X)",
        "  ( A ( B b )   ( C ) )  ",
        EXEMPLAR_TREE,
    ],
)
def test_parse_serialize_round_trip(text):
    assert parse_bracketed(text).serialize() == normalize_brackets(text)


def test_parse_errors():
    with pytest.raises(EmptyInput):
        parse_bracketed("   ")
    with pytest.raises(UnbalancedBrackets) as exc:
        parse_bracketed("(A (B)")
    assert exc.value.position == 0
    with pytest.raises(UnbalancedBrackets) as exc:
        parse_bracketed("(A))")
    assert exc.value.position == 3
    with pytest.raises(StrayToken):
        parse_bracketed("stray (A)")
    with pytest.raises(StrayToken):
        parse_bracketed("(A) trailing")
    with pytest.raises(StrayToken):
        parse_bracketed("(A) (B)")
    with pytest.raises(MissingLabel):
        parse_bracketed("(())")


def test_strip_leaves_single_word():
    assert strip_leaves(parse_bracketed("(NP (DT a))")).serialize() == "(NP (DT))"


def test_strip_leaves_idempotent():
    tree = parse_bracketed(EXEMPLAR_TREE)
    assert strip_leaves(tree) == tree


def test_strip_leaves_recovers_exemplar_tree():
    # attach the sentence's words to the preterminals in reading order,
    # then stripping them must give back the printed tree
    words = "The girl on the scooter riding in the summer sun in the park".split()
    skeleton = parse_bracketed(EXEMPLAR_TREE)
    it = iter(words)

    def attach(node):
        kids = [attach(c) for c in node.children]
        if not kids:
            kids = [SyntaxTree(next(it), [], is_word=True)]
        return SyntaxTree(node.label, kids)

    with_words = attach(skeleton)
    assert next(it, None) is None  # every word consumed
    assert has_word_leaves(with_words)
    assert strip_leaves(with_words) == skeleton


def test_linearize_tokens():
    tree = parse_bracketed("(NP (DT) (NN))")
    assert linearize(tree) == ["(", "NP", "(", "DT", ")", "(", "NN", ")", ")"]
    assert linearize(parse_bracketed("(X)")) == ["(", "X", ")"]


def test_linearize_exemplar_tree_length_matches_token_count():
    tree = parse_bracketed(EXEMPLAR_TREE)
    assert len(linearize(tree)) == count_bracket_tokens(EXEMPLAR_TREE)


def test_linearize_rejects_word_leaves():
    with pytest.raises(WordLeafPresent):
        linearize(parse_bracketed("(NP (DT the))"))


def test_delinearize_inverts_linearize():
    rng = np.random.default_rng(11)
    for _ in range(50):
        tree = random_tree(rng, 10)
        assert delinearize(linearize(tree)) == tree


def test_ted_identity_and_relabel():
    rng = np.random.default_rng(12)
    for _ in range(20):
        t = random_tree(rng, 9)
        assert tree_edit_distance(t, t) == 0
    assert tree_edit_distance(parse_bracketed("(X)"), parse_bracketed("(Y)")) == 1


def test_ted_derived_examples_match_oracle():
    a = parse_bracketed("(A (B) (C))")
    b = parse_bracketed("(A (B (C)))")
    oracle = ted_brute_force(a, b)
    assert tree_edit_distance(a, b) == oracle == 2

    x = parse_bracketed("(X)")
    ab = parse_bracketed("(A (B))")
    assert ted_brute_force(x, ab) == tree_edit_distance(x, ab) == 2

    t3 = parse_bracketed("(A (B) (C))")
    assert ted_brute_force(t3, t3) == 0


def test_ted_brute_force_size_cap():
    big = parse_bracketed("(A (B) (C) (D) (E) (F) (G) (H) (I))")
    with pytest.raises(TreeTooLarge):
        ted_brute_force(big, big)
    assert ted_brute_force(big, big, max_nodes=9) == 0


def test_ted_matches_brute_force_on_fuzzed_pairs():
    rng = np.random.default_rng(13)
    for _ in range(300):
        a = random_tree(rng, 6, "ABC")
        b = random_tree(rng, 6, "ABC")
        assert tree_edit_distance(a, b) == ted_brute_force(a, b)


def test_ted_metric_axioms_on_fuzzed_triples():
    rng = np.random.default_rng(14)
    for _ in range(200):
        a = random_tree(rng, 12, "ABCD")
        b = random_tree(rng, 12, "ABCD")
        c = random_tree(rng, 12, "ABCD")
        dab = tree_edit_distance(a, b)
        assert dab == tree_edit_distance(b, a)
        assert tree_edit_distance(a, a) == 0
        assert tree_edit_distance(a, c) <= dab + tree_edit_distance(b, c)


def test_ted_to_single_node_tree():
    rng = np.random.default_rng(15)
    single = parse_bracketed("(Q)")
    for _ in range(100):
        a = random_tree(rng, 6, "ABQ")
        d = tree_edit_distance(a, single)
        n = a.node_count()
        assert d <= n
        assert d == ted_brute_force(a, single)
        labels = set()

        def collect(t):
            labels.add(t.label)
            for ch in t.children:
                collect(ch)

        collect(a)
        if "Q" not in labels:
            assert d == n


def test_normalized_ted_range():
    a = parse_bracketed("(A (B (C)))")
    b = parse_bracketed("(X (Y) (Z))")
    v = tree_edit_distance_normalized(a, b)
    assert 0.0 <= v <= 1.0
    assert tree_edit_distance_normalized(a, a) == 0.0
