"""Dataset formats, vocabularies, word-vector loading, and the synthetic world.

The dataset is line-delimited JSON, one video per line with its frame
features (inline matrix or a path to an "SMFV" binary file), ground-truth
captions, and exemplar sentences; every parse string is validated at load
time with row-indexed errors.  The synthetic generator builds a small
captioning world whose frame features encode three content words (agent,
action, object) recoverable by construction, and whose captions are
rendered from templates with known constituency skeletons.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, asdict

import numpy as np

from .syntax import (
    SyntaxTree,
    TreeError,
    linearize,
    parse_bracketed,
    strip_leaves,
    tree_edit_distance,
)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

FEATURE_MAGIC = b"SMFV"
FEATURE_VERSION = 1


class DataError(Exception):
    """Base class for dataset failures; row/line numbers are 1-based."""


class SchemaError(DataError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ParseError(DataError):
    def __init__(self, row: int, which: str, cause: TreeError):
        super().__init__(f"row {row}: bad {which} parse: {cause}")
        self.row = row


class FeatureWidthMismatch(DataError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: feature width {got}, expected {expected}")
        self.row = row


class EmptyDataset(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InconsistentWidth(DataError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: vector width {got}, expected {expected}")
        self.line = line


class SpecInvalid(DataError):
    pass


def write_atomic(path: str, payload: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(payload, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Vocabulary:
    """Token <-> id bijection with pad/begin/end/unknown pinned to ids 0-3."""

    def __init__(self, tokens):
        self._tokens = list(RESERVED_TOKENS)
        seen = set(self._tokens)
        for tok in tokens:
            if tok in seen:
                if tok in RESERVED_TOKENS:
                    continue
                raise SpecInvalid(f"duplicate vocabulary token {tok!r}")
            seen.add(tok)
            self._tokens.append(tok)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    @classmethod
    def build(cls, token_stream, min_freq: int = 1) -> "Vocabulary":
        """Count tokens and keep those at/above min_freq, in first-seen order."""
        counts: dict[str, int] = {}
        for tok in token_stream:
            counts[tok] = counts.get(tok, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS]
        return cls(kept)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self._ids

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def encode(self, tok: str) -> int:
        return self._ids.get(tok, UNK_ID)

    def encode_sequence(self, toks) -> list[int]:
        return [self.encode(t) for t in toks]

    def decode(self, idx: int) -> str:
        return self._tokens[idx]

    def decode_sequence(self, ids) -> list[str]:
        return [self._tokens[i] for i in ids]


@dataclass
class CaptionEntry:
    text: str
    parse: str


@dataclass
class CaptionInstance:
    """One video row: features, ground-truth captions, exemplar sentences."""

    video_id: str
    features: np.ndarray  # [m, D_v]
    captions: list[CaptionEntry]
    exemplars: list[CaptionEntry]


# --- feature files ---------------------------------------------------------


def write_features(path: str, features: np.ndarray) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise SpecInvalid(f"feature matrix must be 2-D, got shape {arr.shape}")
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1])
    write_atomic(path, header + arr.tobytes())


def read_features(path: str) -> np.ndarray:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != FEATURE_MAGIC:
        raise SchemaError(1, f"{path}: bad feature-file magic")
    version, m, d_v = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise SchemaError(1, f"{path}: unsupported feature-file version {version}")
    payload = np.frombuffer(blob[16:], dtype="<f4")
    if payload.size != m * d_v:
        raise SchemaError(1, f"{path}: truncated feature file")
    return payload.reshape(m, d_v).astype(np.float64)


# --- dataset IO ------------------------------------------------------------


def _entry_list(raw, row: int, key: str) -> list[CaptionEntry]:
    if not isinstance(raw, list):
        raise SchemaError(row, f"{key} must be a list")
    out = []
    for item in raw:
        if not isinstance(item, dict) or "text" not in item or "parse" not in item:
            raise SchemaError(row, f"{key} entries need 'text' and 'parse'")
        text, parse = item["text"], item["parse"]
        if not isinstance(text, str) or not isinstance(parse, str):
            raise SchemaError(row, f"{key} fields must be strings")
        try:
            parse_bracketed(parse)
        except TreeError as e:
            raise ParseError(row, key, e) from e
        out.append(CaptionEntry(text=text, parse=parse))
    return out


def load_instances(path: str, require_captions: bool = True) -> list[CaptionInstance]:
    """Read and validate one JSONL dataset file."""
    instances: list[CaptionInstance] = []
    width = None
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as handle:
        for row, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(row, f"invalid JSON: {e}") from e
            if not isinstance(raw, dict) or "video_id" not in raw or "features" not in raw:
                raise SchemaError(row, "need 'video_id' and 'features'")
            feats_raw = raw["features"]
            if isinstance(feats_raw, str):
                features = read_features(os.path.join(base, feats_raw))
            else:
                try:
                    features = np.asarray(feats_raw, dtype=np.float64)
                except (TypeError, ValueError) as e:
                    raise SchemaError(row, f"bad inline features: {e}") from e
            if features.ndim != 2 or features.shape[0] < 1:
                raise SchemaError(row, f"features must be [m, D_v] with m >= 1, got {features.shape}")
            if width is None:
                width = features.shape[1]
            elif features.shape[1] != width:
                raise FeatureWidthMismatch(row, width, features.shape[1])
            captions = _entry_list(raw.get("captions", []), row, "captions")
            exemplars = _entry_list(raw.get("exemplars", []), row, "exemplars")
            if require_captions and not captions:
                raise SchemaError(row, "training rows need at least one caption")
            instances.append(
                CaptionInstance(
                    video_id=str(raw["video_id"]),
                    features=features,
                    captions=captions,
                    exemplars=exemplars,
                )
            )
    if not instances:
        raise EmptyDataset(f"{path} holds no instances")
    return instances


def syntax_tokens_of(entry: CaptionEntry) -> list[str]:
    """Linearized, leaf-stripped token sequence of one parse string."""
    return linearize(strip_leaves(parse_bracketed(entry.parse)))


def build_vocabularies(instances, min_word_freq: int = 1) -> tuple[Vocabulary, Vocabulary]:
    """Word vocabulary from caption texts; syntax vocabulary from all parses."""

    def words():
        for inst in instances:
            for cap in inst.captions:
                yield from cap.text.split()

    def syntax_toks():
        for inst in instances:
            for entry in inst.captions + inst.exemplars:
                yield from syntax_tokens_of(entry)

    return Vocabulary.build(words(), min_word_freq), Vocabulary.build(syntax_toks(), 1)


def load_dataset(path: str, min_word_freq: int = 1):
    """Instances plus the vocabularies built from them."""
    instances = load_instances(path)
    word_vocab, syntax_vocab = build_vocabularies(instances, min_word_freq)
    return instances, word_vocab, syntax_vocab


def save_dataset(instances, path: str) -> None:
    lines = []
    for inst in instances:
        lines.append(
            json.dumps(
                {
                    "video_id": inst.video_id,
                    "features": [[float(v) for v in row] for row in inst.features],
                    "captions": [{"text": c.text, "parse": c.parse} for c in inst.captions],
                    "exemplars": [{"text": c.text, "parse": c.parse} for c in inst.exemplars],
                },
                ensure_ascii=False,
            )
        )
    write_atomic(path, "\n".join(lines) + "\n")


# --- word embeddings -------------------------------------------------------


@dataclass
class EmbeddingTable:
    """Word -> dense vector map plus the stop-word set used for sentence COS."""

    vectors: dict[str, np.ndarray]
    width: int
    stop_words: frozenset[str] = frozenset()
    coverage: float | None = None

    def get(self, word: str) -> np.ndarray | None:
        return self.vectors.get(word)


def load_stopwords(path: str | None = None) -> frozenset[str]:
    if path is None:
        path = os.path.join(os.path.dirname(__file__), "assets", "stopwords.txt")
    with open(path, "r", encoding="utf-8") as handle:
        return frozenset(w.strip() for w in handle if w.strip() and not w.startswith("#"))


def load_embeddings(path: str, restrict=None, stop_words=None) -> EmbeddingTable:
    """Read the common text word-vector format (word then decimal floats).

    ``restrict`` optionally limits the table to a word set and reports
    coverage of that set.
    """
    vectors: dict[str, np.ndarray] = {}
    width = None
    wanted = set(restrict) if restrict is not None else None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) < 2:
                raise MalformedLine(line_no, "need a word and at least one value")
            word = parts[0]
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise MalformedLine(line_no, str(e)) from e
            if width is None:
                width = vec.size
            elif vec.size != width:
                raise InconsistentWidth(line_no, width, vec.size)
            if wanted is None or word in wanted:
                vectors[word] = vec
    if width is None:
        raise MalformedLine(1, "empty embedding file")
    coverage = None
    if wanted:
        coverage = len(vectors) / len(wanted)
    if stop_words is None:
        stop_words = load_stopwords()
    return EmbeddingTable(vectors=vectors, width=width, stop_words=frozenset(stop_words), coverage=coverage)


# --- synthetic world -------------------------------------------------------

SLOTS = ("<agent>", "<action>", "<object>")

DEFAULT_AGENTS = (
    "dog", "cat", "man", "woman", "bird", "horse",
    "girl", "boy", "chef", "robot", "monkey", "panda",
)
DEFAULT_ACTIONS = (
    "rides", "chases", "watches", "holds", "pushes",
    "kicks", "paints", "throws", "lifts", "follows",
)
DEFAULT_OBJECTS = (
    "ball", "bike", "kite", "drum", "box", "car",
    "book", "cake", "flag", "broom", "guitar", "rope",
)


@dataclass(frozen=True)
class SynthTemplate:
    name: str
    text: str
    parse: str


DEFAULT_TEMPLATES = (
    SynthTemplate(
        name="svo",
        text="the <agent> <action> the <object>",
        parse="(ROOT (S (NP (DT the) (NN <agent>)) (VP (VBZ <action>) (NP (DT the) (NN <object>)))))",
    ),
    SynthTemplate(
        name="svo-pp",
        text="the <agent> <action> the <object> in the park",
        parse=(
            "(ROOT (S (NP (DT the) (NN <agent>)) (VP (VBZ <action>) "
            "(NP (DT the) (NN <object>)) (PP (IN in) (NP (DT the) (NN park))))))"
        ),
    ),
    SynthTemplate(
        name="bare",
        text="<agent> <action> <object>",
        parse="(ROOT (S (NP (NN <agent>)) (VP (VBZ <action>) (NP (NN <object>)))))",
    ),
    SynthTemplate(
        name="there-rel",
        text="there is a <agent> that <action> the <object>",
        parse=(
            "(ROOT (S (NP (EX there)) (VP (VBZ is) (NP (NP (DT a) (NN <agent>)) "
            "(SBAR (WHNP (WDT that)) (S (VP (VBZ <action>) (NP (DT the) (NN <object>)))))))))"
        ),
    ),
    SynthTemplate(
        name="fronted-pp",
        text="with a <object> the <agent> <action>",
        parse=(
            "(ROOT (S (PP (IN with) (NP (DT a) (NN <object>))) "
            "(NP (DT the) (NN <agent>)) (VP (VBZ <action>))))"
        ),
    ),
    SynthTemplate(
        name="rel-loc",
        text="the <agent> that <action> is near the <object>",
        parse=(
            "(ROOT (S (NP (NP (DT the) (NN <agent>)) (SBAR (WHNP (WDT that)) "
            "(S (VP (VBZ <action>))))) (VP (VBZ is) (PP (IN near) (NP (DT the) (NN <object>))))))"
        ),
    ),
)


@dataclass
class SynthSpec:
    """Configuration of the synthetic captioning world.

    Frame features are noisy embeddings of the video's three content words,
    so the mapping from features to content is recoverable by construction;
    captions are templates rendered with those words, and exemplars are
    other templates rendered with unrelated content.
    """

    agents: tuple[str, ...] = DEFAULT_AGENTS
    actions: tuple[str, ...] = DEFAULT_ACTIONS
    objects: tuple[str, ...] = DEFAULT_OBJECTS
    templates: tuple[SynthTemplate, ...] = DEFAULT_TEMPLATES
    feature_width: int = 32
    frames: int = 8
    noise: float = 0.1
    # adjacent words within a class share most of their embedding direction,
    # so telling them apart needs fine feature detail, not just class identity
    confusable_shift: float = 0.35
    train_videos: int = 2000
    val_videos: int = 200
    test_videos: int = 200
    exemplars_per_video: int = 5

    def content_words(self) -> tuple[str, ...]:
        return tuple(self.agents) + tuple(self.actions) + tuple(self.objects)

    def function_words(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for tpl in self.templates:
            for tok in tpl.text.split():
                if tok not in SLOTS:
                    seen[tok] = None
            for tok in _parse_pattern_words(tpl.parse):
                if tok not in SLOTS:
                    seen[tok] = None
        return tuple(seen)


def _parse_pattern_words(parse: str) -> list[str]:
    tree = parse_bracketed(parse)
    words = []

    def walk(node: SyntaxTree):
        if node.is_word:
            words.append(node.label)
        for c in node.children:
            walk(c)

    walk(tree)
    return words


def render_template(template: SynthTemplate, mapping: dict[str, str]) -> CaptionEntry:
    text = " ".join(mapping.get(tok, tok) for tok in template.text.split())
    parse = template.parse
    for slot, word in mapping.items():
        parse = parse.replace(slot, word)
    return CaptionEntry(text=text, parse=parse)


def template_skeleton(template: SynthTemplate) -> SyntaxTree:
    return strip_leaves(parse_bracketed(template.parse))


def validate_spec(spec: SynthSpec) -> None:
    """Reject worlds whose templates are malformed, too close, or ambiguous."""
    if spec.frames < 1 or spec.feature_width < 1:
        raise SpecInvalid("frames and feature_width must be positive")
    if spec.noise < 0:
        raise SpecInvalid("noise must be nonnegative")
    if not (spec.agents and spec.actions and spec.objects):
        raise SpecInvalid("all three content classes must be nonempty")
    content = spec.content_words()
    if len(set(content)) != len(content):
        raise SpecInvalid("content words must be unique across classes")
    if len(spec.templates) < 2:
        raise SpecInvalid("need at least two templates")
    if not (1 <= spec.exemplars_per_video <= len(spec.templates) - 1):
        raise SpecInvalid("exemplars_per_video must fit the other templates")
    skeletons = []
    for tpl in spec.templates:
        try:
            tree = parse_bracketed(tpl.parse)
        except TreeError as e:
            raise SpecInvalid(f"template {tpl.name}: bad parse pattern: {e}") from e
        text_slots = sorted(t for t in tpl.text.split() if t in SLOTS)
        parse_slots = sorted(w for w in _parse_pattern_words(tpl.parse) if w in SLOTS)
        if text_slots != parse_slots or set(text_slots) != set(SLOTS):
            raise SpecInvalid(f"template {tpl.name}: surface and parse slots must both cover {SLOTS}")
        surface_words = [t for t in tpl.text.split() if t not in SLOTS]
        if _parse_pattern_words(tpl.parse) != tpl.text.split():
            raise SpecInvalid(f"template {tpl.name}: parse leaf order must match the surface")
        del surface_words
        skeletons.append(strip_leaves(tree))
    for i in range(len(skeletons)):
        for j in range(i + 1, len(skeletons)):
            if tree_edit_distance(skeletons[i], skeletons[j]) < 2:
                raise SpecInvalid(
                    f"templates {spec.templates[i].name} and {spec.templates[j].name} are too close"
                )
            if _patterns_ambiguous(spec.templates[i], spec.templates[j]):
                raise SpecInvalid(
                    f"templates {spec.templates[i].name} and {spec.templates[j].name} "
                    "can match the same sentence"
                )


def _patterns_ambiguous(a: SynthTemplate, b: SynthTemplate) -> bool:
    ta, tb = a.text.split(), b.text.split()
    if len(ta) != len(tb):
        return False
    for wa, wb in zip(ta, tb):
        if wa not in SLOTS and wb not in SLOTS and wa != wb:
            return False
    return True


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


class SynthWorld:
    """A generated world: content embeddings plus template matching."""

    def __init__(self, spec: SynthSpec, content_vectors: dict[str, np.ndarray]):
        self.spec = spec
        self.content_vectors = content_vectors
        self.content_set = set(spec.content_words())
        self._patterns = [tpl.text.split() for tpl in spec.templates]

    @classmethod
    def create(cls, spec: SynthSpec, rng: np.random.Generator) -> "SynthWorld":
        vectors: dict[str, np.ndarray] = {}
        for words in (spec.agents, spec.actions, spec.objects):
            for i, word in enumerate(words):
                if spec.confusable_shift > 0 and i % 2 == 1:
                    base = vectors[words[i - 1]]
                    vectors[word] = _unit(base + spec.confusable_shift * rng.normal(size=spec.feature_width))
                else:
                    vectors[word] = _unit(rng.normal(size=spec.feature_width))
        return cls(spec, vectors)

    def frame_word(self, index: int) -> int:
        """Which content slot (0 agent, 1 action, 2 object) a frame encodes."""
        return index % 3

    def features_for(self, agent: str, action: str, obj: str, rng: np.random.Generator) -> np.ndarray:
        content = (agent, action, obj)
        rows = []
        for i in range(self.spec.frames):
            base = self.content_vectors[content[self.frame_word(i)]]
            rows.append(base + self.spec.noise * rng.normal(size=self.spec.feature_width))
        return np.array(rows)

    def oracle_decode(self, features: np.ndarray) -> tuple[str, str, str]:
        """Recover (agent, action, object) by per-slot nearest embedding."""
        classes = (self.spec.agents, self.spec.actions, self.spec.objects)
        out = []
        for slot, words in enumerate(classes):
            rows = [features[i] for i in range(len(features)) if self.frame_word(i) == slot]
            mean = np.mean(rows, axis=0)
            dists = [np.linalg.norm(mean - self.content_vectors[w]) for w in words]
            out.append(words[int(np.argmin(dists))])
        return tuple(out)

    def match_template(self, words: list[str]) -> tuple[int, dict[str, str]] | None:
        for idx, pattern in enumerate(self._patterns):
            if len(pattern) != len(words):
                continue
            mapping: dict[str, str] = {}
            ok = True
            for pat, word in zip(pattern, words):
                if pat in SLOTS:
                    mapping[pat] = word
                elif pat != word:
                    ok = False
                    break
            if ok:
                return idx, mapping
        return None

    def parse_caption(self, words: list[str]) -> SyntaxTree:
        """Template-matched parse, or a flat fallback tree for misfits."""
        match = self.match_template(words)
        if match is not None:
            idx, mapping = match
            rendered = render_template(self.spec.templates[idx], mapping)
            return parse_bracketed(rendered.parse)
        leaves = " ".join(f"(TOK {w})" for w in words) if words else "(TOK)"
        return parse_bracketed(f"(ROOT (FLAT {leaves}))")

    def content_of(self, words) -> set[str]:
        return {w for w in words if w in self.content_set}

    def content_recall(self, predicted_words, reference_words) -> float:
        truth = self.content_of(reference_words)
        if not truth:
            return 0.0
        return len(truth & self.content_of(predicted_words)) / len(truth)

    def to_json(self) -> dict:
        return {
            "spec": {
                "agents": list(self.spec.agents),
                "actions": list(self.spec.actions),
                "objects": list(self.spec.objects),
                "templates": [asdict(t) for t in self.spec.templates],
                "feature_width": self.spec.feature_width,
                "frames": self.spec.frames,
                "noise": self.spec.noise,
                "train_videos": self.spec.train_videos,
                "val_videos": self.spec.val_videos,
                "test_videos": self.spec.test_videos,
                "exemplars_per_video": self.spec.exemplars_per_video,
            },
            "content_vectors": {w: [float(x) for x in v] for w, v in self.content_vectors.items()},
        }

    @classmethod
    def from_json(cls, raw: dict) -> "SynthWorld":
        spec_raw = dict(raw["spec"])
        spec_raw["templates"] = tuple(SynthTemplate(**t) for t in spec_raw["templates"])
        for key in ("agents", "actions", "objects"):
            spec_raw[key] = tuple(spec_raw[key])
        spec = SynthSpec(**spec_raw)
        vectors = {w: np.array(v, dtype=np.float64) for w, v in raw["content_vectors"].items()}
        return cls(spec, vectors)


def load_world(path: str) -> SynthWorld:
    with open(path, "r", encoding="utf-8") as handle:
        return SynthWorld.from_json(json.load(handle))


def synth_generate(spec: SynthSpec, seed: int, out_dir: str) -> dict[str, str]:
    """Write train/val/test JSONL files, an embedding file, and the world.

    The same spec and seed produce byte-identical files.  Returns the paths
    keyed by artifact name.
    """
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    world = SynthWorld.create(spec, rng)
    os.makedirs(out_dir, exist_ok=True)

    paths = {}
    for split, count in (("train", spec.train_videos), ("val", spec.val_videos), ("test", spec.test_videos)):
        lines = []
        for i in range(count):
            agent = spec.agents[int(rng.integers(len(spec.agents)))]
            action = spec.actions[int(rng.integers(len(spec.actions)))]
            obj = spec.objects[int(rng.integers(len(spec.objects)))]
            features = world.features_for(agent, action, obj, rng)
            gt_idx = int(rng.integers(len(spec.templates)))
            mapping = {"<agent>": agent, "<action>": action, "<object>": obj}
            caption = render_template(spec.templates[gt_idx], mapping)
            other = [k for k in range(len(spec.templates)) if k != gt_idx]
            order = rng.permutation(len(other))
            exemplars = []
            for pick in order[: spec.exemplars_per_video]:
                tpl = spec.templates[other[int(pick)]]
                ex_mapping = {
                    "<agent>": spec.agents[int(rng.integers(len(spec.agents)))],
                    "<action>": spec.actions[int(rng.integers(len(spec.actions)))],
                    "<object>": spec.objects[int(rng.integers(len(spec.objects)))],
                }
                exemplars.append(render_template(tpl, ex_mapping))
            row = {
                "video_id": f"{split}-{i:05d}",
                "features": [[float(v) for v in frame] for frame in features],
                "captions": [{"text": caption.text, "parse": caption.parse}],
                "exemplars": [{"text": e.text, "parse": e.parse} for e in exemplars],
            }
            lines.append(json.dumps(row, ensure_ascii=False))
        path = os.path.join(out_dir, f"{split}.jsonl")
        write_atomic(path, "\n".join(lines) + "\n")
        paths[split] = path

    # one vector per world word: content words reuse their feature embedding,
    # function words get fresh unit vectors
    emb_lines = []
    for word in spec.content_words():
        vec = world.content_vectors[word]
        emb_lines.append(word + " " + " ".join(repr(float(x)) for x in vec))
    for word in spec.function_words():
        vec = _unit(rng.normal(size=spec.feature_width))
        emb_lines.append(word + " " + " ".join(repr(float(x)) for x in vec))
    emb_path = os.path.join(out_dir, "embeddings.txt")
    write_atomic(emb_path, "\n".join(emb_lines) + "\n")
    paths["embeddings"] = emb_path

    world_path = os.path.join(out_dir, "world.json")
    write_atomic(world_path, json.dumps(world.to_json(), indent=2, sort_keys=True))
    paths["world"] = world_path
    return paths
