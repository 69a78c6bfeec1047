"""Driver for the synthetic benchmark runs used by the acceptance suite."""

import os
import time
from dataclasses import dataclass

import numpy as np

from smcg import data as D
from smcg import train as TR

# one training setup shared by every configuration in a seed's comparison
# per-sequence loss sums shift the caption/syntax scale balance relative
# to the published setup, so the syntax-reconstruction weight is calibrated
# down for this task; learning rate suits the unnormalized baselines too
BENCH_OVERRIDES = dict(
    hidden=64,
    word_emb=32,
    syntax_emb=32,
    attn=32,
    batch_size=32,
    epochs=12,
    lr=3e-3,
    eta=0.5,
    eval_every=3,
    eval_videos=30,
    max_syntax_len=60,
)

CONFIGS = ("caption-baseline", "concat-baseline", "none", "all")


@dataclass
class BenchRun:
    ablation: str
    avg_ted: float
    avg_cos: float
    content_recall: float
    train_seconds: float
    history: list


def run_benchmark_seed(seed: int, work_dir: str, configs=CONFIGS, epochs: int | None = None) -> dict[str, BenchRun]:
    """Generate the default synthetic world for one seed and train each config."""
    data_dir = os.path.join(work_dir, f"seed{seed}")
    spec = D.SynthSpec()
    paths = D.synth_generate(spec, seed=seed, out_dir=data_dir)
    train_insts = D.load_instances(paths["train"])
    val_insts = D.load_instances(paths["val"])
    test_insts = D.load_instances(paths["test"])
    word_vocab, syntax_vocab = D.build_vocabularies(train_insts)
    world = D.load_world(paths["world"])
    table = D.load_embeddings(paths["embeddings"])

    results: dict[str, BenchRun] = {}
    for ablation in configs:
        overrides = dict(BENCH_OVERRIDES)
        if epochs is not None:
            overrides["epochs"] = epochs
        config = TR.TrainConfig(seed=seed, **overrides).apply_ablation(ablation)
        start = time.time()
        outcome = TR.train_run(
            train_insts, val_insts, word_vocab, syntax_vocab, config,
            world=world, embeddings=table,
        )
        elapsed = time.time() - start
        evaluation = TR.evaluate_generation(
            outcome.model, test_insts, word_vocab, syntax_vocab, config,
            world=world, embeddings=table,
        )
        results[ablation] = BenchRun(
            ablation=ablation,
            avg_ted=evaluation.avg_ted,
            avg_cos=evaluation.avg_cos,
            content_recall=evaluation.content_recall,
            train_seconds=elapsed,
            history=outcome.history,
        )
    return results
