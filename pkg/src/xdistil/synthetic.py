"""Deterministic synthetic tasks for desk-scale experiments.

The bundled classification task is a 3-class sentence-pair problem over
a closed token inventory. Every content token belongs to one of three
latent topics (index mod 3, never revealed in the token text). Each
sentence is drawn with a strict-majority topic plus one off-topic
distractor, and the label is the relation between the two sides:

    label = (topic(s2) - topic(s1)) mod 3

so the same s2 gets different labels depending on s1: the model has to
compare the segments, not classify one of them. Token topics must be
learned from data. Sentences are whitespace-joined tokens, so files
round-trip through the stock tokenizer unchanged.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from .transformer import SPECIAL_TOKENS

N_CONTENT_TOKENS = 120
N_TOPICS = 3
MIN_LEN, MAX_LEN = 4, 6


def content_tokens(n: int = N_CONTENT_TOKENS) -> list[str]:
    return [f"w{i:03d}" for i in range(n)]


def token_topic(i: int) -> int:
    return i % N_TOPICS


def vocab_tokens(n: int = N_CONTENT_TOKENS) -> list[str]:
    return list(SPECIAL_TOKENS) + content_tokens(n)


def _sample_sentence_ids(rng: np.random.Generator, topic: int,
                         n_tokens: int) -> list[int]:
    k = int(rng.integers(MIN_LEN, MAX_LEN + 1))
    on_topic = [i for i in range(n_tokens) if token_topic(i) == topic]
    off_topic = [i for i in range(n_tokens) if token_topic(i) != topic]
    ids = [on_topic[int(j)] for j in rng.choice(len(on_topic), size=k - 1, replace=False)]
    ids.append(off_topic[int(rng.integers(0, len(off_topic)))])
    rng.shuffle(ids)
    return ids


def make_example(rng: np.random.Generator, label: int,
                 n_tokens: int = N_CONTENT_TOKENS) -> tuple[str, str, int]:
    if not 0 <= label < N_TOPICS:
        raise ValueError(f"label must be in [0, {N_TOPICS}), got {label}")
    toks = content_tokens(n_tokens)
    t1 = int(rng.integers(0, N_TOPICS))
    t2 = (t1 + label) % N_TOPICS
    s1 = " ".join(toks[i] for i in _sample_sentence_ids(rng, t1, n_tokens))
    s2 = " ".join(toks[i] for i in _sample_sentence_ids(rng, t2, n_tokens))
    return s1, s2, label


def generate_examples(seed: int, n: int,
                      n_tokens: int = N_CONTENT_TOKENS) -> list[tuple[str, str, int]]:
    """Balanced, deterministic example list."""
    rng = np.random.default_rng(seed)
    return [make_example(rng, i % N_TOPICS, n_tokens) for i in range(n)]


def generate_task(
    out_dir: str,
    seed: int = 0,
    n_labeled: int = 2000,
    n_transfer: int = 20000,
    n_eval: int = 600,
    n_tokens: int = N_CONTENT_TOKENS,
) -> dict[str, str]:
    """Write the bundled task to disk; returns the file paths."""
    from .data import write_labeled, write_pairs

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "vocab": os.path.join(out_dir, "vocab.txt"),
        "train": os.path.join(out_dir, "train.tsv"),
        "eval": os.path.join(out_dir, "eval.tsv"),
        "transfer_pairs": os.path.join(out_dir, "transfer.tsv"),
        "corpus": os.path.join(out_dir, "corpus.txt"),
    }
    with open(paths["vocab"], "w", encoding="utf-8") as f:
        for tok in vocab_tokens(n_tokens):
            f.write(tok + "\n")

    train = generate_examples(seed, n_labeled, n_tokens)
    heldout = generate_examples(seed + 1, n_eval, n_tokens)
    transfer = generate_examples(seed + 2, n_transfer, n_tokens)
    write_labeled(paths["train"], train)
    write_labeled(paths["eval"], heldout)
    write_pairs(paths["transfer_pairs"], [(a, b) for a, b, _ in transfer])
    with open(paths["corpus"], "w", encoding="utf-8") as f:
        for a, b, _ in transfer:
            f.write(a + "\n")
            f.write(b + "\n")
    return paths


def generate_swap_assets(
    out_dir: str,
    teacher_dim: int,
    seed: int = 0,
    n_tokens: int = N_CONTENT_TOKENS,
) -> dict[str, str]:
    """A second-vocabulary variant of the task plus a wide embedding table.

    Mirrors the cross-vocabulary transfer setup: the same task structure
    over renamed tokens, and a teacher-width embedding matrix for the new
    vocabulary stored in the named-tensor checkpoint format.
    """
    from .checkpoint import save_tensors
    from .data import write_labeled

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    new_tokens = list(SPECIAL_TOKENS) + [f"m{i:03d}" for i in range(n_tokens)]
    paths = {
        "new_vocab": os.path.join(out_dir, "vocab_multi.txt"),
        "train": os.path.join(out_dir, "train_multi.tsv"),
        "embeddings": os.path.join(out_dir, "emb_multi.xdtc"),
    }
    with open(paths["new_vocab"], "w", encoding="utf-8") as f:
        for tok in new_tokens:
            f.write(tok + "\n")
    examples = generate_examples(seed + 3, 600, n_tokens)
    renamed = [(a.replace("w", "m"), b.replace("w", "m"), y) for a, b, y in examples]
    write_labeled(paths["train"], renamed)
    emb = rng.normal(0.0, 0.02, size=(len(new_tokens), teacher_dim)).astype(np.float32)
    save_tensors(paths["embeddings"], {"embeddings.word": emb}, config_text="")
    return paths


def generate_ner(
    out_path: str,
    seed: int = 0,
    n_sentences: int = 200,
    n_tokens: int = N_CONTENT_TOKENS,
) -> str:
    """Token-level variant: topic-0 tokens are single-token entities."""
    rng = np.random.default_rng(seed)
    toks = content_tokens(n_tokens)
    with open(out_path, "w", encoding="utf-8") as f:
        for _ in range(n_sentences):
            topic = int(rng.integers(0, N_TOPICS))
            ids = _sample_sentence_ids(rng, topic, n_tokens)
            for i in ids:
                tag = "B-ENT" if token_topic(i) == 0 else "O"
                f.write(f"{toks[i]}\t{tag}\n")
            f.write("\n")
    return out_path


def main(argv: Optional[list[str]] = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Generate the bundled synthetic task")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--labeled", type=int, default=2000)
    parser.add_argument("--transfer", type=int, default=20000)
    parser.add_argument("--eval", type=int, default=600)
    args = parser.parse_args(argv)
    paths = generate_task(args.out_dir, seed=args.seed, n_labeled=args.labeled,
                          n_transfer=args.transfer, n_eval=args.eval)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
