"""Seeded grammar corpus: sentences, long-form text, instruction pairs,
and chat-formatted LM pretraining lines.

The LM corpus mixes plain long-form text with repetition-formatted lines
(prompt + query + marker + query again) so the frozen LM comes out of
pretraining already able to copy an arbitrary word sequence after the
marker - the desk-scale analogue of starting from an instruction-tuned
base model.
"""

from __future__ import annotations

import os

import numpy as np

REPETITION_PROMPT = ("Reproduce the user's exact query or statement "
                     "without any interpretation or modification.")
INSTRUCTION_PROMPT = "respond to the question"
ANSWER_MARKER = "answer"

DETS = ["the", "a"]
ADJS = ["small", "large", "quiet", "bright", "old", "young",
        "quick", "slow", "warm", "cold", "heavy", "dark"]
NOUNS = ["cat", "dog", "bird", "fox", "horse", "farmer", "teacher", "child",
         "doctor", "sailor", "river", "garden", "house", "market", "forest",
         "mountain", "village", "kitchen", "bridge", "tower", "road", "field",
         "boat", "wagon"]
VERBS = ["sees", "finds", "follows", "carries", "watches", "visits",
         "paints", "cleans", "builds", "opens", "closes", "moves",
         "guards", "holds", "pushes", "pulls"]
ADVERBS = ["slowly", "quickly", "quietly", "carefully", "happily",
           "sadly", "gently", "bravely"]
PREPS = ["near", "under", "beside", "behind"]

CONTENT_WORDS = sorted(set(DETS + ADJS + NOUNS + VERBS + ADVERBS + PREPS))


def _noun_phrase(rng):
    words = [DETS[rng.integers(len(DETS))]]
    if rng.random() < 0.5:
        words.append(ADJS[rng.integers(len(ADJS))])
    words.append(NOUNS[rng.integers(len(NOUNS))])
    return words


def sample_sentence(rng) -> str:
    words = _noun_phrase(rng)
    words.append(VERBS[rng.integers(len(VERBS))])
    words.extend(_noun_phrase(rng))
    if rng.random() < 0.4:
        words.append(PREPS[rng.integers(len(PREPS))])
        words.extend(_noun_phrase(rng))
    if rng.random() < 0.4:
        words.append(ADVERBS[rng.integers(len(ADVERBS))])
    return " ".join(words)


def sample_unique_sentences(rng, n: int) -> list[str]:
    seen, out = set(), []
    while len(out) < n:
        s = sample_sentence(rng)
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def sample_word_string(rng, min_len=3, max_len=12) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return " ".join(CONTENT_WORDS[i] for i in rng.integers(len(CONTENT_WORDS), size=n))


def sample_instruction_pair(rng):
    noun = NOUNS[rng.integers(len(NOUNS))]
    other = NOUNS[rng.integers(len(NOUNS))]
    prep = PREPS[rng.integers(len(PREPS))]
    kind = rng.integers(3)
    if kind == 0:
        query = f"where is the {noun}"
        response = f"the {noun} is {prep} the {other}"
    elif kind == 1:
        query = f"describe the {noun}"
        response = f"the {noun} is {ADJS[rng.integers(len(ADJS))]}"
    else:
        query = f"who {VERBS[rng.integers(len(VERBS))]} the {noun}"
        response = f"the {NOUNS[rng.integers(len(NOUNS))]} "\
                   f"{VERBS[rng.integers(len(VERBS))]} the {noun}"
    return query, response


def chat_line(system_prompt: str, query: str, response: str) -> str:
    return f"{system_prompt} {query} {ANSWER_MARKER} {response}"


class CorpusFiles:
    NAMES = ("lm_corpus.txt", "longform.txt", "instructions.txt",
             "repetition_train.txt", "repetition_heldout.txt")

    def __init__(self, outdir):
        self.outdir = outdir
        self.lm_corpus = os.path.join(outdir, "lm_corpus.txt")
        self.longform = os.path.join(outdir, "longform.txt")
        self.instructions = os.path.join(outdir, "instructions.txt")
        self.repetition_train = os.path.join(outdir, "repetition_train.txt")
        self.repetition_heldout = os.path.join(outdir, "repetition_heldout.txt")
        self.vocab = os.path.join(outdir, "vocab.txt")

    def all_present(self):
        return all(os.path.exists(os.path.join(self.outdir, n)) for n in self.NAMES)


def generate_corpus(outdir, seed: int, n_sentences=2200, n_heldout=200,
                    n_longform=1200, n_instructions=300,
                    n_lm_repetition=1800, n_lm_copy=1200,
                    longform_sentences=(3, 6)) -> CorpusFiles:
    """Write every corpus file deterministically from the seed."""
    rng = np.random.default_rng(seed)
    os.makedirs(outdir, exist_ok=True)
    files = CorpusFiles(outdir)

    sentences = sample_unique_sentences(rng, n_sentences + n_heldout)
    train, heldout = sentences[:n_sentences], sentences[n_sentences:]

    _write(files.repetition_train, train)
    _write(files.repetition_heldout, heldout)

    lo, hi = longform_sentences
    longform = [" ".join(sample_sentence(rng) for _ in range(int(rng.integers(lo, hi + 1))))
                for _ in range(n_longform)]
    _write(files.longform, longform)

    pairs = [sample_instruction_pair(rng) for _ in range(n_instructions)]
    _write(files.instructions, [f"{q}\t{r}" for q, r in pairs])

    lm_lines = list(longform)
    # copy-format lines over both grammar sentences and arbitrary word strings
    for i in range(n_lm_repetition):
        q = train[int(rng.integers(len(train)))]
        lm_lines.append(chat_line(REPETITION_PROMPT, q, q))
    for i in range(n_lm_copy):
        q = sample_word_string(rng)
        lm_lines.append(chat_line(REPETITION_PROMPT, q, q))
    for q, r in pairs:
        lm_lines.append(chat_line(INSTRUCTION_PROMPT, q, r))
    order = rng.permutation(len(lm_lines))
    _write(files.lm_corpus, [lm_lines[i] for i in order])
    return files


def _write(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]
