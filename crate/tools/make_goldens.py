#!/usr/bin/env python3
"""Regenerate the reference fixtures under crates/*/tests/fixtures.

  tokenizer_golden.jsonl  200 sentences encoded by the transformers GPT-2 tokenizer
  engine_golden.json      per-token log-probs of 10 probes under transformers' GPT-2,
                          run in float64 on the seeded random checkpoint written by
                          `cargo run -p gptd --example random_checkpoint`
  welch_golden.json       scipy Welch t-tests

Needs torch, transformers, safetensors, numpy and scipy. No network access is used.
"""

import json
import random
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
ASSETS = ROOT / "assets" / "gpt2"
CORE_FIX = ROOT / "crates" / "core" / "tests" / "fixtures"
CLI_FIX = ROOT / "crates" / "cli" / "tests" / "fixtures"

ENGINE_SEED = 7
ENGINE_SCALE = 0.1

HANDWRITTEN = [
    "Hello world",
    "The boy is reaching for the cookie jar.",
    " leading space",
    "trailing space ",
    "two  spaces   three    four",
    "tab\tseparated\tvalues",
    "line one\nline two\n\nline four",
    "\n\n\n",
    "   ",
    "I can't believe it's not butter; we'll see, they're sure, you've got it, he'd know.",
    "I'M SHOUTING AND IT'S LOUD",
    "don't won't shouldn't ain't y'all o'clock",
    "rock 'n' roll",
    "'quoted' and \"double quoted\"",
    "It costs $1,234.56 (approx.) or 1e-9 units.",
    "Call 555-0199 at 10:30pm on 2024-02-29.",
    "3.14159265358979323846",
    "1234567890123456789012345678901234567890",
    "user@example.com visited https://example.org/path?q=1&r=2#frag",
    "snake_case camelCase PascalCase kebab-case SCREAMING_CASE",
    "fn main() { println!(\"hi\"); }",
    "def f(x): return x**2 if x > 0 else -x",
    "café naïve résumé façade coöperate",
    "日本語のテキスト",
    "Ελληνικά και Русский текст",
    "emoji 🙂 and 🇫🇷 flags and 👨‍👩‍👧 families",
    "dash — en – minus − and ellipsis …",
    "“smart quotes” and ‘single’ ones",
    "non breaking space",
    "zero​width",
    "ALL CAPS SENTENCE WITH NUMBERS 42",
    "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa",
    "!!!???...,,,;;;:::",
    "a b c d e f g h i j k l m n o p q r s t u v w x y z",
    "The quick brown fox jumps over the lazy dog.",
    "uh um the the the boy uh is um",
    "mother's washing dishes and the sink's overflowing",
    "she said , well , I don't know .",
    "hyphenated-words and under_scores and slashes/too",
    "<|endoftext|> is just text here",
    "Mr. Smith and Dr. Jones met at St. Mary's.",
    "#hashtag @mention $TICKER %percent ^caret &amp *star",
    "tokenization’s edge cases",
    "x" * 300,
    "word " * 60,
    "Numbers: 1 22 333 4444 55555 666666",
    "(parenthetical (nested) remarks)",
    "[brackets] {braces} <angles>",
    "back\\slash and forward/slash",
    "a\r\nwindows\r\nline",
]

WORDS = (
    "the a boy girl mother kitchen window sink water cookie jar stool cupboard plate dish "
    "curtain garden path lid floor counter cup is are was were reaching falling drying "
    "overflowing spilling standing holding telling laughing and but or so then because "
    "while she he they it we you I her his their on in at under over into out of up down "
    "not never always maybe quite very really just".split()
)
PUNCT = [".", ",", "!", "?", ";", ":", " -", "'s", "n't", "'re", "'ll"]


def generated_sentences(n, seed=20240229):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        k = rng.randint(1, 18)
        toks = []
        for _ in range(k):
            w = rng.choice(WORDS)
            r = rng.random()
            if r < 0.1:
                w = w.capitalize()
            elif r < 0.13:
                w = w.upper()
            elif r < 0.18:
                w = str(rng.randint(0, 100000))
            toks.append(w)
            if rng.random() < 0.15:
                toks[-1] += rng.choice(PUNCT)
        sep = rng.choice([" ", " ", " ", "  ", "\n", "\t"])
        out.append(sep.join(toks))
    return out


def tokenizer_golden():
    from transformers import GPT2Tokenizer

    # split_special_tokens: an "<|endoftext|>" substring is encoded as plain text.
    tok = GPT2Tokenizer(
        vocab=str(ASSETS / "vocab.json"),
        merges=str(ASSETS / "merges.txt"),
        split_special_tokens=True,
    )
    assert len(tok) == 50257 and tok.encode("Hello world") == [15496, 995]
    sentences = HANDWRITTEN + generated_sentences(200 - len(HANDWRITTEN))
    assert len(sentences) == 200
    lines = []
    for s in sentences:
        ids = tok.encode(s)
        assert tok.decode(ids, clean_up_tokenization_spaces=False) == s, s
        lines.append(json.dumps({"text": s, "ids": ids}, ensure_ascii=False))
    (CORE_FIX / "tokenizer_golden.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return tok


PROBES = [
    "The boy is standing on a stool and reaching for the cookie jar.",
    "Mother is drying a plate while the water overflows from the sink onto the floor.",
    "um the the little girl is uh laughing and she wants a cookie too",
    "There are two children and their mother in the kitchen.",
    "I don't know what he's doing up there; it's going to fall.",
    "Outside the window there is a garden with a path and some bushes.",
    "the curtains are open and it looks like a nice day out",
    "She is not paying attention to the children at all.",
    "Numbers like 1984 and 3.14 also appear in ordinary text, don't they?",
    " ".join(
        [
            "The kitchen scene shows a mother washing dishes at the sink while water spills onto the floor.",
            "Behind her a boy climbs on a wobbly stool to reach a cookie jar in the cupboard,",
            "and his sister stands below with her hand out, asking for one.",
        ]
        * 8
    ),
]


def engine_golden(tok):
    import torch
    from safetensors.torch import load_file
    from transformers import GPT2Config, GPT2LMHeadModel

    with tempfile.TemporaryDirectory() as d:
        subprocess.run(
            ["cargo", "run", "-q", "-p", "gptd", "--example", "random_checkpoint", "--", d, str(ENGINE_SEED), str(ENGINE_SCALE)],
            cwd=ROOT,
            check=True,
        )
        state = load_file(str(Path(d) / "model.safetensors"))
    cfg = GPT2Config(
        vocab_size=50257,
        n_positions=1024,
        n_embd=768,
        n_layer=12,
        n_head=12,
        layer_norm_epsilon=1e-5,
        activation_function="gelu_new",
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        tie_word_embeddings=True,
    )
    model = GPT2LMHeadModel(cfg)
    missing, unexpected = model.transformer.load_state_dict(state, strict=False)
    assert not unexpected, unexpected
    assert all(".attn.bias" in m or "masked_bias" in m for m in missing), missing
    model.tie_weights()
    model = model.double().eval()

    eos = 50256
    probes = []
    total = 0.0
    for text in PROBES:
        ids = tok.encode(text)
        assert 0 < len(ids) < 1024
        x = torch.tensor([[eos] + ids])
        with torch.no_grad():
            logits = model(x).logits[0, :-1]
        lp = torch.log_softmax(logits, dim=-1)
        token_lp = lp[torch.arange(len(ids)), torch.tensor(ids)].tolist()
        nll = -sum(token_lp)
        total += nll
        probes.append({"text": text, "ids": ids, "logprobs": token_lp, "nll": nll})
    out = {
        "reference": f"transformers {__import__('transformers').__version__} GPT2LMHeadModel, float64",
        "config": "gpt2_small",
        "seed": ENGINE_SEED,
        "scale": ENGINE_SCALE,
        "total_nll": total,
        "probes": probes,
    }
    (CORE_FIX / "engine_golden.json").write_text(json.dumps(out, indent=1) + "\n")


def welch_golden():
    from scipy import stats

    rng = np.random.default_rng(11)
    cases = []
    shapes = [(5, 5), (8, 13), (30, 7), (2, 2), (50, 60), (3, 40)]
    for i, (na, nb) in enumerate(shapes):
        a = rng.normal(9.5, 1.0 + 0.3 * i, na)
        b = rng.normal(9.8, 0.5 + 0.2 * i, nb)
        r = stats.ttest_ind(a, b, equal_var=False)
        cases.append({"a": a.tolist(), "b": b.tolist(), "t": float(r.statistic), "df": float(r.df), "p": float(r.pvalue)})
    (CORE_FIX / "welch_golden.json").write_text(json.dumps({"reference": f"scipy {stats.__name__} ttest_ind(equal_var=False)", "cases": cases}, indent=1) + "\n")


def main():
    CORE_FIX.mkdir(parents=True, exist_ok=True)
    CLI_FIX.mkdir(parents=True, exist_ok=True)
    tok = tokenizer_golden()
    welch_golden()
    if "--skip-engine" not in sys.argv:
        engine_golden(tok)


if __name__ == "__main__":
    main()
