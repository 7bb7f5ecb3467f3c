"""Independent reference BLEU used once to freeze fixture scores.

Run from the repo root:  python3 tests/fixtures/gen_bleu_fixtures.py

Deliberately written differently from the package implementation: exact
rational arithmetic for the precisions (fractions.Fraction), dict-based
n-gram counting, and a literal transcription of the corpus-BLEU formula.
"""

import json
import math
import random
from fractions import Fraction
from pathlib import Path


def ngrams(seq, n):
    table = {}
    for i in range(len(seq) - n + 1):
        g = tuple(seq[i : i + n])
        table[g] = table.get(g, 0) + 1
    return table


def reference_bleu(cands, refs, max_n=4, smoothing=True):
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = 0
    r_len = 0
    for cand, ref in zip(cands, refs):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cn = ngrams(cand, n)
            rn = ngrams(ref, n)
            matches[n - 1] += sum(min(v, rn.get(g, 0)) for g, v in cn.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    precisions = []
    for n in range(max_n):
        m = matches[n] + (1 if smoothing and n >= 1 else 0)
        t = totals[n] + (1 if smoothing and n >= 1 else 0)
        precisions.append(Fraction(m, t) if t > 0 else Fraction(0))
    if c_len == 0 or any(p == 0 for p in precisions):
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * geo


def build_corpora():
    rnd = random.Random(20240917)
    corpora = {}

    # partial overlap: references with a few substituted / dropped tokens
    refs, cands = [], []
    for _ in range(40):
        n = rnd.randint(4, 12)
        ref = [rnd.randint(3, 40) for _ in range(n)]
        cand = list(ref)
        for j in range(len(cand)):
            if rnd.random() < 0.2:
                cand[j] = rnd.randint(3, 40)
        if rnd.random() < 0.3 and len(cand) > 4:
            cand = cand[:-1]
        refs.append(ref)
        cands.append(cand)
    corpora["partial_overlap"] = (cands, refs)

    # short candidates: brevity penalty dominates
    refs, cands = [], []
    for _ in range(30):
        n = rnd.randint(6, 14)
        ref = [rnd.randint(3, 25) for _ in range(n)]
        cands.append(ref[: max(2, n // 2)])
        refs.append(ref)
    corpora["brevity_heavy"] = (cands, refs)

    # long candidates: no brevity penalty, diluted precision
    refs, cands = [], []
    for _ in range(30):
        n = rnd.randint(4, 9)
        ref = [rnd.randint(3, 25) for _ in range(n)]
        cands.append(ref + [rnd.randint(3, 25) for _ in range(3)])
        refs.append(ref)
    corpora["padded_tail"] = (cands, refs)

    # shuffled tokens: unigrams match, higher orders mostly break
    refs, cands = [], []
    for _ in range(25):
        n = rnd.randint(5, 10)
        ref = [rnd.randint(3, 30) for _ in range(n)]
        cand = list(ref)
        rnd.shuffle(cand)
        refs.append(ref)
        cands.append(cand)
    corpora["shuffled"] = (cands, refs)

    # repeated tokens: clipping matters
    refs, cands = [], []
    for _ in range(20):
        n = rnd.randint(4, 8)
        ref = [rnd.randint(3, 8) for _ in range(n)]
        cand = [ref[rnd.randrange(n)] for _ in range(n)]
        refs.append(ref)
        cands.append(cand)
    corpora["repeats_clipping"] = (cands, refs)
    return corpora


def main():
    out = {}
    for name, (cands, refs) in build_corpora().items():
        out[name] = {
            "candidates": cands,
            "references": refs,
            "bleu_smoothed": reference_bleu(cands, refs, smoothing=True),
            "bleu_unsmoothed": reference_bleu(cands, refs, smoothing=False),
        }
    path = Path(__file__).parent / "bleu_fixtures.json"
    path.write_text(json.dumps(out, indent=1))
    for name, rec in out.items():
        print(f"{name}: smoothed={rec['bleu_smoothed']:.4f} "
              f"unsmoothed={rec['bleu_unsmoothed']:.4f}")


if __name__ == "__main__":
    main()
