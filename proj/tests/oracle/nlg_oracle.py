#!/usr/bin/env python3
"""Independent oracle for the metric golden table.

Writes tests/oracle/golden_metrics.json. The C++ tests compare against that
file; rerun this script only when the corpus below changes.

Independence from the C++ code:
  * tokenization is a single regular expression rather than a char scanner;
  * METEOR alignment is exhaustive enumeration (no pruning);
  * stems come from nltk's PorterStemmer in ORIGINAL_ALGORITHM mode;
  * corpus BLEU is recomputed with nltk.translate.bleu_score.corpus_bleu;
  * classification metrics and AUC come from scikit-learn.
"""

import json
import math
import re
import sys
from collections import Counter
from pathlib import Path

from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import corpus_bleu
from sklearn.metrics import accuracy_score, precision_recall_fscore_support, roc_auc_score

STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
ALPHA, BETA, GAMMA = 0.9, 3.0, 0.5

TOKEN_RE = re.compile(
    r"[a-z0-9]+(?:(?:(?<=[0-9])[.,](?=[0-9])|(?<=[a-z0-9])['-](?=[a-z0-9]))[a-z0-9]+)*|\S"
)

# (candidate, reference). Phrasings exercise stems (enhancing/enhancement,
# lesions/lesion), numbers with inner dots, hyphens, repeated words, reordering
# and empty overlap.
PAIRS = [
    ("There is a 1.78 cm exophytic hypoattenuating lesion in the left kidney demonstrating enhancement, consistent with a cyst.",
     "There is a 1.78 cm exophytic hypoattenuating lesion in the left kidney demonstrating enhancement, consistent with a cyst."),
    ("There is a 2 cm lesion in the right kidney.",
     "There is a 2.1 cm lesion in the right kidney."),
    ("Left kidney: 3.6 x 3.4 x 2.9 cm exophytic, complex cystic and solid mass.",
     "Left renal lower pole 3.6 x 3.4 x 2.9 cm exophytic complex cystic and solid mass, suspicious for renal cell carcinoma."),
    ("Enhancing lesions in the right kidney.",
     "An enhancement lesion is seen in the right kidney."),
    ("the the the the",
     "the cat"),
    ("Simple cyst.",
     "Simple renal cyst in the left kidney."),
    ("No renal abnormality features specified.",
     "There is a hyperattenuating lesion in the right kidney, consistent with a cyst."),
    ("Hypodense lesion, likely cyst, measuring 1.2 cm.",
     "Hypoattenuating lesion measuring 1.2 cm, likely a cyst."),
    ("kidney left the in lesion",
     "lesion in the left kidney"),
    ("A well-circumscribed non-enhancing cyst in the upper pole.",
     "Well-circumscribed cyst without enhancement in the upper pole."),
    ("Bilateral renal cysts, the largest measuring 4.5 cm on the left.",
     "Bilateral renal cysts, largest on the left measuring 4.5 cm."),
    ("Mass suspicious for tumor.",
     "Solid mass suspicious for tumor in the right kidney."),
    ("There is an isoattenuating lesion in the left kidney demonstrating no enhancement.",
     "There is an isoattenuating lesion in the left kidney demonstrating enhancement."),
    ("Right kidney: subcentimeter hypodensity, too small to characterize.",
     "Subcentimeter hypodensity in the right kidney, too small to characterize."),
    ("Cystic mass with thick septations.",
     "Complex cystic mass with thickened septation."),
    ("Normal kidneys.",
     "Kidneys are normal in size."),
    ("Exophytic lesion arising from the left kidney, 2.4 cm.",
     "A 2.4 cm exophytic lesion arises from the left kidney."),
    ("Lesion lesion lesion in kidney.",
     "Lesion in the kidney."),
    ("Hyperdense cyst measuring 8 mm.",
     "Hyperattenuating cyst, 8 mm, in the right kidney."),
    ("abc def ghi",
     "xyz uvw"),
]


def tokenize(text):
    return TOKEN_RE.findall(text.lower())


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def corpus_bleu_manual(cands, refs, max_n):
    matched = [0] * max_n
    total = [0] * max_n
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    for c, r in zip(cands, refs):
        for n in range(1, max_n + 1):
            cc = Counter(ngrams(c, n))
            rc = Counter(ngrams(r, n))
            matched[n - 1] += sum(min(v, rc[g]) for g, v in cc.items())
            total[n - 1] += sum(cc.values())
    if c_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if c_len >= r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_p)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = table[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def rouge_l(c, r):
    l = lcs(c, r)
    if l == 0:
        return 0.0
    p, rec = l / len(c), l / len(r)
    return 2 * p * rec / (p + rec)


def stem(w):
    return STEMMER.stem(w) if re.fullmatch(r"[a-z]+", w) else w


def all_alignments(c, r):
    """Every one-to-one partial matching with exact or stem-equal pairs."""
    cs = [stem(w) for w in c]
    rs = [stem(w) for w in r]
    options = []
    for i in range(len(c)):
        opts = [None]
        for j in range(len(r)):
            if c[i] == r[j]:
                opts.append((j, True))
            elif cs[i] == rs[j]:
                opts.append((j, False))
        options.append(opts)

    def rec(i, used, acc):
        if i == len(c):
            yield list(acc)
            return
        for o in options[i]:
            if o is not None and o[0] in used:
                continue
            if o is not None:
                used.add(o[0])
            acc.append(o)
            yield from rec(i + 1, used, acc)
            acc.pop()
            if o is not None:
                used.discard(o[0])

    yield from rec(0, set(), [])


def chunks_of(alignment):
    pairs = [(i, o[0]) for i, o in enumerate(alignment) if o is not None]
    n = 0
    prev = None
    for i, j in pairs:
        if prev is None or not (i == prev[0] + 1 and j == prev[1] + 1):
            n += 1
        prev = (i, j)
    return n


def meteor(c, r):
    best = None
    for a in all_alignments(c, r):
        exact = sum(1 for o in a if o is not None and o[1])
        matches = sum(1 for o in a if o is not None)
        key = (exact, matches, -chunks_of(a))
        if best is None or key > best:
            best = key
    exact, m, neg_chunks = best
    if m == 0:
        return 0.0, best
    p, rec = m / len(c), m / len(r)
    fmean = p * rec / (ALPHA * p + (1 - ALPHA) * rec)
    penalty = GAMMA * ((-neg_chunks) / m) ** BETA
    return fmean * (1 - penalty), best


# Classification columns: 20 instances each. "unknown" truth is excluded;
# "unknown" predictions count as wrong.
CLASSIFICATION = {
    "cyst": {
        "truth": ["true", "true", "false", "true", "false", "false", "true", "true", "false", "true",
                  "false", "true", "true", "false", "false", "true", "false", "true", "true", "false"],
        "pred":  ["true", "false", "false", "true", "true", "false", "true", "true", "false", "false",
                  "false", "true", "unknown", "false", "true", "true", "false", "true", "false", "false"],
    },
    "attenuation": {
        "truth": ["hypoattenuating", "hyperattenuating", "isoattenuating", "unknown", "hypoattenuating",
                  "hypoattenuating", "hyperattenuating", "unknown", "isoattenuating", "hypoattenuating",
                  "hyperattenuating", "hypoattenuating", "unknown", "hyperattenuating", "hypoattenuating",
                  "isoattenuating", "hypoattenuating", "hyperattenuating", "unknown", "hypoattenuating"],
        "pred":  ["hypoattenuating", "hypoattenuating", "isoattenuating", "hypoattenuating", "unknown",
                  "hypoattenuating", "hyperattenuating", "isoattenuating", "hypoattenuating", "hypoattenuating",
                  "hyperattenuating", "hyperattenuating", "unknown", "hyperattenuating", "hypoattenuating",
                  "hypoattenuating", "hypoattenuating", "unknown", "hyperattenuating", "hypoattenuating"],
    },
    "position": {
        "truth": ["left", "right", "left", "left", "right", "right", "left", "unknown", "left", "right",
                  "left", "right", "left", "right", "left", "left", "right", "right", "left", "right"],
        "pred":  ["left", "right", "right", "left", "right", "left", "left", "left", "unknown", "right",
                  "left", "right", "left", "right", "right", "left", "right", "right", "left", "left"],
    },
}

# Scores of the positive class (binary) with deliberate ties.
AUC_CASES = {
    "binary_ties": {
        "labels": [1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0],
        "scores": [0.9, 0.4, 0.35, 0.8, 0.4, 0.1, 0.7, 0.65, 0.2, 0.4,
                   0.3, 0.95, 0.5, 0.5, 0.6, 0.85, 0.05, 0.75, 0.3, 0.4],
    },
}

# One-vs-rest macro AUC over the known classes of a 3-class column; rows with
# unknown truth are dropped. Scores are per-class probabilities.
MULTICLASS_AUC = {
    "classes": ["hypoattenuating", "hyperattenuating", "isoattenuating"],
    "truth": CLASSIFICATION["attenuation"]["truth"],
    "scores": [
        [0.7, 0.2, 0.1], [0.3, 0.5, 0.2], [0.2, 0.2, 0.6], [0.4, 0.3, 0.3], [0.5, 0.25, 0.25],
        [0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4], [0.45, 0.1, 0.45], [0.8, 0.1, 0.1],
        [0.2, 0.6, 0.2], [0.4, 0.5, 0.1], [0.33, 0.33, 0.34], [0.1, 0.7, 0.2], [0.55, 0.15, 0.3],
        [0.3, 0.2, 0.5], [0.6, 0.2, 0.2], [0.25, 0.45, 0.3], [0.2, 0.5, 0.3], [0.5, 0.5, 0.0],
    ],
}

SIZE_CASE = {
    "truth": [1.78, 3.2, None, 0.5, 2.0, None, 4.1, 1.2, 0.8, 2.6],
    "pred":  [1.78, 3.0, 2.2, None, 2.5, None, 4.1, 1.0, 1.1, None],
}


def classification(truth, pred):
    keep = [i for i, t in enumerate(truth) if t != "unknown"]
    t = [truth[i] for i in keep]
    p = [pred[i] for i in keep]
    labels = sorted(set(t))
    prec, rec, f1, _ = precision_recall_fscore_support(t, p, labels=labels, average=None, zero_division=0)
    return {
        "accuracy": accuracy_score(t, p),
        "precision": float(sum(prec) / len(labels)),
        "recall": float(sum(rec) / len(labels)),
        "f1": float(sum(f1) / len(labels)),
    }


def multiclass_auc(case):
    rows = [i for i, t in enumerate(case["truth"]) if t != "unknown"]
    aucs = []
    for k, cls in enumerate(case["classes"]):
        y = [1 if case["truth"][i] == cls else 0 for i in rows]
        s = [case["scores"][i][k] for i in rows]
        if 0 < sum(y) < len(y):
            aucs.append(roc_auc_score(y, s))
    return float(sum(aucs) / len(aucs))


def size_mse(truth, pred):
    known = [i for i, t in enumerate(truth) if t is not None]
    scored = [i for i in known if pred[i] is not None]
    mse = sum((truth[i] - pred[i]) ** 2 for i in scored) / len(scored)
    return mse, len(scored) / len(known)


def porter_words():
    words = set()
    # Vocabulary of the library's own headers (prompt templates, comments).
    for header in sorted((Path(__file__).resolve().parents[2] / "include" / "renalct").glob("*.hpp")):
        words.update(re.findall(r"[a-z]+", header.read_text(encoding="utf-8").lower()))
    words.update([
        "caresses", "ponies", "ties", "caress", "cats", "feed", "agreed", "plastered", "bled", "motoring",
        "sing", "conflated", "troubled", "sized", "hopping", "tanned", "falling", "hissing", "fizzed",
        "failing", "filing", "happy", "sky", "relational", "conditional", "rational", "valenci",
        "hesitanci", "digitizer", "conformabli", "radicalli", "differentli", "vileli", "analogousli",
        "vietnamization", "predication", "operator", "feudalism", "decisiveness", "hopefulness",
        "callousness", "formaliti", "sensitiviti", "sensibiliti", "triplicate", "formative", "formalize",
        "electriciti", "electrical", "hopeful", "goodness", "revival", "allowance", "inference", "airliner",
        "gyroscopic", "adjustable", "defensible", "irritant", "replacement", "adjustment", "dependent",
        "adoption", "homologou", "communism", "activate", "angulariti", "homologous", "effective",
        "bowdlerize", "probate", "rate", "cease", "controll", "roll", "generalizations", "oscillators",
        "enhancing", "enhancement", "enhanced", "hypoattenuating", "hyperattenuating", "cystic", "cysts",
        "lesions", "kidneys", "renal", "septations", "septation", "thickened", "measuring", "exophytic",
        "endophytic", "subcentimeter", "hypodensity", "characterize", "a", "is", "as", "by", "yes",
    ])
    return sorted(words)


def main():
    out_path = Path(__file__).with_name("golden_metrics.json")
    cands = [tokenize(c) for c, _ in PAIRS]
    refs = [tokenize(r) for _, r in PAIRS]

    pairs = []
    for (c_text, r_text), c, r in zip(PAIRS, cands, refs):
        m, (exact, matches, neg_chunks) = meteor(c, r)
        pairs.append({
            "candidate": c_text,
            "reference": r_text,
            "candidate_tokens": c,
            "reference_tokens": r,
            "rouge_l": rouge_l(c, r),
            "meteor": m,
            "meteor_exact": exact,
            "meteor_matches": matches,
            "meteor_chunks": -neg_chunks,
            "bleu1_sentence": corpus_bleu_manual([c], [r], 1),
        })

    bleu1 = corpus_bleu_manual(cands, refs, 1)
    bleu4 = corpus_bleu_manual(cands, refs, 4)
    # Cross-check against nltk on the same tokens (single reference each).
    # nltk floors each sentence's n-gram denominator at 1, which only matters
    # for candidates shorter than n, so BLEU-4 is compared on the subset of
    # candidates with at least four tokens.
    nltk_b1 = corpus_bleu([[r] for r in refs], cands, weights=(1.0,))
    assert abs(nltk_b1 - bleu1) < 1e-12, (nltk_b1, bleu1)
    long_idx = [i for i, c in enumerate(cands) if len(c) >= 4]
    sub_c = [cands[i] for i in long_idx]
    sub_r = [refs[i] for i in long_idx]
    nltk_b4 = corpus_bleu([[r] for r in sub_r], sub_c, weights=(0.25, 0.25, 0.25, 0.25))
    assert abs(nltk_b4 - corpus_bleu_manual(sub_c, sub_r, 4)) < 1e-12

    cls = {name: classification(col["truth"], col["pred"]) for name, col in CLASSIFICATION.items()}
    auc = {name: float(roc_auc_score(case["labels"], case["scores"])) for name, case in AUC_CASES.items()}
    mse, coverage = size_mse(SIZE_CASE["truth"], SIZE_CASE["pred"])

    words = porter_words()
    golden = {
        "generator": "tests/oracle/nlg_oracle.py",
        "tokenizer": "nlg-tok-v1",
        "meteor_params": {"alpha": ALPHA, "beta": BETA, "gamma": GAMMA},
        "pairs": pairs,
        "corpus": {
            "bleu1": bleu1,
            "bleu4": bleu4,
            "rouge_l": sum(p["rouge_l"] for p in pairs) / len(pairs),
            "meteor": sum(p["meteor"] for p in pairs) / len(pairs),
        },
        "classification": {name: {**CLASSIFICATION[name], "expected": cls[name]} for name in CLASSIFICATION},
        "auc": {name: {**AUC_CASES[name], "expected": auc[name]} for name in AUC_CASES},
        "multiclass_auc": {**MULTICLASS_AUC, "expected": multiclass_auc(MULTICLASS_AUC)},
        "size": {**SIZE_CASE, "expected_mse": mse, "expected_coverage": coverage},
        "porter": {w: STEMMER.stem(w) for w in words},
    }
    out_path.write_text(json.dumps(golden, indent=1, sort_keys=False) + "\n", encoding="utf-8")
    print(f"wrote {out_path} ({len(pairs)} pairs, {len(words)} porter words)", file=sys.stderr)


if __name__ == "__main__":
    main()
