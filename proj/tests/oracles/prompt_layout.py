"""Golden prompt renderings, computed without the library.

Budget rule, simulated one token at a time: the sides take turns (left
first) claiming a slot while they still have tokens, so an even split leaves
the odd slot on the left and a short side hands its unused share over.
Intent names are exempt: the query gets whatever the name leaves.

Writes tests/data/golden_vocab.txt and tests/data/prompt_golden.json.
"""

import json
import os

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
WORDS = [f"w{i}" for i in range(80)]
IDS = {w: i + len(SPECIALS) for i, w in enumerate(WORDS)}
TAGS = {"qq": "Zqq", "qa": "Zqa", "qi": "Zqi"}


def token_name(word):
    return f"T{IDS.get(word, 1)}"


def allocate(left, right, budget):
    if left + right <= budget:
        return left, right
    kept = [0, 0]
    have = [left, right]
    turn = 0
    while sum(kept) < budget:
        if kept[turn] < have[turn]:
            kept[turn] += 1
        turn = 1 - turn
    return kept[0], kept[1]


def render(query, other, relation, m, max_len, show_pad):
    budget = max_len - 2 - m
    if relation == "qi":
        if len(other) > budget - 1:
            return None
        keep_left, keep_right = min(len(query), budget - len(other)), len(other)
    else:
        keep_left, keep_right = allocate(len(query), len(other), budget)
    items = ["CLS"] + [token_name(w) for w in query[:keep_left]]
    items += [f"{TAGS[relation]}{j}" for j in range(m)]
    items += [token_name(w) for w in other[:keep_right]] + ["SEP"]
    if show_pad:
        items += ["PAD"] * (max_len - len(items))
    return " ".join(items)


def words(start, count):
    return [WORDS[(start + i) % len(WORDS)] for i in range(count)]


CASES = [
    ("layout example", ["w2", "w3"], ["w4"], "qq", 3, 10, True),
    ("even truncation 50/50", words(0, 50), words(10, 50), "qq", 3, 32, False),
    ("short left hands budget to right", words(0, 3), words(20, 40), "qa", 3, 20, False),
    ("short right hands budget to left", words(30, 40), words(5, 2), "qa", 2, 16, True),
    ("odd budget goes left", words(0, 10), words(40, 10), "qq", 2, 15, False),
    ("intent prompt no truncation", ["w1", "w2", "w3"], ["w10"], "qi", 3, 12, True),
    ("intent name exempt from truncation", words(0, 30), ["w70", "w71"], "qi", 3, 16, False),
    ("intent prompt without relation tokens", ["w5", "w6"], ["w7", "w8"], "qi", 0, 8, True),
    ("exact fit single relation token", words(0, 3), words(3, 3), "qq", 1, 9, True),
    ("unknown words map to UNK", ["w4", "zzz", "w9"], ["qqq"], "qa", 2, 10, True),
]


def main():
    os.makedirs(DATA, exist_ok=True)
    with open(os.path.join(DATA, "golden_vocab.txt"), "w") as f:
        for i, tok in enumerate(SPECIALS + WORDS):
            f.write(f"{tok}\t{i}\n")
    cases = []
    for name, query, other, rel, m, max_len, pad in CASES:
        request = {"query": " ".join(query), "m": m, "max_len": max_len, "show_pad": pad}
        if rel == "qi":
            request["intent"] = " ".join(other)
        else:
            request["partner"] = " ".join(other)
            request["relation"] = rel
        cases.append({"name": name, "request": request, "expected": render(query, other, rel, m, max_len, pad)})
    with open(os.path.join(DATA, "prompt_golden.json"), "w") as f:
        json.dump(cases, f, indent=2)
        f.write("\n")
    for c in cases:
        print(c["name"], "=>", c["expected"])
    print("50/50 split:", allocate(50, 50, 32 - 2 - 3))


if __name__ == "__main__":
    main()
