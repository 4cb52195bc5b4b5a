#!/usr/bin/env python3
"""Independent word counter for the decoded-snippet fixture.

Reads the lexicon and the snippet texts, counts lexicon entries per group with
a regular-expression scan, and writes the expected counts back next to each
snippet. Matching is case-insensitive over whole words ([a-z0-9-] runs), with
multi-word entries tried before single words and longer entries before shorter
ones at the same position.

    python3 tests/tools/scan_words.py data/lexicon.json tests/data/decoded_snippets.json
"""
import json
import re
import sys


def build_pattern(words):
    ordered = sorted(set(words), key=lambda w: (-len(w.split()), -len(w), w))
    alternatives = [r"\s+".join(re.escape(part) for part in w.split()) for w in ordered]
    return re.compile(r"(?<![a-z0-9-])(" + "|".join(alternatives) + r")(?![a-z0-9-])")


def count(text, groups, pattern):
    totals = {g["group"]: 0 for g in groups}
    for m in pattern.finditer(text.lower()):
        entry = " ".join(m.group(1).split())
        for g in groups:
            if entry in g["words"]:
                totals[g["group"]] += 1
    return totals


def main(lexicon_path, snippets_path):
    with open(lexicon_path) as f:
        lexicon = json.load(f)["dimensions"]
    with open(snippets_path) as f:
        doc = json.load(f)
    for snippet in doc["snippets"]:
        expected = {}
        for dim, groups in lexicon.items():
            words = [w for g in groups for w in g["words"]]
            expected[dim] = count(snippet["text"], groups, build_pattern(words))
        snippet["expected"] = expected
    with open(snippets_path, "w") as f:
        json.dump(doc, f, indent=2, ensure_ascii=False)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
