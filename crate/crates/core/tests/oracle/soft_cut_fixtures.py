"""Builds fixtures/soft_cut_cases.json.

Each case is a synthetic text w1 ... wN whose punctuation positions are
chosen by hand; the expected branch and output follow from those positions
under the 75-word / 60% policy (boundary threshold: 45 words).

    python3 soft_cut_fixtures.py > ../fixtures/soft_cut_cases.json
"""

import json
import sys

CAP = 75
THRESHOLD = 45


def build(total, marks, sep=" "):
    words = []
    for i in range(1, total + 1):
        w = marks.get(i, f"w{i}")
        if i in marks and not marks[i].startswith("w") and marks[i] in {".", "!", "?"}:
            w = f"w{i}{marks[i]}"
        words.append(w)
    return sep.join(words), words


def expect(words):
    if len(words) <= CAP:
        return "unchanged", " ".join(words)
    prefix = words[:CAP]
    periods = [i + 1 for i, w in enumerate(prefix) if w.endswith(".")]
    if periods and periods[-1] >= THRESHOLD:
        return "boundary", " ".join(prefix[: periods[-1]])
    out = " ".join(prefix)
    if out[-1] not in ".!?":
        out += "."
    return "hard", out


def case(cid, total, marks, sep=" ", note=""):
    text, words = build(total, marks, sep)
    branch, output = expect(words)
    return {"id": cid, "note": note, "text": text, "branch": branch, "expected": output}


def main():
    cases = [
        case("short", 10, {10: "."}),
        case("at-cap-no-period", 75, {}),
        case("at-cap-early-period", 75, {30: "."}),
        case("one-over-period-45", 76, {45: "."}, note="exactly at threshold"),
        case("one-over-period-44", 76, {44: "."}, note="one below threshold"),
        case("draft-90-period-60", 90, {60: "."}),
        case("no-punctuation", 100, {}),
        case("question-at-75", 100, {75: "?"}, note="hard cut already terminal"),
        case("exclaim-at-60-only", 100, {60: "!"}, note="only periods count as boundaries"),
        case("exclaim-at-75-period-30", 100, {30: ".", 75: "!"}),
        case("abbreviation-at-50", 100, {50: "Dr."}, note="literal period rule"),
        case("decimal-inside-word", 100, {40: ".", 60: "7.9"}),
        case("decimal-with-period", 100, {60: "7.9."}),
        case("two-periods-20-50", 100, {20: ".", 50: "."}),
        case("two-periods-50-74", 100, {50: ".", 74: "."}),
        case("periods-44-80", 100, {44: ".", 80: "."}),
        case("periods-45-46", 100, {45: ".", 46: "."}),
        case("newlines-and-tabs", 100, {50: "."}, sep="\n\t "),
        case("cap-plus-one-period-75", 76, {75: "."}),
        case("cap-plus-one-period-76", 76, {76: "."}),
        case("period-at-1", 80, {1: "."}),
    ]
    for p in [1, 10, 20, 30, 40, 43, 44, 45, 46, 47, 50, 55, 60, 65, 70, 73, 74, 75, 76, 80]:
        cases.append(case(f"single-period-{p}", 100, {p: "."}))
    for step in [7, 10, 11, 15, 44, 45, 46, 70, 76]:
        cases.append(case(f"every-{step}", 200, {i: "." for i in range(step, 201, step)}))
    json.dump(cases, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
