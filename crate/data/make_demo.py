#!/usr/bin/env python3
"""Regenerates demo.txt (labelled tokens) and demo.gold (unlabelled gold
brackets) from the sentence templates below. Output is deterministic."""

import random

rng = random.Random(7)

NAMES = ["John", "Mary", "Sue", "Bill", "Anna", "Peter", "Kate", "Tom"]
NN1 = ["man", "woman", "dog", "cat", "house", "park", "garden", "letter",
       "doctor", "teacher", "car", "office", "river", "box"]
NN2 = ["men", "dogs", "children", "letters", "books", "cars", "friends"]
JJ = ["old", "small", "red", "happy"]
VT = ["saw", "visited", "found", "watched", "helped", "met"]
VI = ["left", "arrived", "slept", "laughed"]
CS = ["when", "after", "while", "because"]
II = ["in", "with", "near", "behind"]
ADV = ["Yesterday", "Later", "Suddenly"]


def leaf(w, t):
    return f"{w}_{t}"


COMMA = leaf(",", "pco")
DASH = leaf("--", "pda")


def name():
    return ("N2", [leaf(rng.choice(NAMES), "NP1")])


def np(plural=False, adj=False):
    if plural:
        n1 = [leaf(rng.choice(NN2), "NN2")]
        det = leaf("the", "AT")
    else:
        n1 = [leaf(rng.choice(NN1), "NN1")]
        det = rng.choice([leaf("the", "AT"), leaf("a", "AT1")])
    if adj:
        n1.insert(0, leaf(rng.choice(JJ), "JJ"))
    return ("N2", [det, ("N1", n1)])


def pp():
    return ("P2", [leaf(rng.choice(II), "II"), np()])


def vp(obj=None):
    if obj is None:
        return ("V2", [leaf(rng.choice(VI), "VVD")])
    return ("V2", [leaf(rng.choice(VT), "VVD"), obj])


def clause(subj=None, obj=None):
    return ("S", [subj or name(), vp(obj)])


def sub():
    return ("C2", [leaf(rng.choice(CS), "CS"), clause()])


def text(s):
    return ("TxtS", [("Tu", [("T", [s])]), leaf(".", "pfs")])


def comma_apposition(host):
    return ("N2", [host, ("Ta", [COMMA, ("T", [np()]), COMMA])])


def dash_apposition(host, inner):
    return ("N2", [host, ("Ta", [DASH, ("Tu", [("T", [inner])]), DASH])])


def listing():
    return ("N2", [np(), COMMA, np(), leaf("and", "CC"), np()])


# Templates marked * are ones where the commas remove attachment ambiguity.
def t_post_pp():  # *
    return text(("S", [clause(obj=np(plural=rng.random() < 0.5)), COMMA, pp()]))


def t_post_pp_nested():  # *
    obj = ("N2", [np(), pp()])
    return text(("S", [clause(obj=obj), COMMA, pp()]))


def t_post_clause():  # *
    return text(("S", [clause(obj=np()), COMMA, sub()]))


def t_post_clause_pp():  # *
    s = ("S", [name(), ("V2", [vp(np()), pp()])])
    return text(("S", [s, COMMA, sub()]))


def t_pre_clause():
    return text(("S", [sub(), COMMA, clause(subj=np(), obj=np())]))


def t_list():
    return text(clause(obj=listing()))


def t_apposition():
    return text(clause(subj=comma_apposition(np()), obj=np()))


def t_dash():
    return text(clause(subj=dash_apposition(name(), np(adj=True))))


def t_adverb():
    return text(("S", [leaf(rng.choice(ADV), "RR"), COMMA, clause(obj=np())]))


def t_coord():
    return text(("S", [clause(obj=np()), COMMA, leaf("and", "CC"), clause()]))


def t_relative():
    rel = ("N2", [np(), COMMA, leaf("who", "PNQS"), vp(np()), COMMA])
    return text(clause(subj=rel))


PLAN = [
    (t_post_pp, 12), (t_post_pp_nested, 6), (t_post_clause, 10),
    (t_post_clause_pp, 6), (t_pre_clause, 4), (t_list, 5),
    (t_apposition, 4), (t_dash, 3), (t_adverb, 3), (t_coord, 4),
    (t_relative, 3),
]


def tokens(tree):
    if isinstance(tree, str):
        return [tree]
    return [t for c in tree[1] for t in tokens(c)]


def spans(tree, start, out):
    if isinstance(tree, str):
        return start + 1
    end = start
    for c in tree[1]:
        end = spans(c, end, out)
    out.add((start, end))
    return end


def main():
    sentences = [f() for f, n in PLAN for _ in range(n)]
    rng.shuffle(sentences)
    with open("demo.txt", "w") as txt, open("demo.gold", "w") as gold:
        for s in sentences:
            out = set()
            spans(s, 0, out)
            txt.write(" ".join(tokens(s)) + "\n")
            gold.write(" ".join(f"({i} {j})" for i, j in sorted(out)) + "\n")


if __name__ == "__main__":
    main()
