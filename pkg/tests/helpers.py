"""Dataset builders shared by the test modules."""

from __future__ import annotations

import random

from semcache_testgen import Document, QAPair, VariationGroup, normalize_question

VOCAB = (
    "what how when does is the a for of my unit report assessment assignment word limit "
    "background aims method section reference scholarly ai generative late penalty group "
    "presentation minutes marks due extension form"
).split()


def random_groups(rng: random.Random, n_groups: int, max_variations: int = 4) -> list[VariationGroup]:
    """Groups over a small vocabulary so that token overlap (and thus
    similarity) between groups is frequent; variations are token edits of
    the original."""
    groups = []
    for gi in range(n_groups):
        base = rng.sample(VOCAB, rng.randint(3, 8))
        members = [" ".join(base)]
        seen = {normalize_question(members[0])}
        for _ in range(rng.randint(0, max_variations)):
            toks = list(base)
            for _ in range(rng.randint(1, 3)):
                op = rng.random()
                if op < 0.4 and len(toks) > 2:
                    toks.pop(rng.randrange(len(toks)))
                elif op < 0.7:
                    toks.insert(rng.randrange(len(toks) + 1), rng.choice(VOCAB))
                else:
                    toks[rng.randrange(len(toks))] = rng.choice(VOCAB)
            q = " ".join(toks)
            if normalize_question(q) not in seen:
                seen.add(normalize_question(q))
                members.append(q)
        original = QAPair(f"g{gi}", members[0] + "?", f"answer {gi}", "doc", True, "fixture")
        groups.append(VariationGroup(f"g{gi}", original, tuple(members[1:]), f"answer {gi}"))
    return groups


def disjoint_corpus(n: int = 10, words: int = 6) -> list[Document]:
    """``n`` documents with pairwise disjoint tokens ``t{i}x{j}``; with the
    default embedder none of these tokens share a hash bucket, so documents
    are exactly orthogonal."""
    return [Document(f"d{i}", " ".join(f"t{i}x{j}" for j in range(words))) for i in range(n)]
