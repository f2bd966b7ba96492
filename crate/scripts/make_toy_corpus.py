#!/usr/bin/env python3
"""Regenerate the synthetic code-mixed toy corpus used by the end-to-end tests.

Each class draws its signal words from its own vocabulary; the two vocabularies
are disjoint. Every comment also carries shared filler words and social-media
noise (handles, links, digits, emoji, mixed case) that preprocessing must strip.
"""
import random

OFFENSIVE = ["loosu", "naaye", "porukki", "kazhutha", "thendi", "kevalam",
             "moodhevi", "pottan", "vetti", "mental", "waste", "fraud"]
NOT_OFFENSIVE = ["semma", "nalla", "adipoli", "arumai", "kidu", "thalaivar",
                 "mass", "super", "vera", "level", "poli", "nanni"]
FILLER = ["padam", "trailer", "movie", "da", "bro", "enna", "intha", "song",
          "paaru", "machan", "chetta", "ivan", "aval", "kandu", "first", "day",
          "show", "release", "eppo", "scene"]
NOISE = ["@user{n}", "http://t.co/{n}x", "www.site{n}.com", "{n}", "{n}%",
         "!!", "😂", "🔥", "#hashtag{n}", "..."]


def comment(rng, signal):
    words = rng.sample(signal, rng.randint(1, 3)) + rng.sample(FILLER, rng.randint(2, 5))
    for _ in range(rng.randint(0, 3)):
        words.append(rng.choice(NOISE).format(n=rng.randint(1, 999)))
    rng.shuffle(words)
    return " ".join(w.upper() if rng.random() < 0.15 else w for w in words)


def main():
    rng = random.Random(2021)
    rows = []
    for i in range(200):
        rows.append(("OFF", comment(rng, OFFENSIVE)))
        rows.append(("NOT", comment(rng, NOT_OFFENSIVE)))
    rng.shuffle(rows)
    for name, part in (("toy_train.tsv", rows[:320]), ("toy_test.tsv", rows[320:])):
        offset = 0 if name == "toy_train.tsv" else 320
        with open(f"crates/core/tests/data/{name}", "w", encoding="utf-8") as f:
            f.write("id\ttext\tlabel\n")
            for j, (label, text) in enumerate(part):
                f.write(f"toy_{offset + j:04d}\t{text}\t{label}\n")


if __name__ == "__main__":
    main()
