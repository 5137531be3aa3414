"""Regenerate src/concealed/data/wordlist-v1.txt.

Each word encodes 14 bits as consonant-vowel-consonant-vowel plus an
optional tail letter, so the list has exactly 16384 distinct entries.
The shipped file is the source of truth; this script only documents how
version 1 was produced.
"""
import itertools
from pathlib import Path

CONSONANTS = "bdfghjklmnprstvz"
VOWELS = "aeio"
TAILS = ("", "n", "r", "s")

OUT = Path(__file__).resolve().parents[1] / "src" / "concealed" / "data" / "wordlist-v1.txt"


def words():
    for c1, v1, c2, v2, tail in itertools.product(CONSONANTS, VOWELS, CONSONANTS, VOWELS, TAILS):
        yield c1 + v1 + c2 + v2 + tail


if __name__ == "__main__":
    out = list(words())
    assert len(out) == len(set(out)) == 16384
    OUT.write_text("\n".join(out) + "\n")
    print(f"wrote {len(out)} words to {OUT}")
