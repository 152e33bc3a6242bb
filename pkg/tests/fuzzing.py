"""Mutation fuzzer for the scenario parser, shared by the unit and acceptance tests."""

import random

from qrules.scenario import CATALOG, ScenarioError, builtin_source, parse

_ALPHABET = " \t\n#=,->:.0123456789-eE+abckxyzDB'é→\x00\xff"
_WORDS = ["scenario", "observer", "component", "env", "interact", "flow", "->", "ramp", "const",
          "weight=", "rate=", "fraction=", "window=", "brain=k:ready:B", "particle-detector",
          "physiological", "detector-detector", "nan", "inf", "-1", "1e309", "c1", "c99"]


def mutate(src: str, rng: random.Random) -> str | bytes:
    kind = rng.randrange(7)
    if kind == 6:
        data = bytearray(src.encode("utf-8"))
        for _ in range(rng.randint(1, 4)):
            data[rng.randrange(len(data))] = rng.randrange(256)
        return bytes(data)
    chars = list(src)
    for _ in range(rng.randint(1, 6)):
        pos = rng.randrange(len(chars) + 1)
        if kind in (0, 1):
            chars.insert(pos, rng.choice(_ALPHABET))
        elif kind == 2 and chars:
            del chars[min(pos, len(chars) - 1)]
        elif kind == 3:
            chars[pos:pos] = " " + rng.choice(_WORDS) + " "
        elif kind == 4:
            lines = "".join(chars).splitlines()
            rng.shuffle(lines)
            chars = list("\n".join(lines))
        else:
            chars = chars[:pos]
    return "".join(chars)


def fuzz(n: int, seed: int = 0) -> tuple[int, int, list[tuple[object, BaseException]]]:
    """Parse ``n`` mutated catalog sources; return (parsed, rejected, crashes)."""
    rng = random.Random(seed)
    sources = [builtin_source(name) for name in CATALOG]
    ok = rejected = 0
    crashes = []
    for _ in range(n):
        text = mutate(rng.choice(sources), rng)
        try:
            parse(text)
            ok += 1
        except ScenarioError:
            rejected += 1
        except Exception as exc:  # anything else is a crash
            crashes.append((text, exc))
    return ok, rejected, crashes
