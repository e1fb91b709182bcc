#!/usr/bin/env python3
"""Independent reference implementations used as test oracles.

Written from the standard definitions only (splitmix64, FNV-1a 64, the
mock-metric canonical string, random search by per-config streams, sample
statistics). Prints JSON on stdout.

    reference.py splitmix SEED COUNT
    reference.py stream SEED STREAM COUNT
    reference.py fnv TEXT
    reference.py mock SEED CONFIG MODE EVAL TRAIN EPOCHS
    reference.py sample SEED N
    reference.py stats V1 V2 ...
"""
import json
import math
import statistics
import sys

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


class SplitMix:
    def __init__(self, state):
        self.state = state & MASK

    def next(self):
        self.state = (self.state + GAMMA) & MASK
        return mix(self.state)

    def below(self, bound):
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def stream(seed, index):
    return SplitMix(mix((seed + GAMMA * (index + 1)) & MASK))


def fnv1a(data: bytes):
    h = 14695981039346656037
    for b in data:
        h ^= b
        h = (h * 1099511628211) & MASK
    return h


def unit(bits):
    return (bits >> 11) / float(1 << 53)


REFERENCE_AXES = [
    ("architecture", ["ResNet50", "InceptionV3", "Xception"]),
    ("batch_size", ["16", "32", "64", "128"]),
    ("learning_rate", ["0.01", "0.001", "0.0001"]),
    ("decay", ["0.01", "0.001", "0.0001"]),
    ("momentum", ["0.5", "0.9", "0.99"]),
    ("nesterov", ["enabled", "disabled"]),
]


def main(argv):
    cmd = argv[1]
    if cmd == "splitmix":
        g = SplitMix(int(argv[2]))
        out = [str(g.next()) for _ in range(int(argv[3]))]
    elif cmd == "stream":
        g = stream(int(argv[2]), int(argv[3]))
        out = [str(g.next()) for _ in range(int(argv[4]))]
    elif cmd == "fnv":
        h = fnv1a(argv[2].encode("utf-8"))
        out = {"hash": str(h), "metric": unit(h), "exact": h / 2.0 ** 64}
    elif cmd == "mock":
        seed, cfg, mode, ev, train, epochs = argv[2:8]
        text = f"{seed}|{cfg}|{mode}|{ev}|{train}|{epochs}"
        h = fnv1a(text.encode("utf-8"))
        out = {"canonical": text, "hash": str(h), "metric": unit(h)}
    elif cmd == "sample":
        seed, n = int(argv[2]), int(argv[3])
        out = []
        for j in range(n):
            g = stream(seed, j)
            out.append({name: choices[g.below(len(choices))] for name, choices in REFERENCE_AXES})
    elif cmd == "stats":
        values = [float(v) for v in argv[2:]]
        sd = statistics.stdev(values)
        out = {"mean": statistics.fmean(values), "sd": sd, "se": sd / math.sqrt(len(values))}
    else:
        raise SystemExit(f"unknown command {cmd}")
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main(sys.argv)
