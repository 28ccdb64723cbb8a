#!/usr/bin/env python3
"""Regenerate the bundled workload files under workloads/.

Every file is a deterministic function of this script, so re-running it
must leave the tree unchanged. Expected results come from the reference
oracle, never from the simulator.
"""

from __future__ import annotations

import argparse
import os
import random

from tagmesh.verify import oracle_matmul, relu_rows
from tagmesh.workload import build_perceptron, build_tiled_matmul

A2 = [[1, 2], [3, 4]]
B2 = [[5, 6], [7, 8]]
D2 = [[1, 1], [1, 1]]


def _rand_mat(rng, rows, cols, lo=-16, hi=16):
    return [[rng.randint(lo, hi) for _ in range(cols)] for _ in range(rows)]


def walkthrough(tagged: bool):
    c = oracle_matmul(A2, B2, D2)
    tags = [5, 5] if tagged else None
    return build_tiled_matmul(
        2, A2, B2, D2, a_tags=tags, in_elem_bits=32,
        expected=c, expected_tags=tags,
        spad_depth=8, acc_depth=4)


def matmul64(g: int):
    rng = random.Random(1000 + g)
    a = _rand_mat(rng, 64, 64)
    b = _rand_mat(rng, 64, 64)
    d = _rand_mat(rng, 64, 64)
    return build_tiled_matmul(g, a, b, d, expected=oracle_matmul(a, b, d))


def perceptron():
    rng = random.Random(77)
    a = _rand_mat(rng, 8, 8, -2, 2)
    w1 = _rand_mat(rng, 8, 8, -2, 2)
    b1 = _rand_mat(rng, 1, 8, -3, 3)[0]
    w2 = _rand_mat(rng, 8, 8, -2, 2)
    b2 = _rand_mat(rng, 1, 8, -3, 3)[0]
    hidden = relu_rows(oracle_matmul(a, w1, [b1] * 8))
    out = oracle_matmul(hidden, w2, [b2] * 8)
    return build_perceptron(8, a, w1, b1, w2, b2, expected=out)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    default_dir = os.path.join(os.path.dirname(__file__), "..", "workloads")
    ap.add_argument("--out-dir", default=os.path.normpath(default_dir))
    args = ap.parse_args()

    files = {
        "walkthrough_2x2.json": walkthrough(tagged=False),
        "walkthrough_2x2_tagged.json": walkthrough(tagged=True),
        "matmul64_mesh8.json": matmul64(8),
        "matmul64_mesh16.json": matmul64(16),
        "matmul64_mesh32.json": matmul64(32),
        "perceptron.json": perceptron(),
    }
    os.makedirs(args.out_dir, exist_ok=True)
    for name, workload in files.items():
        path = os.path.join(args.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(workload.to_json())
            fh.write("\n")
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
