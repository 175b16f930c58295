#!/usr/bin/env python3
"""Deterministic synthetic corpus in the NLVR structured-representation format.

Statements come from a few templates; labels are computed from the scene.
"""
import argparse
import json
import random
from pathlib import Path

SHAPES = ["square", "triangle", "circle"]
COLORS = {"black": "Black", "yellow": "Yellow", "blue": "#0099ff"}
SIZES = [10, 20, 30]


def make_object(rng):
    size = rng.choice(SIZES)
    return {
        "x_loc": rng.randint(0, 100 - size),
        "y_loc": rng.randint(0, 100 - size),
        "size": size,
        "type": rng.choice(SHAPES),
        "color": COLORS[rng.choice(list(COLORS))],
    }


def color_of(obj):
    for name, raw in COLORS.items():
        if obj["color"] == raw:
            return name
    raise ValueError(obj["color"])


def plural(shape, n):
    return shape if n == 1 else shape + "s"


def make_statement(rng, boxes):
    kind = rng.randrange(4)
    shape = rng.choice(SHAPES)
    color = rng.choice(list(COLORS))
    objs = [o for box in boxes for o in box]
    if kind == 0:
        text = f"there is a {color} {shape}."
        label = any(o["type"] == shape and color_of(o) == color for o in objs)
    elif kind == 1:
        n = rng.randint(1, 3)
        text = f"there are exactly {n} {plural(shape, n)}."
        label = sum(o["type"] == shape for o in objs) == n
    elif kind == 2:
        text = f"there is a box with only {color} items."
        label = any(box and all(color_of(o) == color for o in box) for box in boxes)
    else:
        text = f"there is a box with a {shape} and no {color} items."
        label = any(
            any(o["type"] == shape for o in box) and not any(color_of(o) == color for o in box) for box in boxes
        )
    return text[0].upper() + text[1:], label


def make_example(rng, ident):
    boxes = []
    for _ in range(3):
        n = 0 if rng.random() < 0.03 else rng.randint(1, 8)
        boxes.append([make_object(rng) for _ in range(n)])
    sentence, label = make_statement(rng, boxes)
    return {
        "sentence": sentence,
        "label": "true" if label else "false",
        "identifier": ident,
        "structured_rep": boxes,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=20)
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--dev", type=int, default=60)
    ap.add_argument("--test", type=int, default=60)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for split, count in (("train", args.train), ("dev", args.dev), ("test", args.test)):
        with open(args.out / f"{split}.json", "w") as f:
            for i in range(count):
                f.write(json.dumps(make_example(rng, f"{split}-{i}-0")) + "\n")


if __name__ == "__main__":
    main()
