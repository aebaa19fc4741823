#!/usr/bin/env python3
"""Writes the toy end-to-end fixture under fixtures/toy.

Six pool images, four annotated test instances, three attributes and two
objects in d=8. Embeddings are built from random attribute and object
directions so that retrieval and scoring have a clear, tie-free structure.
"""
import argparse
import json
import pathlib
import struct

import numpy as np

ATTRIBUTES = [
    {"name": "red", "type": "is", "synonyms": [], "bucket": "head"},
    {"name": "wet", "type": "is", "synonyms": [], "bucket": "medium"},
    {"name": "striped", "type": "is", "synonyms": ["stripy"], "bucket": "tail"},
]
OBJECTS = ["car", "dog"]
KIND = {"image": 0, "text": 1}


def unit(v):
    return v / np.linalg.norm(v)


def write_container(path, kind, ids, rows):
    rows = np.asarray(rows, dtype="<f4")
    n, d = rows.shape
    with open(path, "wb") as f:
        f.write(b"COMCAEMB")
        f.write(struct.pack("<IIII", 1, KIND[kind], n, d))
        f.write(rows.tobytes(order="C"))
    with open(str(path) + ".ids.jsonl", "w") as f:
        for i, id_ in enumerate(ids):
            f.write(json.dumps({"row": i, "id": id_}, separators=(",", ":")) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "toy"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    d = 8
    attr_dir = [unit(rng.normal(size=d)) for _ in ATTRIBUTES]
    obj_dir = [unit(rng.normal(size=d)) for _ in OBJECTS]

    def image(attrs, obj, noise=0.25):
        v = sum(attr_dir[a] for a in attrs) + obj_dir[obj] + noise * rng.normal(size=d)
        return unit(v)

    # pool: (attributes present, object)
    pool_spec = [([0], 0), ([0, 1], 1), ([1], 0), ([2], 1), ([2, 0], 0), ([1, 2], 1)]
    pool = [image(a, o) for a, o in pool_spec]
    write_container(out / "pool.emb", "image", [f"pool{i}" for i in range(len(pool))], pool)

    qids, queries = [], []
    for a, attr in enumerate(ATTRIBUTES):
        for o, obj in enumerate(OBJECTS):
            qids.append(f"{attr['name']}|{obj}")
            queries.append(unit(attr_dir[a] + obj_dir[o] + 0.1 * rng.normal(size=d)))
    write_container(out / "queries.emb", "text", qids, queries)

    names = [a["name"] for a in ATTRIBUTES]
    gap = 0.3 * unit(rng.normal(size=d))
    prompts = [unit(attr_dir[a] + gap + 0.3 * rng.normal(size=d)) for a in range(len(names))]
    attr_text = [unit(attr_dir[a] + gap + 0.3 * rng.normal(size=d)) for a in range(len(names))]
    # stored in a different order from the vocabulary to exercise alignment
    write_container(out / "prompts.emb", "text", names[::-1], prompts[::-1])
    write_container(out / "attr_text.emb", "text", names, attr_text)

    test_spec = [([0], 0), ([1], 1), ([0, 2], 1), ([1, 2], 0)]
    images = [image(a, o, noise=0.7) for a, o in test_spec]
    inst_ids = [f"x{i}" for i in range(len(images))]
    write_container(out / "images.emb", "image", inst_ids, images)

    instances = []
    for i, (attrs, _) in enumerate(test_spec):
        labels = [1 if a in attrs else -1 for a in range(len(names))]
        instances.append({"id": inst_ids[i], "labels": labels})
    instances[1]["labels"][2] = 0  # one unknown
    with open(out / "annotations.json", "w") as f:
        json.dump({"attributes": [{"name": a["name"], "type": a["type"], "bucket": a["bucket"]} for a in ATTRIBUTES],
                   "instances": instances}, f, indent=2)
        f.write("\n")

    with open(out / "vocab.json", "w") as f:
        json.dump({"attributes": ATTRIBUTES, "objects": OBJECTS}, f, indent=2)
        f.write("\n")

    phi_db = [[5, 1], [1, 4], [2, 2]]
    phi_llm = [[9.0, 3.0], [2.0, 8.0], [6.0, 5.0]]
    phi = [[db * llm for db, llm in zip(r1, r2)] for r1, r2 in zip(phi_db, phi_llm)]
    with open(out / "compat.json", "w") as f:
        json.dump({"attributes": names, "objects": OBJECTS, "phi_db": phi_db, "phi_llm": phi_llm,
                   "phi": phi, "combine_mode": "multiply"}, f, indent=2)
        f.write("\n")

    config = {
        "k": 2,
        "seed": 7,
        "paths": {
            "vocab": "vocab.json",
            "compat": "compat.json",
            "pool": "pool.emb",
            "queries": "queries.emb",
            "images": "images.emb",
            "prompts": "prompts.emb",
            "attr_text": "attr_text.emb",
            "annotations": "annotations.json",
        },
    }
    with open(out / "config.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
