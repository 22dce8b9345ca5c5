"""Dataset directory layout, manifest, and split bookkeeping.

Layout: input/NNNNNN.png, structure/NNNNNN.png (8-bit RGB),
texture_gt/NNNNNN.png (16-bit grayscale), mask/NNNNNN.png,
edge_gt/NNNNNN.png (8-bit binary grayscale), manifest.json.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .imagecore import Image
from .pngio import read_image, write_image
from .texgen import GeneratedSample

SUBDIRS = ("input", "structure", "texture_gt", "mask", "edge_gt")
MANIFEST = "manifest.json"


def split_counts(n: int) -> tuple[int, int, int]:
    """65/10/25 split by floor, remainder assigned to train."""
    val = int(n * 0.10)
    test = int(n * 0.25)
    return n - val - test, val, test


def make_splits(n: int) -> dict[str, list[int]]:
    train, val, test = split_counts(n)
    ids = list(range(n))
    return {"train": ids[:train], "val": ids[train : train + val], "test": ids[train + val :]}


def sample_name(i: int) -> str:
    return f"{i:06d}.png"


def write_sample(root: str, i: int, sample: GeneratedSample) -> None:
    name = sample_name(i)
    write_image(os.path.join(root, "input", name), sample.input)
    write_image(os.path.join(root, "structure", name), sample.structure_only)
    write_image(os.path.join(root, "texture_gt", name), sample.texture_gt, bits=16)
    write_image(os.path.join(root, "mask", name), sample.texture_mask)
    write_image(os.path.join(root, "edge_gt", name), sample.structure_map)


def write_dataset(root: str, samples: list[GeneratedSample], extra: dict | None = None) -> None:
    for sub in SUBDIRS:
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        write_sample(root, i, s)
        records.append(
            {
                "id": sample_name(i)[:-4],
                "seed": int(s.seed),
                "pattern_index": int(s.pattern_index),
                "transform": s.transform.to_json(),
            }
        )
    manifest = {"count": len(samples), "samples": records, "splits": make_splits(len(samples))}
    if extra:
        manifest.update(extra)
    with open(os.path.join(root, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class LoadedSample:
    """Disk round-tripped sample with the same field names training expects."""

    input: Image
    structure_only: Image
    texture_gt: Image
    texture_mask: Image
    structure_map: Image


@dataclass(frozen=True)
class Dataset:
    samples: list
    splits: dict
    manifest: dict

    def subset(self, split: str) -> list:
        return [self.samples[i] for i in self.splits[split]]


def load_dataset(root: str) -> Dataset:
    path = os.path.join(root, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    samples = []
    for rec in manifest["samples"]:
        name = rec["id"] + ".png"
        samples.append(
            LoadedSample(
                input=read_image(os.path.join(root, "input", name)),
                structure_only=read_image(os.path.join(root, "structure", name)),
                texture_gt=read_image(os.path.join(root, "texture_gt", name)),
                texture_mask=read_image(os.path.join(root, "mask", name)),
                structure_map=read_image(os.path.join(root, "edge_gt", name)),
            )
        )
    return Dataset(samples=samples, splits=manifest["splits"], manifest=manifest)
