"""Training-pair construction for the two fine-tuning strategies."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from ..ingest.records import PatchRecord, resolve_uri
from ..schema import Category, SchemaRegistry, open_token, serialize_tokens
from .vocab import PROMPT_TOKEN

logger = logging.getLogger(__name__)

SINGLE_KEY = "all"


@dataclass
class TrainPair:
    patch_id: str
    image_path: Path
    category: Category
    prompt: str
    target: str


def build_training_pairs(records: list[PatchRecord],
                         manifest_path: Union[str, Path],
                         strategy: str,
                         registry: Optional[SchemaRegistry] = None
                         ) -> dict[str, list[TrainPair]]:
    """Turn labeled patches into (image, prompt, target) pairs.

    single: one list under the "all" key; the prompt is the shared task token
    and the target is the full serialization, category token first, so the
    model predicts the category itself.

    per_category: one list per category; the prompt is the category token and
    the target is the remainder of the serialization. Empty categories are
    skipped with a warning.
    """
    if strategy not in ("single", "per_category"):
        raise ValueError(f"unknown strategy: {strategy!r}")
    partitions: dict[str, list[TrainPair]] = {}
    for rec in records:
        if rec.ground_truth is None:
            raise ValueError(f"record {rec.patch_id} has no ground_truth")
        target_full = serialize_tokens(rec.ground_truth, registry)
        image_path = resolve_uri(manifest_path, rec.image_uri)
        if strategy == "single":
            key, prompt, target = SINGLE_KEY, PROMPT_TOKEN, target_full
        else:
            prompt = open_token(rec.category.code)
            assert target_full.startswith(prompt)
            key, target = rec.category.code, target_full[len(prompt):]
        partitions.setdefault(key, []).append(TrainPair(
            patch_id=rec.patch_id, image_path=image_path,
            category=rec.category, prompt=prompt, target=target))
    if strategy == "per_category":
        for category in Category:
            if category.code not in partitions:
                logger.warning("category %s has no training pairs; its model "
                               "will be skipped", category.code)
    return partitions
