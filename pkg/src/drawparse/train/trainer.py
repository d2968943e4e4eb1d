"""Training loop, checkpointing, and patch parsing for the sequence model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from ..images import load_image
from ..schema import (Category, ParseFailure, StructuredAnnotation,
                      deserialize_tokens, open_token)
from .model import PatchParserNet, preprocess
from .pairs import SINGLE_KEY, TrainPair
from .vocab import PROMPT_TOKEN, TokenVocab, build_vocab

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "single"
    epochs: int = 30
    batch_size: int = 1
    learning_rate: float = 3e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_token_length: int = 256
    input_resolution: tuple[int, int] = (64, 256)
    hidden_size: int = 128
    beam_width: int = 1  # greedy; widths > 1 are not implemented
    seed: int = 0
    checkpoint_dir: Optional[Path] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.strategy not in ("single", "per_category"):
            raise ValueError(f"unknown strategy: {self.strategy!r}")


@dataclass
class ParserModel:
    net: PatchParserNet
    vocab: TokenVocab
    strategy: str
    category: str  # category code, or "all" for the single strategy
    input_resolution: tuple[int, int]
    max_token_length: int
    checkpoint_uri: Optional[str] = None

    def prompt(self) -> str:
        return PROMPT_TOKEN if self.category == SINGLE_KEY else open_token(self.category)


def _encode_pair(vocab: TokenVocab, pair: TrainPair, max_len: int) -> list[int]:
    ids = vocab.encode(pair.prompt + pair.target)
    if len(ids) > max_len + 1:
        raise TrainingError(
            f"pair {pair.patch_id}: sequence length {len(ids)} exceeds "
            f"max_token_length {max_len}")
    return ids


def _train_one(key: str, pairs: list[TrainPair], cfg: TrainConfig,
               vocab: TokenVocab, out_dir: Optional[Path]) -> ParserModel:
    torch.manual_seed(cfg.seed)
    net = PatchParserNet(len(vocab), cfg.input_resolution, cfg.hidden_size)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate,
                                 betas=cfg.adam_betas, eps=cfg.adam_eps)
    loss_fn = nn.CrossEntropyLoss(ignore_index=vocab.pad_id)

    images = []
    sequences = []
    kept: list[TrainPair] = []
    for pair in pairs:
        try:
            image = load_image(pair.image_path)
        except OSError as err:
            logger.warning("skipping unreadable image %s: %s", pair.image_path, err)
            continue
        images.append(preprocess(image, cfg.input_resolution))
        sequences.append(_encode_pair(vocab, pair, cfg.max_token_length))
        kept.append(pair)
    if not images:
        raise TrainingError(f"no readable training pairs for {key!r}")
    if len(kept) < len(pairs):
        logger.warning("%s: skipped %d unreadable image(s)", key, len(pairs) - len(kept))

    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")

    def log(obj):
        if log_fh is not None:
            log_fh.write(json.dumps(obj) + "\n")

    order_rng = np.random.default_rng(cfg.seed)
    step = 0
    try:
        net.train()
        for epoch in range(cfg.epochs):
            perm = order_rng.permutation(len(images))
            epoch_losses = []
            for start in range(0, len(perm), cfg.batch_size):
                batch = perm[start:start + cfg.batch_size]
                max_t = max(len(sequences[i]) for i in batch)
                tok = torch.full((len(batch), max_t), vocab.pad_id, dtype=torch.long)
                for row, i in enumerate(batch):
                    tok[row, :len(sequences[i])] = torch.tensor(sequences[i])
                imgs = torch.stack([images[i] for i in batch])
                logits = net(imgs, tok[:, :-1])
                loss = loss_fn(logits.reshape(-1, logits.shape[-1]),
                               tok[:, 1:].reshape(-1))
                if not torch.isfinite(loss):
                    batch_ids = [kept[int(i)].patch_id for i in batch]
                    raise TrainingError(
                        f"non-finite loss at step {step} (batch {batch_ids}, "
                        f"lr {cfg.learning_rate})")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                value = float(loss.detach())
                epoch_losses.append(value)
                log({"kind": "step", "step": step, "epoch": epoch,
                     "pairs": [kept[int(i)].patch_id for i in batch],
                     "loss": value})
                step += 1
            log({"kind": "epoch", "epoch": epoch,
                 "mean_loss": float(np.mean(epoch_losses))})
    finally:
        if log_fh is not None:
            log_fh.close()

    model = ParserModel(net=net, vocab=vocab, strategy=cfg.strategy, category=key,
                        input_resolution=cfg.input_resolution,
                        max_token_length=cfg.max_token_length)
    if out_dir is not None:
        save_parser(model, out_dir, cfg)
        model.checkpoint_uri = str(out_dir)
    return model


def train_parser(partitions: dict[str, list[TrainPair]],
                 cfg: TrainConfig) -> dict[str, ParserModel]:
    """Fine-tune one model (single) or one per nonempty category (per_category).

    Deterministic given cfg.seed: parameter init and per-epoch data order are
    both seeded, so a rerun replays the identical step sequence.
    """
    vocab = build_vocab()
    models: dict[str, ParserModel] = {}
    keys = sorted(partitions, key=lambda k: (k != SINGLE_KEY, k))
    for key in keys:
        if not partitions[key]:
            continue
        out_dir = None
        if cfg.checkpoint_dir is not None:
            out_dir = Path(cfg.checkpoint_dir) / cfg.strategy / key
        logger.info("training %s/%s on %d pairs for %d epochs",
                    cfg.strategy, key, len(partitions[key]), cfg.epochs)
        models[key] = _train_one(key, partitions[key], cfg, vocab, out_dir)
    return models


def save_parser(model: ParserModel, out_dir: Union[str, Path],
                cfg: TrainConfig) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.net.state_dict(), out_dir / "model.pt")
    metadata = {
        "format_version": CHECKPOINT_FORMAT,
        "strategy": model.strategy,
        "category": model.category,
        "vocab": model.vocab.tokens,
        "input_resolution": list(model.input_resolution),
        "max_token_length": model.max_token_length,
        "hidden_size": cfg.hidden_size,
        "seed": cfg.seed,
    }
    (out_dir / "metadata.json").write_text(
        json.dumps(metadata, ensure_ascii=False), encoding="utf-8")


def load_parser(checkpoint_dir: Union[str, Path]) -> ParserModel:
    checkpoint_dir = Path(checkpoint_dir)
    meta_path = checkpoint_dir / "metadata.json"
    if not meta_path.is_file():
        raise TrainingError(f"no metadata.json in {checkpoint_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise TrainingError(f"unsupported checkpoint format in {checkpoint_dir}")
    vocab = TokenVocab(meta["vocab"])
    resolution = tuple(meta["input_resolution"])
    net = PatchParserNet(len(vocab), resolution, meta["hidden_size"])
    net.load_state_dict(torch.load(checkpoint_dir / "model.pt", weights_only=True))
    net.eval()
    return ParserModel(net=net, vocab=vocab, strategy=meta["strategy"],
                       category=meta["category"], input_resolution=resolution,
                       max_token_length=meta["max_token_length"],
                       checkpoint_uri=str(checkpoint_dir))


def parse_patch(model: ParserModel, image: np.ndarray,
                expected: Optional[Category] = None
                ) -> tuple[Union[StructuredAnnotation, ParseFailure], str]:
    """Greedy-decode one patch and parse the token text.

    Returns (annotation or ParseFailure, raw token text). The raw text is kept
    even on success so callers can audit what the model actually emitted.
    """
    tensor = preprocess(image, model.input_resolution)
    prompt = model.prompt()
    prompt_ids = model.vocab.encode(prompt)
    generated = model.net.greedy_decode(tensor, prompt_ids,
                                        model.vocab.end_token_ids(),
                                        model.max_token_length)
    decoded = model.vocab.decode(generated)
    raw = decoded if model.category == SINGLE_KEY else prompt + decoded
    return deserialize_tokens(raw, expected), raw
