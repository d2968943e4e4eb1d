"""A small vision-encoder / autoregressive-decoder net for patch parsing.

Convolutional encoder downsamples the patch to a feature grid; a GRU decoder
with dot-product attention over the grid emits delimiter and character tokens.
Sized for desk-scale training on CPU, not for paper-scale accuracy.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torch import nn

from ..images import to_grayscale


def preprocess(image: np.ndarray, resolution: tuple[int, int]) -> torch.Tensor:
    """Grayscale, aspect-preserving resize onto a white canvas, ink-as-one float."""
    gray = to_grayscale(image)
    h_in, w_in = resolution
    h, w = gray.shape
    scale = min(h_in / h, w_in / w)
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    resized = Image.fromarray(gray).resize((new_w, new_h), Image.BILINEAR)
    canvas = np.full((h_in, w_in), 255, dtype=np.uint8)
    y0 = (h_in - new_h) // 2
    x0 = (w_in - new_w) // 2
    canvas[y0:y0 + new_h, x0:x0 + new_w] = np.asarray(resized)
    ink = (255.0 - canvas.astype(np.float32)) / 255.0
    return torch.from_numpy(ink)[None, :, :]  # (1, H, W)


class PatchParserNet(nn.Module):
    def __init__(self, vocab_size: int, input_resolution: tuple[int, int],
                 hidden_size: int = 128):
        super().__init__()
        self.vocab_size = vocab_size
        self.input_resolution = tuple(input_resolution)
        self.hidden_size = hidden_size
        c = hidden_size
        self.encoder = nn.Sequential(
            nn.Conv2d(1, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(96, c, 3, stride=2, padding=1), nn.ReLU(),
        )
        grid_h = (input_resolution[0] + 15) // 16
        grid_w = (input_resolution[1] + 15) // 16
        self.pos_embed = nn.Parameter(torch.zeros(1, c, grid_h, grid_w))
        self.embed = nn.Embedding(vocab_size, c)
        self.gru = nn.GRU(c, c, batch_first=True)
        self.h0_proj = nn.Linear(c, c)
        self.out = nn.Linear(2 * c, vocab_size)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(images) + self.pos_embed
        b, c, h, w = feats.shape
        return feats.reshape(b, c, h * w).transpose(1, 2)  # (B, S, C)

    def _initial_hidden(self, memory: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.h0_proj(memory.mean(dim=1)))[None, :, :]  # (1, B, C)

    def _attend(self, queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        scores = torch.bmm(queries, memory.transpose(1, 2)) / (self.hidden_size ** 0.5)
        return torch.bmm(torch.softmax(scores, dim=-1), memory)

    def forward(self, images: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits: position t predicts token t+1. (B, T, V)."""
        memory = self.encode(images)
        emb = self.embed(token_ids)
        outputs, _ = self.gru(emb, self._initial_hidden(memory))
        context = self._attend(outputs, memory)
        return self.out(torch.cat([outputs, context], dim=-1))

    @torch.no_grad()
    def greedy_decode(self, image: torch.Tensor, prompt_ids: list[int],
                      end_ids: set[int], max_len: int) -> list[int]:
        """Decode one image greedily until an end token or max_len generated
        tokens. Returns the generated ids (prompt excluded)."""
        self.eval()
        memory = self.encode(image[None, :, :, :])
        hidden = self._initial_hidden(memory)
        generated: list[int] = []
        token = torch.tensor([prompt_ids], dtype=torch.long)
        # Run the prompt through first (prompts are short; ours is one token).
        emb = self.embed(token)
        outputs, hidden = self.gru(emb, hidden)
        last = outputs[:, -1:, :]
        for _ in range(max_len):
            context = self._attend(last, memory)
            logits = self.out(torch.cat([last, context], dim=-1))
            next_id = int(torch.argmax(logits[0, -1]))
            generated.append(next_id)
            if next_id in end_ids:
                break
            emb = self.embed(torch.tensor([[next_id]], dtype=torch.long))
            last, hidden = self.gru(emb, hidden)
        return generated
