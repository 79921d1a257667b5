"""The PLRes network: embeddings + distributions -> residual MLP -> one linear output."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import nncore
from .features import FeatureBatch, RawInput
from .nncore import Dense, Embedding, relu, relu_backward
from .seeding import sub_rng


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlresConfig:
    n_blocks: int = 2
    id_embed_dim: int = 16
    loc_embed_dim: int = 16
    k_intervals: int = 10
    use_probability: bool = True
    use_location: bool = True
    use_shortcuts: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        for name in ("id_embed_dim", "loc_embed_dim", "k_intervals"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (self.use_probability or self.use_location):
            raise ConfigError("at least one of the probability or location feature families must be enabled")

    def to_dict(self) -> dict:
        return asdict(self)


class VocabSizes(NamedTuple):
    n_users: int
    n_services: int
    user_country: int
    user_as: int
    service_country: int
    service_as: int

    @classmethod
    def from_dataset(cls, data) -> "VocabSizes":
        v = data.vocabs
        return cls(data.n_users, data.n_services, v.user_country.size, v.user_as.size,
                   v.service_country.size, v.service_as.size)


def block_widths(n_blocks: int) -> list[int]:
    """Neurons per block: 64 * 2^(n-1), ..., 128, 64."""
    if n_blocks < 1:
        raise ConfigError(f"n_blocks must be >= 1, got {n_blocks}")
    return [64 * 2 ** (n_blocks - 1 - i) for i in range(n_blocks)]


class ResidualBlock:
    """relu(fc2(relu(fc1(x))) + shortcut(x)); the shortcut is always a learned projection."""

    def __init__(self, n_in: int, width: int, rng: np.random.Generator, name: str):
        self.main_fc1 = Dense(n_in, width, rng, f"{name}.main_fc1")
        self.main_fc2 = Dense(width, width, rng, f"{name}.main_fc2")
        self.shortcut_fc = Dense(n_in, width, rng, f"{name}.shortcut_fc")
        self.width = width

    def parameters(self):
        return self.main_fc1.parameters() + self.main_fc2.parameters() + self.shortcut_fc.parameters()

    def preactivations(self):
        return [self._h, self._c]

    def forward(self, x):
        self._h = self.main_fc1.forward(x)
        main = self.main_fc2.forward(relu(self._h))
        self._c = main + self.shortcut_fc.forward(x)
        return relu(self._c)

    def backward(self, grad_out):
        grad_c = relu_backward(grad_out, self._c)
        grad_x = self.shortcut_fc.backward(grad_c)
        grad_h = relu_backward(self.main_fc2.backward(grad_c), self._h)
        return grad_x + self.main_fc1.backward(grad_h)


class PlainBlock:
    """Two dense+relu layers of equal width, the no-shortcut comparison arm."""

    def __init__(self, n_in: int, width: int, rng: np.random.Generator, name: str):
        self.fc1 = Dense(n_in, width, rng, f"{name}.fc1")
        self.fc2 = Dense(width, width, rng, f"{name}.fc2")
        self.width = width

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()

    def preactivations(self):
        return [self._h1, self._h2]

    def forward(self, x):
        self._h1 = self.fc1.forward(x)
        self._h2 = self.fc2.forward(relu(self._h1))
        return relu(self._h2)

    def backward(self, grad_out):
        grad_h1 = relu_backward(self.fc2.backward(relu_backward(grad_out, self._h2)), self._h1)
        return self.fc1.backward(grad_h1)


_EMBEDDINGS = ("user_id", "service_id", "user_country", "user_as", "service_country", "service_as")


class PlresModel:
    def __init__(self, config: PlresConfig, vocab_sizes: VocabSizes):
        self.config = config
        self.vocab_sizes = VocabSizes(*vocab_sizes)
        c = config
        dims = {
            "user_id": c.id_embed_dim,
            "service_id": c.id_embed_dim,
            "user_country": c.loc_embed_dim,
            "user_as": c.loc_embed_dim,
            "service_country": c.loc_embed_dim,
            "service_as": c.loc_embed_dim,
        }
        # every table is created whatever the ablation, each from its own stream,
        # so switching a feature family off leaves the remaining values untouched
        self.embeddings = {
            name: Embedding(size, dims[name], sub_rng(c.seed, f"init/embed/{name}"), f"embed.{name}")
            for name, size in zip(_EMBEDDINGS, self.vocab_sizes)
        }
        self.segments = [("I_u", "user_id"), ("I_s", "service_id")]
        if c.use_location:
            self.segments += [("L_u", "user_country"), ("L_u", "user_as"),
                              ("L_s", "service_country"), ("L_s", "service_as")]
        if c.use_probability:
            self.segments += [("P_u", "p_user"), ("P_s", "p_service")]
        self.input_dim = sum(self._segment_width(src) for _, src in self.segments)

        block_cls = ResidualBlock if c.use_shortcuts else PlainBlock
        self.blocks = []
        n_in = self.input_dim
        for i, width in enumerate(block_widths(c.n_blocks)):
            self.blocks.append(block_cls(n_in, width, sub_rng(c.seed, f"init/block{i}"), f"block{i}"))
            n_in = width
        self.output = Dense(n_in, 1, sub_rng(c.seed, "init/output"), "output")
        self._cache = None

    def _segment_width(self, source: str) -> int:
        if source in self.embeddings:
            return self.embeddings[source].dim
        return self.config.k_intervals

    @property
    def hidden_widths(self) -> list[int]:
        if self.config.use_shortcuts:
            return [b.width for b in self.blocks]
        return [w for b in self.blocks for w in (b.width, b.width)]

    def parameters(self) -> list[nncore.Parameter]:
        params = [e.table for e in self.embeddings.values()]
        for block in self.blocks:
            params += block.parameters()
        return params + self.output.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def build_input(self, batch: FeatureBatch) -> np.ndarray:
        """Concatenate I_u, I_s, L_u, L_s, P_u, P_s (minus ablated families) into x_0."""
        k = self.config.k_intervals
        parts = []
        codes = {
            "user_id": batch.user_id,
            "service_id": batch.service_id,
            "user_country": batch.user_country_code,
            "user_as": batch.user_as_code,
            "service_country": batch.service_country_code,
            "service_as": batch.service_as_code,
        }
        for _, source in self.segments:
            if source in self.embeddings:
                parts.append(self.embeddings[source].forward(codes[source]))
            else:
                p = np.asarray(getattr(batch, source), dtype=np.float64)
                if p.shape != (len(batch), k):
                    raise nncore.ShapeError(f"{source} must have shape ({len(batch)}, {k}), got {p.shape}")
                parts.append(p)
        return np.concatenate(parts, axis=1)

    def forward(self, batch: FeatureBatch) -> np.ndarray:
        """Predicted QoS for every row of ``batch`` (linear output, not clamped)."""
        x = self.build_input(batch)
        for block in self.blocks:
            x = block.forward(x)
        out = self.output.forward(x)[:, 0]
        self._cache = len(batch)
        return out

    def predict_one(self, raw: RawInput) -> float:
        return float(self.forward(FeatureBatch.from_raw([raw]))[0])

    def backward(self, grad_pred: np.ndarray) -> None:
        """Accumulate d(loss)/d(param) into every parameter's ``grad``."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        grad_pred = np.asarray(grad_pred, dtype=np.float64).reshape(-1)
        if grad_pred.shape != (self._cache,):
            raise nncore.ShapeError(f"expected gradient of length {self._cache}, got {grad_pred.shape}")
        grad = self.output.backward(grad_pred[:, None])
        for block in reversed(self.blocks):
            grad = block.backward(grad)
        offset = 0
        for _, source in self.segments:
            width = self._segment_width(source)
            if source in self.embeddings:
                self.embeddings[source].backward(grad[:, offset:offset + width])
            offset += width

    def predict(self, batch: FeatureBatch, chunk: int = 16384) -> np.ndarray:
        out = np.empty(len(batch), dtype=np.float64)
        for start in range(0, len(batch), chunk):
            sl = slice(start, start + chunk)
            out[sl] = self.forward(batch.take(sl))
        self._cache = None
        return out

    def state_dict(self) -> dict:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.shape:
                raise nncore.ShapeError(f"{p.name}: shape {state[p.name].shape} != {p.shape}")
            p.value[...] = state[p.name]

    def save(self, path, extra: dict | None = None) -> None:
        config = {"model": self.config.to_dict(), **(extra or {})}
        nncore.save_checkpoint(path, self.parameters(), config, self.vocab_sizes._asdict())

    @classmethod
    def load(cls, path, vocab_sizes: VocabSizes | None = None) -> "PlresModel":
        """Rebuild a model from a checkpoint; ``vocab_sizes`` (from the dataset) must agree if given."""
        doc = nncore.read_checkpoint(path)
        stored = VocabSizes(**doc["vocab_sizes"])
        if vocab_sizes is not None and tuple(vocab_sizes) != tuple(stored):
            raise nncore.ShapeError(f"checkpoint vocab sizes {stored} do not match dataset {tuple(vocab_sizes)}")
        model = cls(PlresConfig(**doc["config"]["model"]), stored)
        nncore.load_parameters(doc, model.parameters())
        return model


def make_variant(config: PlresConfig, vocab_sizes: VocabSizes) -> PlresModel:
    return PlresModel(config, vocab_sizes)
