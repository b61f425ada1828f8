"""Model assembly and JSON checkpoints.

A bundle holds the problem encoder, prefix decoder, per-level analogy
heads, and the solution encoder + bilinear discriminator, together with
the vocabulary they were built against. Initialization derives one
named substream per component from the seed, so a component's initial
weights do not depend on which other components are enabled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .analogy import AnalogyHead
from .autodiff import Parameter
from .corpus import Vocabulary
from .discrimination import BilinearDiscriminator, SolutionEncoder
from .solver import PrefixDecoder, ProblemEncoder

__all__ = ["ModelConfig", "ModelBundle", "build_model", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 64
    hidden_dim: int = 128

    def __post_init__(self):
        if self.emb_dim < 1 or self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ValueError("emb_dim must be >= 1 and hidden_dim a positive even number")


class ModelBundle:
    def __init__(self, encoder: ProblemEncoder, decoder: PrefixDecoder,
                 heads: dict, sol_encoder: SolutionEncoder,
                 discriminator: BilinearDiscriminator, vocab: Vocabulary,
                 config: ModelConfig):
        self.encoder = encoder
        self.decoder = decoder
        self.heads = heads  # level -> AnalogyHead
        self.sol_encoder = sol_encoder
        self.discriminator = discriminator
        self.vocab = vocab
        self.config = config

    def solver_params(self) -> list[Parameter]:
        """Everything the solver-side optimizer updates: encoder, decoder,
        analogy heads."""
        out = self.encoder.params() + self.decoder.params()
        for k in sorted(self.heads):
            out += self.heads[k].params()
        return out

    def discriminator_params(self) -> list[Parameter]:
        return self.sol_encoder.params() + self.discriminator.params()

    def all_params(self) -> list[Parameter]:
        return self.solver_params() + self.discriminator_params()

    def named_params(self) -> dict[str, Parameter]:
        out = {}
        for p in self.all_params():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out


def build_model(vocab: Vocabulary, config: ModelConfig = ModelConfig(),
                seed: int | np.random.SeedSequence = 0,
                levels=(1, 2)) -> ModelBundle:
    """Deterministically initialize a bundle.

    Each component draws from its own substream of the seed, so e.g. the
    encoder comes out identical whether or not analogy heads exist.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    enc_ss, dec_ss, heads_ss, disc_ss = ss.spawn(4)
    encoder = ProblemEncoder(np.random.default_rng(enc_ss), vocab.n_words,
                             config.emb_dim, config.hidden_dim)
    decoder = PrefixDecoder(np.random.default_rng(dec_ss), vocab.n_decoder_tokens,
                            config.emb_dim, config.hidden_dim)
    level_streams = heads_ss.spawn(3)
    heads = {}
    for k in sorted(set(levels)):
        if k not in (1, 2, 3):
            raise ValueError(f"analogy level must be 1, 2 or 3, got {k}")
        heads[k] = AnalogyHead(np.random.default_rng(level_streams[k - 1]),
                               config.hidden_dim, k)
    disc_rng = np.random.default_rng(disc_ss)
    sol_encoder = SolutionEncoder(disc_rng, vocab.n_decoder_tokens,
                                  config.emb_dim, config.hidden_dim)
    discriminator = BilinearDiscriminator(config.hidden_dim)
    return ModelBundle(encoder, decoder, heads, sol_encoder, discriminator,
                       vocab, config)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Single JSON document: version, config (model + vocabulary + head
    levels), and every named parameter with shape and values."""
    params = {}
    for name, p in sorted(bundle.named_params().items()):
        params[name] = {"shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "model": asdict(bundle.config),
            "vocab": bundle.vocab.to_dict(),
            "levels": sorted(bundle.heads),
        },
        "parameters": params,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> ModelBundle:
    """Rebuild a bundle from save_checkpoint output; shapes are validated
    against the freshly constructed model."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = ModelConfig(**doc["config"]["model"])
    vocab = Vocabulary.from_dict(doc["config"]["vocab"])
    bundle = build_model(vocab, config, seed=0, levels=tuple(doc["config"]["levels"]))
    named = bundle.named_params()
    stored = doc["parameters"]
    missing = sorted(set(named) - set(stored))
    extra = sorted(set(stored) - set(named))
    if missing or extra:
        raise ValueError(f"checkpoint parameter mismatch: missing {missing}, unexpected {extra}")
    for name, p in named.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {shape} != model shape {p.data.shape}")
        p.data = np.array(entry["values"], dtype=np.float64).reshape(shape)
    return bundle
