"""Math word problem solver trained jointly with analogy identification
and solution discrimination auxiliaries.

Submodules:
  autodiff        tape-based reverse-mode gradients over float64 numpy
  nn              embeddings, linear layers, GRU cells
  optim           AdamW with decoupled weight decay
  expr            prefix equation trees, evaluation, infix parsing
  corpus          problem records, vocabulary, JSONL ingestion
  synth           deterministic synthetic problem generator
  analogy         signature index, pair sampling, MLP scoring heads
  discrimination  solution encoder, bilinear discriminator, negatives
  solver          BiGRU encoder, attention decoder, beam search
  model           bundle construction and JSON checkpoints
  train           joint training loop and run reports
  plots           PNG figures for reports
  cli             command line entry points
"""

from .corpus import ProblemRecord, Vocabulary, build_mask, build_vocab, ingest, emit
from .model import ModelBundle, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_synthetic
from .train import RunReport, TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "ProblemRecord",
    "Vocabulary",
    "build_mask",
    "build_vocab",
    "ingest",
    "emit",
    "ModelBundle",
    "ModelConfig",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "SynthConfig",
    "generate_synthetic",
    "RunReport",
    "TrainConfig",
    "Trainer",
    "train",
    "__version__",
]
