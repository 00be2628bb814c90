"""chiselforge: corpus-to-evaluation pipeline for Chisel code generation.

Stages: corpus filtering, documentation indexing, prompt-guided trace
distillation through a teacher model, dataset mixing, staged correctness
evaluation (compile / elaborate / simulate), and judge-based variability
scoring. Each stage is exposed as a `forge` CLI subcommand.
"""

__version__ = "0.1.0"
