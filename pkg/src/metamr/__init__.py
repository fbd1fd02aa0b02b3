"""Cross-lingual AMR parsing at desk scale.

The package covers the full loop: PENMAN graph parsing and serialization,
graph linearization for sequence models, Smatch scoring, a small reverse-mode
autodiff engine with a GRU attention seq2seq on top, first-order meta-learning
(MAML) and joint-training baselines, synthetic cipher-language generation, and
k-shot transfer evaluation. Everything is seed-deterministic.
"""

__version__ = "0.1.0"
