"""Multilingual entity and relation extraction with routed language adapters.

A compact, dependency-light system: a float64 autodiff engine, a small
trainable transformer encoder, a cross-sentence aggregator, a router-mixed
bank of adapter sub-modules with top-k pruning at evaluation time, span-based
extraction heads, a synthetic multilingual corpus generator, two-stage
training, and an evaluation/ablation harness.
"""

__version__ = "0.1.0"
