"""
Neural statistician: a hierarchical VAE over datasets.

Subpackages:
- core: tensor engine, optimizer, settings
- models: configs, distributions, networks, checkpoints
- services: corpora, training, inference-time algorithms
"""

__version__ = "0.1.0"
