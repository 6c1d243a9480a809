"""Desk-scale lab for open-set semi-supervised learning.

Synthetic open-set datasets, a small manually-differentiated MLP,
subspace-angle OOD scoring, Beta-mixture ID/OOD estimation via batch
iterated method of moments, probabilistic mask sampling, and the full
multi-loss training loop with baselines and ablations.
"""

__version__ = "0.1.0"
