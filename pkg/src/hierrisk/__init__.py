"""Top-down reduction of hierarchical categorical risk factors.

The pipeline engineers per-category risk features (random-effect predictions
for damage rate and claim frequency) and label embeddings, clusters similar
categories level by level while preserving parent-child nesting, and
evaluates the reduced factor with a weighted mixed model, a concentration
Gini index and the loss ratio.
"""

__version__ = "0.1.0"
