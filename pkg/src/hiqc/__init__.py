"""Semi-supervised hierarchical query classification.

A label-graph GCN with attention fusion, intra/inter-class contrastive
training and neighbourhood-aware self-training, in plain numpy.
"""

__version__ = "0.1.0"
