"""Entity Embedding Toolkit - categorical embeddings for tabular regression.

Learns entity embeddings of categorical variables inside a small neural
network, benchmarks them against KNN, random forest and gradient boosted
tree baselines, and analyses the geometry of the learned embedding spaces.
"""

__version__ = "1.0.0"
__author__ = "Entity Embedding Toolkit Team"
