"""On-line signature verification toolkit.

Pipeline: raw pen samples -> 23 time functions -> z-normalization -> DTW
pre-alignment -> either a path-normalized DTW dissimilarity (baseline) or a
Siamese bidirectional-GRU scorer trained from scratch. The protocol layer
builds benchmark comparisons and reports EER/DET results.
"""

__version__ = "0.1.0"
