"""fusedet: open-set detection engine.

Fuses closed-set and open-set detector outputs, labels unclassified
background proposals with zero-shot text embeddings, refines boxes and
scores through a promptable segmenter, and evaluates grouped mAP/recall.
"""

__version__ = "0.1.0"
