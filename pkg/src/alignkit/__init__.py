"""alignkit: multilingual word alignment from contextual embeddings.

Pipeline: encode sentence pairs with a frozen transformer encoder
(plus small trainable adapters), build a token similarity matrix,
extract bidirectionally-thresholded links, merge subwords to words,
and score against gold alignments with AER.
"""

__version__ = "0.1.0"
