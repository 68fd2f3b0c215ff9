"""gencrs: a desk-scale generative conversational recommender.

Items are quantized into discrete semantic IDs by a residual-quantized
autoencoder (with collision resolution so every item's ID is unique),
dialogs are rewritten into structured mode/item/response token sequences,
a small autoregressive language model is trained on them from scratch, and
recommendations come out of trie-constrained beam search inside generation.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
