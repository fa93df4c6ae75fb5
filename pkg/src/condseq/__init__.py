"""condseq: conditioned attention encoder-decoder toolkit.

From-scratch sequence recognition experiments on a synthetic
multi-dialect, multi-domain corpus: reverse-mode autodiff, BPE
tokenization, an LSTM attention encoder-decoder with categorical
feature conditioning, block-momentum multi-worker SGD, expected-risk
fine-tuning, beam-search decoding and a CER experiment matrix.
"""

from ._kernels import BACKEND, HAVE_COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_COMPILED", "__version__"]
