"""synthdial: generation, curation, and evaluation of synthetic empathetic dialogue data.

Pipeline: generate candidate responses over a dialogue corpus, keep the ones
whose embedding-cosine similarity to a reference responder clears a threshold,
pick a diverse subset with k-center greedy, score the result with LLM judges,
and evaluate response sets with a from-scratch metric suite.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
