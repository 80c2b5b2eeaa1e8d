"""frametrack: frame reference tracking for goal-oriented dialogue.

Given the frames created so far in a dialogue plus the current user turn's
utterance and dialogue-act annotations, predicts which frame each
act-slot-value triple and each act references, including the creation of a
new frame. Ships a trainable neural tracker, a deterministic rule baseline,
a 10-fold training/evaluation harness, a lesion-study harness, and a
synthetic corpus generator.
"""

import os

# Tiny matrices throughout; BLAS threading only adds overhead and puts
# bit-for-bit reproducibility of training at risk.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

__version__ = "0.1.0"
