"""Link-level simulator for semantic video transport over a LEO satellite relay.

Subpackages cover the physical layer (shadowed-Rician fading, amplify-and-forward
relay SNR, QPSK, LDPC), the erasure-tolerant semantic transport chain (quantized
symbol packing, per-block erasures, imputation-based reconstruction), the
capacity-constrained quantization planner, and a deterministic denoising sampler
with low-rank adapter training on a toy noise predictor.
"""

__version__ = "0.1.0"
