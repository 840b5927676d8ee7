"""tioforge: desk-scale thermal-inertial odometry with visual hallucination.

Synthetic paired-modality sensor simulation, a gated multimodal fusion
odometry network built on a small reverse-mode autodiff core, two-stage
distillation training, and trajectory-metric evaluation tooling.
"""

__version__ = "0.1.0"
