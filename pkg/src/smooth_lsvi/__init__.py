"""Smooth-MDP policy learning with perturbed least-squares value iteration.

Core library modules:

- ``harmonics``: trigonometric basis, quadrature, smoothing kernels.
- ``kernel_sampler``: signed-kernel decomposition and perturbation sampling.
- ``design``: Frank-Wolfe quasi-optimal experimental design.
- ``env``: generative-model MDP benchmarks and the grid DP oracle.
- ``lsvi``: the training pipeline and greedy policy extraction.

The ``service`` subpackage exposes the operations over FastAPI; ``cli`` is a
thin client over the same service layer.
"""

__version__ = "0.1.0"
