"""Masked consistency distillation for discrete diffusion, at toy scale.

Modules: ``schedule`` (signal schedule and latent calibration), ``duality``
(latent projection and Monte Carlo checks), ``masking`` (scalar-locked
masks), ``denoiser``, ``losses``, ``trainer``, ``sampler``, ``evaluation``
(synthetic source and oracle perplexity), ``checkpoint``, ``config``, ``cli``.
Torch is imported lazily by the modules that need it.
"""

__version__ = "0.1.0"
