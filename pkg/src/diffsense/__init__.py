"""Diffusion-model posterior sampling for signal separation and active sensing.

Subpackages: :mod:`priors` (score providers), :mod:`samplers` (guided reverse
diffusion), :mod:`active` (measurement selection); modules :mod:`sde`,
:mod:`operators`, :mod:`scenarios`, :mod:`dataset`, :mod:`metrics`,
:mod:`config` and the :mod:`cli` entry point.
"""

__version__ = "0.1.0"
