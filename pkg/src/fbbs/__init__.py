"""Few-step generative site-specific beamforming: synthetic ray-based
channels, DFT probing prompts, a conditional average-velocity model with
two-stage distillation, brainstormed beam synthesis, baselines and
evaluation sweeps."""

__version__ = "0.1.0"
