"""Time-multiplexed echo-state network driven by a spin-torque vortex oscillator."""

__version__ = "0.1.0"
