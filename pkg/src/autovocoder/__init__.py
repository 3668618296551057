"""Autovocoder: a waveform autoencoder decoded with a differentiable inverse STFT."""

__version__ = "0.1.0"
