"""Semantics-of-pixels joint source-channel coding, desk scale.

Trains an image codec end to end over a simulated AWGN channel, weighting
the reconstruction loss per pixel by gradient-derived semantic importance so
that a frozen downstream classifier stays accurate at the receiver.
"""

__version__ = "0.1.0"
