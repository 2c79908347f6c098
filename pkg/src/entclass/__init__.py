"""Sample-efficient SLOCC entanglement classification with from-scratch CNN-BiLSTM models."""

__version__ = "0.1.0"
