"""Nanopore blockade-current analysis toolkit.

Pipeline stages: synthetic trace generation -> wavelet denoising ->
statistical event detection -> Voigt-profile labeling -> CWT scaleogram
images -> compact CNN training -> pruning / int8 quantization -> evaluation.
"""

__version__ = "0.1.0"
