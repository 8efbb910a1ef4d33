"""Dynamic-regression residual modeling for multistep spatiotemporal forecasts.

A bilinear seasonal autoregression on matrix-valued residuals plus a
matrix-normal error model, trained jointly with a pluggable base forecaster
through a composed loss. Submodules: ``matnorm``, ``residual_ar``,
``forecasters``, ``training``, ``datagen``, ``diagnostics``, ``figures``,
``cli``.
"""

__version__ = "0.1.0"
