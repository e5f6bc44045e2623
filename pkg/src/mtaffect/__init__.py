"""Semi-supervised multi-task learning with an EMA teacher and self-cure weighting.

Modules: ``autodiff`` (tape-based gradients), ``model``, ``selfcure``,
``losses``, ``teacher``, ``data``, ``metrics``, ``optim``, ``trainer`` and
the ``cli`` entry point.
"""

__version__ = "0.1.0"
