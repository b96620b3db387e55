"""Source-free detector adaptation toolkit.

Everything runs on a small reverse-mode autodiff engine over float64 numpy
arrays, so results are deterministic and gradient checks can use tight
tolerances. The package covers the full loop: pretraining a toy query-based
detector, partitioning an unlabeled target domain by prediction variance,
adversarial feature alignment through gradient reversal, EMA student-teacher
self-training, detection metrics, and a capacity bound for the discriminator
stack.
"""

__version__ = "0.1.0"
