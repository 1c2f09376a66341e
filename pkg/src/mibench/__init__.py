"""Motor-imagery EEG classification experiments.

A declarative builder compiles flat key-value network specifications into
trainable CNNs backed by from-scratch numpy kernels; a filter-bank CSP
baseline, cross-validation schemes, and tabular/graphical reporting sit
alongside so both approaches can be compared under identical protocols.
"""

__version__ = "0.1.0"
