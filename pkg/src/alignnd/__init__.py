"""Graph neural networks over atoms, bonds, bond angles and dihedral angles
for predicting single-peak summaries of copper(II) aqua-complex spectra."""

__version__ = "0.1.0"
