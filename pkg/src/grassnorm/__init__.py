"""Normed Grassmann algebras, Gaussian integration and regulator estimates on lattice tori."""
