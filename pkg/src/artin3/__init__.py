"""Artin patterns, descendant trees and 3-class tower identification.

Library layout:

    pcgroup    power-commutator presentations, collection, consistency
    structure  subgroups, series, abelian invariants, quotients, lattices
    transfer   Artin transfers, transfer kernels, Artin patterns
    genealogy  3-covers, descendant trees, automorphism actions, identification
    fieldlab   survey data for pure cubic-cyclotomic fields
    cli        the artin3 command line tool
"""

__version__ = "0.1.0"
