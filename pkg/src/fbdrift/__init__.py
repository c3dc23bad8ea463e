"""fbdrift: desk-scale numerics for singular (form-bounded) SDE drifts.

Subsystems: drift families and their norms (:mod:`fbdrift.drifts`,
:mod:`fbdrift.formbound`), smooth approximation sequences
(:mod:`fbdrift.mollify`), backward-parabolic energy estimates
(:mod:`fbdrift.pde`), path ensembles with flow and occupation statistics
(:mod:`fbdrift.sde`, :mod:`fbdrift.flows`, :mod:`fbdrift.krylov`,
:mod:`fbdrift.studies`), and the config-driven experiment runner
(:mod:`fbdrift.cli`).
"""

__version__ = "0.1.0"
