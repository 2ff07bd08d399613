"""Removability of discrete real spectra under rank-one perturbations.

Decide whether a spectrum can be annihilated, build the perturbation data
explicitly, and check spectral emptiness numerically.
"""
__version__ = "0.1.0"

from .errors import InputError, NumericalError, VolspecError  # noqa: E402
from .spectra import FamilySpec, Spectrum, Tail, generate  # noqa: E402
from .canonical_product import GeneratingFunction  # noqa: E402
from .krein_diag import (NONREMOVABLE, INCONCLUSIVE, REMOVABLE, RemovabilityReport,  # noqa: E402
                         krein_terms, lp_forecast, verdict)
from .perturb_synth import (PerturbationData, SmoothSynthSpec, arbitrary_data,  # noqa: E402
                            flipped, livsic_data, synthesize, synthesize_smooth)
from .model_funcs import ModelEvaluator, WindingReport  # noqa: E402
from .finite_section import (FiniteSection, build, collapse_profile,  # noqa: E402
                             eigenvalues_dense, eigenvalues_secular)
from . import nustar  # noqa: E402

__all__ = [
    "__version__", "VolspecError", "InputError", "NumericalError",
    "FamilySpec", "Spectrum", "Tail", "generate", "GeneratingFunction",
    "REMOVABLE", "NONREMOVABLE", "INCONCLUSIVE", "RemovabilityReport", "krein_terms",
    "lp_forecast", "verdict", "PerturbationData", "SmoothSynthSpec", "arbitrary_data", "flipped",
    "livsic_data", "synthesize", "synthesize_smooth", "ModelEvaluator", "WindingReport",
    "FiniteSection", "build", "collapse_profile", "eigenvalues_dense", "eigenvalues_secular",
    "nustar",
]
