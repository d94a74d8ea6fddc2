from .dlt import ProjectionModel, estimate_projection_dlt, fit_dlt
from .matching import Correspondence, match_descriptors
from .ransac import RegistrationResult, adaptive_iterations, ransac_register
from .sprt import SprtConfig, SprtResult, sprt_evaluate, sprt_test
