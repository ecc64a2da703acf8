"""Alignment kernels: pure numpy forward maps, each paired with an adjoint."""

from ._common import (EDGE_POLICIES, EPS_DENOM, EPS_PROB, FA_MASS_FLOOR, RejectedInput,
                      one_hot)
from .energy import (EnergyGrads, EnergyParams, adjoint_context_vector, adjoint_energy,
                     adjoint_location_features, adjoint_softmax_alignment, check_memory,
                     compute_energy, context_vector, location_features, softmax_alignment)
from .forward import (ForwardAttentionState, adjoint_forward_attention_step,
                      forward_attention_step)
from .gmm import (DEFAULT_COMPONENTS, GmmAttentionState, GmmUpdates,
                  adjoint_gmm_attention_step, gmm_attention_step)
from .monotonic import (adjoint_ma_alignment_parallel, adjoint_ma_alignment_recursive,
                        adjoint_selection_probabilities, adjoint_sma_alignment, iterate,
                        ma_alignment_parallel, ma_alignment_recursive, selection_probabilities,
                        sma_alignment, sma_leak)

__all__ = [
    "EDGE_POLICIES", "EPS_DENOM", "EPS_PROB", "FA_MASS_FLOOR", "RejectedInput", "one_hot",
    "EnergyGrads", "EnergyParams", "check_memory", "compute_energy", "adjoint_energy",
    "softmax_alignment", "adjoint_softmax_alignment", "context_vector", "adjoint_context_vector",
    "location_features", "adjoint_location_features",
    "ForwardAttentionState", "forward_attention_step", "adjoint_forward_attention_step",
    "DEFAULT_COMPONENTS", "GmmAttentionState", "GmmUpdates", "gmm_attention_step",
    "adjoint_gmm_attention_step",
    "selection_probabilities", "adjoint_selection_probabilities",
    "ma_alignment_recursive", "adjoint_ma_alignment_recursive",
    "ma_alignment_parallel", "adjoint_ma_alignment_parallel",
    "sma_alignment", "adjoint_sma_alignment", "sma_leak", "iterate",
]
