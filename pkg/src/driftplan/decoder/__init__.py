from .mixer import ConditionEmbed, MixerBlock, MixerDecoder, Readout, sinusoid
from .planner import (
    GenerationError,
    Planner,
    ProposalSet,
    assemble_input,
    condition_embed,
    generate,
    mixer_forward,
)

__all__ = [
    "ConditionEmbed", "MixerBlock", "MixerDecoder", "Readout", "sinusoid", "GenerationError",
    "Planner", "ProposalSet", "assemble_input", "condition_embed", "generate", "mixer_forward",
]
