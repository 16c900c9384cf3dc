"""Bridge between live diffusion pipelines and the layout calibration engine."""

from .hooks import (
    HookBinding,
    InterceptingProcessor,
    UnsupportedPipeline,
    attach,
    find_cross_attention_modules,
    infer_spatial,
)
from .tokens import HEAD_POLICY, build_token_map, handshake_json, remap_layout

__version__ = "0.1.0"
