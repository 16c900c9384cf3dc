"""Training-free layout calibration for text-to-image cross-attention maps.

Parses spatial-relation requirements out of a prompt into a target layout,
detects layout inconsistencies on merged cross-attention maps, and
rectifies them by relocating and re-weighting activations, verified end to
end against a deterministic synthetic denoiser.
"""

from .attention import (
    AttnMap,
    AttnStack,
    center_of_mass,
    check_discrepancy,
    layered_merge,
    locate_region,
    probs_from_logits,
    temporal_merge,
)
from .bench import BenchConfig, BenchPrompt, generate_benchmark, sample_prompt
from .geometry import PixelRegion, RelBox, to_pixel_region
from .layout import (
    ParsedLayout,
    SemanticTree,
    allocate_layout,
    assign_superlative_box,
    build_semantic_tree,
    layout_from_json,
    layout_to_json,
    plan_layout,
)
from .parsing import (
    ObjectPhrase,
    RelationSet,
    detect_layout_requirement,
    extract_objects,
    parse_relations,
    tokenize,
)
from .rectify import (
    CalibrationConfig,
    CalibrationReport,
    CalibrationSession,
    Phase,
    RectificationPlan,
    inter_adjust,
    intra_adjust,
    rectify_layer,
    rectify_token_grids,
    run_calibration,
    transfer_activation,
)
from .simulate import (
    SimResult,
    SimScene,
    SimSource,
    brute_force_locate,
    evaluate_layout,
    run_scene,
    scene_for_prompt,
    synth_step,
)
from .tensorio import read_stacks, write_stacks
from .vocab import RelationVocabulary, default_vocabulary, load_vocabulary

__version__ = "0.1.0"
