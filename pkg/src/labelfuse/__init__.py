"""labelfuse: multi-view semantic label fusion.

Translates per-frame segmentation predictions between heterogeneous label
taxonomies, fuses them with weighted per-pixel consensus voting, lifts the
consensus onto 3D point clouds through visibility-checked projection, and
evaluates label quality with ambiguity-aware confusion metrics. A synthetic
scene harness provides exact ground truth for testing at desk scale.
"""

from importlib import resources

from .spaces import (
    ClassDef,
    LabelSpace,
    LabelMap,
    MappingCase,
    NO_CORRESPONDENCE,
    One,
    Many,
    MappingTable,
    MappingError,
    TranslationPolicy,
    AmbiguousTranslationError,
    load_label_space,
    load_spaces,
    load_mapping,
    translate_map,
    validate_table,
)
from .consensus import (
    PredictorStream,
    ConsensusConfig,
    VoteGrid,
    cast_votes,
    resolve,
    consensus_frame,
)
from .geometry import (
    Intrinsics,
    Pose,
    Frame,
    project,
    unproject,
    visible,
    load_intrinsics,
    load_pose,
)
from .fusion import (
    LabeledPointCloud,
    SemanticVoxelGrid,
    lift_points,
    build_voxel_field,
    merge_grids,
    render_labels,
)
from .metrics import ConfusionMatrix, EvalReport, accumulate, report, eval_pointcloud
from . import scenegen

__version__ = "0.1.0"


def builtin_data_path(name: str):
    """Path to a shipped data file (mapping table, spaces dir, configs)."""
    return resources.files("labelfuse").joinpath("data", name)


def load_builtin_table() -> MappingTable:
    """The shipped five-space mapping table (wordnet canonical)."""
    base = resources.files("labelfuse").joinpath("data")
    spaces = load_spaces(base / "spaces")
    return load_mapping(base / "wordnet_mapping.csv", spaces)
