"""Lane-graph extraction as autoregressive token-sequence prediction."""

from .graph import (
    BevExtent,
    CycleError,
    DEFAULT_EXTENT,
    Edge,
    LaneGraph,
    Vec2,
    bezier_point,
    disjoint_union,
    load_graph,
    sample_edge,
    save_graph,
    topological_order,
    validate,
)
from .codec import (
    CapacityError,
    DecodeDiagnostics,
    OrderKind,
    SerializationOrder,
    TokenSequence,
    VocabSpec,
    decode,
    dequantize,
    encode,
    load_sequence,
    order_vertices,
    quantize,
    save_sequence,
)
from .datagen import (
    GenConfig,
    SceneSample,
    augment,
    generate_graph,
    load_raster,
    load_scene,
    rasterize,
    read_manifest,
    save_raster,
    scene_rng,
    write_corpus,
)
from .metrics import (
    EdgeMatch,
    EvalReport,
    connectivity,
    detection_ratio,
    evaluate,
    match_centerlines,
    precision_recall,
    symmetric_distance,
)
from .model import (
    Checkpoint,
    LaneSeqDecoder,
    LossWeights,
    ModelConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    make_training_tensors,
    save_checkpoint,
    sequence_loss,
    train,
)
from .inference import (
    GenerationResult,
    SamplerConfig,
    UnionResult,
    cfg_logits,
    generate,
    generate_batch,
    generate_union,
    nucleus_sample,
    render_overlay_svg,
)

__version__ = "0.1.0"
