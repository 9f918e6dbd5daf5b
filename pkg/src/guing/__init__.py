"""Text-to-GUI retrieval engine and evaluation workbench."""

from .core import (
    DEFAULT_DIM,
    BoundingBox,
    EmbeddingVector,
    Modality,
    OcrBox,
    ScreenshotRecord,
    Source,
    cosine_similarity,
    iou,
    l2_normalize,
)
from .errors import GuingError
from .gateway import (
    HttpEncoderClient,
    StubEncoderClient,
    load_embeddings,
    read_embeddings,
    stub_encode,
    write_embeddings,
)
from .index import (
    ExactIndex,
    IvfIndex,
    SearchResult,
    build_exact,
    build_ivf,
    default_ivf_params,
    kmeans,
    load_index,
    save_index,
    search_exact,
    search_ivf,
)
from .learn import (
    AdamW,
    AdamWParams,
    ContrastiveBatch,
    LinearEncoder,
    LogitScaleSpec,
    TrainConfig,
    info_nce_loss,
    train_contrastive,
    train_linear_probe,
    train_sketch_adapter,
    zero_shot_classify,
)
from .evaluation import (
    JudgmentSet,
    RankedList,
    aggregate_judgments,
    classification_report,
    detection_pr_at_iou,
    hits_at_k,
    mrr,
    precision_at_k,
    recall_at_k,
)
from .pipeline import (
    CaptionRecord,
    ClassificationResult,
    DetectionResult,
    RawImageEntry,
    RouteLabel,
    StageReport,
    assemble_caption,
    crop_to_box,
    dedup_by_hash,
    filter_by_aspect_ratio,
    postprocess_captions,
    route_by_classification,
    run_pipeline,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
