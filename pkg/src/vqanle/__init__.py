"""Synthetic VQA-NLE triplet generation, validation, and evaluation toolkit."""

from .annotate import AnnotationStyle, annotate_bbox, encode_for_transport
from .corpus import (
    ImageRecord,
    SamplingPlan,
    SceneGraphObject,
    build_sampling_plan,
    filter_objects,
    load_corpus,
)
from .gateway import DecodingParams, GenerationRequest, MockGateway, RemoteGateway
from .metrics import (
    CorpusStats,
    ValidityRules,
    corpus_stats,
    dedup_triplets,
    efficiency_report,
    gwet_ac2,
    jsd,
    length_histogram,
    pearson_lengths,
    rouge_l,
    similarity_report,
    validate_triplet,
)
from .pipelines import (
    CandidateSet,
    MultiStepPipeline,
    SingleStepPipeline,
    SingleStepVipPipeline,
    gsc_select,
    parse_triplet,
    unigram_similarity,
)
from .prompts import PrefixSchedule, PromptTemplate, build_prefix_schedule, render_prompt
from .records import SlotRecord, Triplet, TripletMeta
from .runner import RunConfig, load_config, read_dataset, run_from_config, write_dataset

__version__ = "0.1.0"
