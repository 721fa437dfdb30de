"""Block-diffusion language model lab: python bindings over the C++ core."""

from ._core import (  # noqa: F401
    BlockdiffError,
    DecodeResult,
    FindingScore,
    FlopsLedger,
    FlopsModel,
    JointDistribution,
    ModelConfig,
    ModelParams,
    RadSavings,
    ReportGrammar,
    ReportRecord,
    TrainConfig,
    Vocabulary,
    adapt_rad,
    bias_curve,
    build_vocabulary,
    decode,
    default_grammar,
    finding_f1,
    generate_sample,
    init_params,
    load_checkpoint,
    make_corpus,
    mean_field_bias,
    normalize_report,
    rad_savings,
    read_dataset,
    rouge_l,
    save_checkpoint,
    train_ar,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
