"""Joint surgical tool-presence detection and phase recognition.

A two-branch recurrent convolutional network with a bidirectional-KL
correlation loss, plus the synthetic workflow data generator, staged
training strategies and evaluation metrics that go with it. The heavy
lifting lives in the compiled extension; this package re-exports it.
"""

from mtrcnet._core import (  # noqa: F401
    Activation,
    AlignmentError,
    ArchConfig,
    ConfigError,
    ConvStage,
    DimensionError,
    IoError,
    MappingSource,
    ModelParams,
    ParseFileError,
    WorkflowSpec,
    average_precision,
    bernoulli_kl,
    confusion_matrix,
    cooccurrence_matrix,
    correlation_loss,
    evaluate,
    f1_score,
    forward,
    generate_dataset,
    generate_workflow,
    init_parameters,
    load_params,
    phase_loss,
    phase_pr_re,
    predict,
    render_frame,
    sample_tools,
    tool_loss,
    total_loss,
    train,
    video_accuracy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
