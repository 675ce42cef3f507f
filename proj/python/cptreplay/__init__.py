"""Continual pre-training engine: disk-backed experience replay, Reptile
meta-updates, synthetic Markov task streams and stability/plasticity metrics.

The heavy lifting lives in the C++ extension module ``cptreplay._core``.
"""

from cptreplay._core import (  # noqa: F401
    AlignmentResult,
    BufferConfig,
    BufferState,
    Gradients,
    MetricsLog,
    MetricsRecord,
    ModelDims,
    ModelParams,
    PowerLawFit,
    ReplayBuffer,
    SampleBatch,
    ScheduleConfig,
    TaskSpec,
    TaskStream,
    TrainConfig,
    TrainCounters,
    TrainMode,
    TrainResult,
    fit_power_law,
    forgetting_score,
    grad_alignment,
    init_params,
    joint_train,
    learned_loss,
    load_params,
    loss,
    loss_and_grad,
    lr_at,
    make_stream,
    make_task,
    mean_end_of_run_forgetting,
    mean_row_kl,
    retained_loss,
    run_experiment,
    sample_sequences,
    save_params,
    train,
    validation_set,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
