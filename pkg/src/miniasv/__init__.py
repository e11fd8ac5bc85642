"""miniasv: a desk-scale speaker-verification lab.

Generalized multi-head / multi-query attentive statistics pooling, sub-center
additive-margin losses with an inter-topK penalty, EER/minDCF trial scoring,
and a deterministic synthetic training harness. Every gradient is written by
hand and verified against central finite differences.
"""

from .backend import active_backend
from .encoder import EncoderConfig
from .margin_loss import (
    ClassCenters,
    LossConfig,
    MarginSchedule,
    averaged_margin,
    cosine_logits,
    inter_topk_loss,
    loss_equivalent_form,
    margin_schedule,
)
from .metrics import (
    EvalReport,
    TrialList,
    compute_eer,
    compute_min_dcf,
    cosine_score,
)
from .pooling import (
    PoolingConfig,
    PoolingParams,
    attention_weights,
    init_pooling_params,
    mqmha_backward,
    mqmha_forward,
    statistics_pool,
)
from .synth import SyntheticSpeakerSpec, generate_dataset
from .optim import TrainConfig
from .tensor import finite_diff_check, matmul, relu, softmax_axis
from .train import evaluate, train

__version__ = "0.1.0"
