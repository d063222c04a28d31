from .layers import (
    CELLS,
    ShapeError,
    bidirectional_backward,
    bidirectional_forward,
    dense_backward,
    dense_forward,
    recurrent_backward,
    recurrent_forward,
    recurrent_step,
)
from .loss import softmax, softmax_cross_entropy
from .network import (
    Architecture,
    CheckpointMismatch,
    NetworkParams,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zero_params,
)
from .optim import Adam, AdamState, adam_step, clip_by_global_norm
