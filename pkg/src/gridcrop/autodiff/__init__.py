from .gradcheck import finite_difference_check
from .ops import (
    DegenerateVarianceError,
    add,
    bilinear_resize,
    channel_concat,
    channel_norm,
    channel_split,
    conv2d,
    flatten,
    fully_connected,
    huber_loss,
    relu,
    reshape,
    roi_align,
    rod_align,
    weighted_sum,
)
from .optim import AdamState, adam_step
from .serialize import dump_params, load_params
from .tensor import Tensor, as_tensor
