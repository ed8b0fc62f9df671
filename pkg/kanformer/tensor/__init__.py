from .tensor import (
    Tensor,
    Parameter,
    Tape,
    Function,
    backward,
    offset_of,
    index_of,
    resolve_dtype,
)
from .ops import (
    activation,
    add,
    sub,
    mul,
    div,
    negate,
    square,
    tanh,
    silu,
    exp,
    mean,
    matmul,
    reshape,
    transpose,
    softmax_axis,
    log_softmax,
    layer_norm,
    take,
    scatter_add_rows,
    concat,
)
from .gradcheck import finite_diff_gradcheck, gradcheck_parameters, GradcheckReport
