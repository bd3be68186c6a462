from typing import TYPE_CHECKING, Union

import numpy as np
from jaxtyping import Array, ArrayLike, Bool, Float, Int, Real


if TYPE_CHECKING:
    BoolScalarLike = Union[bool, Array, np.ndarray]
    IntScalarLike = Union[int, Array, np.ndarray]
    RealScalarLike = Union[bool, int, float, Array, np.ndarray]
else:
    BoolScalarLike = Bool[ArrayLike, ""]
    IntScalarLike = Int[ArrayLike, ""]
    RealScalarLike = Real[ArrayLike, ""]

# A condition vector `c`; all zeros is the null condition `∅`.
ConditionLike = Float[ArrayLike, " dim"]
# A clip identifier `e`; all zeros is the dropped identifier.
IdentifierLike = Float[ArrayLike, " id_dim"]
