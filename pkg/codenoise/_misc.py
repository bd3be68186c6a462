from typing import Any

import equinox as eqx
import jax
import jax.numpy as jnp
import numpy as np
from jaxtyping import Array, ArrayLike, PyTree

from ._custom_types import BoolScalarLike


def is_traced(x: Any) -> bool:
    return isinstance(x, jax.core.Tracer)


def error_if(x: PyTree, pred: BoolScalarLike, msg: str) -> PyTree:
    """As `eqx.error_if`, except that predicates known at trace time raise a
    `ValueError` straight away.

    Step indices and the like are usually plain Python integers, in which case we'd
    like a normal exception rather than a runtime error out of XLA.
    """
    if is_traced(pred):
        return eqx.error_if(x, pred, msg)
    if bool(np.any(np.asarray(pred))):
        raise ValueError(msg)
    return x


def check_same_shape(a: ArrayLike, b: ArrayLike, a_name: str, b_name: str) -> None:
    a_shape = jnp.shape(a)
    b_shape = jnp.shape(b)
    if a_shape != b_shape:
        raise ValueError(
            f"`{a_name}` and `{b_name}` must have the same shape, but got shapes "
            f"{a_shape} and {b_shape}."
        )


def check_step(t: Any, lower: int, upper: int, name: str, x: PyTree) -> PyTree:
    """Checks `lower <= t <= upper`, returning `x` (possibly with a runtime check
    attached)."""
    if isinstance(t, (int, np.integer)):
        if not lower <= t <= upper:
            raise ValueError(
                f"`{name}` must satisfy {lower} <= {name} <= {upper}, but got {t}."
            )
        return x
    t = jnp.asarray(t)
    return error_if(
        x, (t < lower) | (t > upper), f"`{name}` must lie in [{lower}, {upper}]."
    )


def left_broadcast_to(arr: ArrayLike, shape: tuple[int, ...]) -> Array:
    """As `jax.numpy.broadcast_to`, except that `arr` is lined up with the left-hand
    edge of `shape`, rather than the right-hand edge.
    """
    arr = jnp.asarray(arr)
    indices = tuple(slice(None) if i < arr.ndim else None for i in range(len(shape)))
    return jnp.broadcast_to(arr[indices], shape)
