import abc
from typing import Optional

import equinox as eqx
from jaxtyping import Array, Float

from .._custom_types import ConditionLike, IdentifierLike, IntScalarLike
from .._sequence import Clip


class AbstractDenoiser(eqx.Module):
    """Abstract base class for all short-clip denoisers.

    A denoiser predicts the noise `ε` that was added to a clip at diffusion step `t`,
    given a condition vector and, optionally, a clip identifier. Any subclass can be
    passed to [`codenoise.sample_long`][], [`codenoise.invert_long`][] and
    [`codenoise.edit_long`][].

    Denoisers must be deterministic and shape-preserving. They are called
    concurrently from several threads, so must not mutate any state.
    """

    @property
    def identifier_dim(self) -> Optional[int]:
        """The dimension of the clip identifiers this denoiser accepts, or `None` if it
        ignores them."""
        return None

    @abc.abstractmethod
    def __call__(
        self,
        clip: Clip,
        t: IntScalarLike,
        condition: ConditionLike,
        identifier: Optional[IdentifierLike] = None,
    ) -> Float[Array, "window *shape"]:
        """Predicts the noise in `clip`.

        **Arguments:**

        - `clip`: the noisy [`codenoise.Clip`][], at step `t`.
        - `t`: the diffusion step, `1 <= t <= T`.
        - `condition`: the condition vector `c^i`. The all-zeros vector is `∅`.
        - `identifier`: the clip identifier `e^i`, if any. `None` and the all-zeros
            vector are both treated as `∅`.

        **Returns:**

        An array with the same shape as `clip.frames`.
        """
