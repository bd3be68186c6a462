from typing import Any

import equinox.internal as eqxi
from jaxtyping import Array, Bool


_MESSAGES = dict(
    nonfinite_loss=(
        "The training loss became NaN or infinite. Try lowering the learning rate or "
        "the batch size."
    ),
    nonfinite_sample=(
        "The sampler produced non-finite values. Check the denoiser and the guidance "
        "scale."
    ),
)


class RESULTS(eqxi.Enumeration):  # pyright: ignore
    successful = ""
    nonfinite_loss = _MESSAGES["nonfinite_loss"]
    nonfinite_sample = _MESSAGES["nonfinite_sample"]


def is_successful(result: RESULTS) -> Bool[Array, ""]:
    return result == RESULTS.successful


def result_message(result: RESULTS) -> str:
    for name, message in _MESSAGES.items():
        if bool(result == getattr(RESULTS, name)):
            return message
    return ""


class NumericalError(RuntimeError):
    """Raised when a computation produces NaN or infinite values.

    **Attributes:**

    - `result`: the [`codenoise.RESULTS`][] entry describing the failure.
    - `diagnostic`: a JSON-serialisable dictionary of whatever was known at the point
        of failure (epoch, step index, recent losses...).
    """

    def __init__(self, result: RESULTS, diagnostic: dict[str, Any]):
        super().__init__(result_message(result))
        self.result = result
        self.diagnostic = diagnostic
