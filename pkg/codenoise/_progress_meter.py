import abc
import importlib.util
from typing import Any, Generic, TypeVar

import equinox as eqx

from ._custom_types import RealScalarLike


_State = TypeVar("_State")


class AbstractProgressMeter(eqx.Module, Generic[_State]):
    """Progress meters used to indicate how far along a sampling, inversion or training
    loop is. Typically these perform some kind of printout as the loop progresses.

    Unlike the loops they report on, meters run on the host: every ladder in this
    library is a Python loop over compiled per-clip steps.
    """

    @abc.abstractmethod
    def init(self) -> _State:
        """Initialises the state for a new progress meter.

        **Arguments:**

        Nothing.

        **Returns:**

        The initial state for the progress meter.
        """

    @abc.abstractmethod
    def step(self, state: _State, progress: float) -> _State:
        """Updates the progress meter. Called once per rung of a ladder, or once per
        epoch of training.

        **Arguments:**

        - `state`: the state from the previous step.
        - `progress`: how far along the loop is, as a number in `[0, 1]`.

        **Returns:**

        The updated state. In addition, the meter is expected to update as a
        side-effect.
        """

    @abc.abstractmethod
    def close(self, state: _State):
        """Closes the progress meter. Called at the end of the loop.

        **Arguments:**

        - `state`: the final state from the end of the loop.

        **Returns:**

        None.
        """


class NoProgressMeter(AbstractProgressMeter):
    """Indicates that no progress meter should be displayed."""

    def init(self) -> None:
        return None

    def step(self, state, progress: float) -> None:
        del progress
        return state

    def close(self, state):
        del state


NoProgressMeter.__init__.__doc__ = """**Arguments:**

Nothing.
"""


class TextProgressMeter(AbstractProgressMeter):
    """A text progress meter, printing out e.g.:
    ```
    0.00%
    2.00%
    5.30%
    ...
    100.00%
    ```
    """

    minimum_increase: RealScalarLike = 0.02

    def init(self) -> list[float]:
        print("0.00%")
        return [0.0]

    def step(self, state: list[float], progress: float) -> list[float]:
        # We only print if the progress has increased by at least `minimum_increase` to
        # avoid flooding the user with too many updates.
        if progress - state[0] > self.minimum_increase or progress == 1:
            print(f"{100 * progress:.2f}%")
            return [progress]
        return state

    def close(self, state: list[float]):
        if state[0] != 1:
            print("100.00%")


TextProgressMeter.__init__.__doc__ = """**Arguments:**

- `minimum_increase`: the minimum amount the progress has to have increased in order to
    print out a new line. The progress starts at 0 at the beginning of the loop, and
    increases to 1 at the end. Defaults to `0.02`, so that a new line is printed each
    time the progress increases another 2%.
"""


class TqdmProgressMeter(AbstractProgressMeter):
    """Uses tqdm to display a progress bar."""

    refresh_steps: int = 20

    def __check_init__(self):
        if importlib.util.find_spec("tqdm") is None:
            raise ValueError(
                "Cannot use `codenoise.TqdmProgressMeter` without `tqdm` installed. "
                "Install it via `pip install tqdm`."
            )

    def init(self) -> dict[str, Any]:
        import tqdm  # pyright: ignore

        bar_format = (
            "{percentage:.2f}%|{bar}| [{elapsed}<{remaining}, {rate_fmt}{postfix}]"
        )
        bar = tqdm.tqdm(total=100, unit="%", bar_format=bar_format)
        return dict(bar=bar, step=0)

    def step(self, state: dict[str, Any], progress: float) -> dict[str, Any]:
        # Only refresh every `refresh_steps` steps, as redrawing is comparatively
        # expensive for the small per-rung workloads we have.
        if state["step"] % self.refresh_steps == 0:
            bar = state["bar"]
            bar.n = round(100 * float(progress), 2)
            bar.update(n=0)
            bar.refresh()
        return dict(bar=state["bar"], step=state["step"] + 1)

    def close(self, state: dict[str, Any]):
        bar = state["bar"]
        bar.n = 100.0
        bar.update(n=0)
        bar.close()


TqdmProgressMeter.__init__.__doc__ = """**Arguments:**

- `refresh_steps`: the number of steps between refreshing the bar. Used to limit how
    frequently the bar update is performed.
"""
