"""Phase machine of the self-training loop.

``warmup -> labeling -> adapting -> labeling -> ... -> finished``; ``labeling``
is only reachable while rounds remain, so ``rounds = 0`` goes straight from
``warmup`` to ``finished``.
"""

from collections.abc import Callable
from enum import StrEnum

from transitions import Machine


class Phase(StrEnum):
    WARMUP = "warmup"
    LABELING = "labeling"
    ADAPTING = "adapting"
    FINISHED = "finished"


class PhaseSchedule:
    """Drives the round callbacks of a trainer.

    Args:
        rounds: Number of self-training rounds.
        on_labeling: Called with the 1-based round on entering ``labeling``.
        on_adapting: Called with the round on entering ``adapting``.
    """

    state: str

    def __init__(
        self,
        rounds: int,
        on_labeling: Callable[[int], None],
        on_adapting: Callable[[int], None],
    ) -> None:
        self.rounds = rounds
        self.round = 0
        self._on_labeling = on_labeling
        self._on_adapting = on_adapting
        self.machine = Machine(
            model=self,
            states=[
                Phase.WARMUP.value,
                {"name": Phase.LABELING.value, "on_enter": "_enter_labeling"},
                {"name": Phase.ADAPTING.value, "on_enter": "_enter_adapting"},
                Phase.FINISHED.value,
            ],
            initial=Phase.WARMUP.value,
            auto_transitions=False,
        )
        for source in (Phase.WARMUP, Phase.ADAPTING):
            self.machine.add_transition(
                "advance", source.value, Phase.LABELING.value, conditions="has_rounds_left"
            )
            self.machine.add_transition("advance", source.value, Phase.FINISHED.value)
        self.machine.add_transition("advance", Phase.LABELING.value, Phase.ADAPTING.value)

    @property
    def phase(self) -> Phase:
        return Phase(self.state)

    def has_rounds_left(self) -> bool:
        return self.round < self.rounds

    def _enter_labeling(self) -> None:
        self.round += 1
        self._on_labeling(self.round)

    def _enter_adapting(self) -> None:
        self._on_adapting(self.round)

    def run(self) -> None:
        """Advance until ``finished``."""
        while self.phase is not Phase.FINISHED:
            self.advance()  # type: ignore[attr-defined]
