"""Process-wide counters instrumenting the expensive pipeline stages.

Tests use these to assert the cost contract (one forward integration and one
backward pass per gradient evaluation) and the reverse-pass memory ceiling.
Counting is observational only and never changes numerical behavior.
"""

from dataclasses import dataclass, field


@dataclass
class Counters:
    forward_integrations: int = 0
    adjoint_passes: int = 0
    rhs_evaluations: int = 0
    adjoint_rhs_evaluations: int = 0
    peak_retained_states: int = 0

    def reset(self) -> None:
        self.forward_integrations = 0
        self.adjoint_passes = 0
        self.rhs_evaluations = 0
        self.adjoint_rhs_evaluations = 0
        self.peak_retained_states = 0

    def note_retained_states(self, n: int) -> None:
        if n > self.peak_retained_states:
            self.peak_retained_states = n

    def snapshot(self) -> dict:
        return {
            "forward_integrations": self.forward_integrations,
            "adjoint_passes": self.adjoint_passes,
            "rhs_evaluations": self.rhs_evaluations,
            "adjoint_rhs_evaluations": self.adjoint_rhs_evaluations,
            "peak_retained_states": self.peak_retained_states,
        }


#: Module-level singleton; reset() it around a measured section.
counters = Counters()
