"""Exception types shared across the planning stages."""


class PlanningError(RuntimeError):
    """A planning stage failed; the repetition executive treats this as a
    consumed repetition rather than a crash."""


class NoPathError(PlanningError):
    """Grid search found no path within the penetration cap."""


class RefinementError(PlanningError):
    """Path refinement diverged or received inconsistent inputs."""


class SynthesisError(PlanningError):
    """Control synthesis failed to produce a finite objective."""


class PregraspError(PlanningError):
    """No collision-free pre-grasp sample was found."""
