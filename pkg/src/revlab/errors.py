"""Exception hierarchy for the lab.

Every numerical refusal gets its own class so scenario reports can name the
failure mode instead of burying it in a message string.
"""


class RevlabError(Exception):
    """Base class for all lab errors."""


# --- surface -----------------------------------------------------------

class PoleProximity(RevlabError):
    """Query too close to a profile pole."""


class OutOfChart(RevlabError):
    """Polar-coordinate cache does not cover the requested point."""


class GeometryInfeasible(RevlabError):
    """Profile construction parameters admit no valid profile."""


class SupportOverlap(RevlabError):
    """Perturbation supports intersect each other or a pole margin."""


class WaistNotStable(RevlabError):
    """Nose parameters produce no strictly stable waist circle."""


class Overcrowded(RevlabError):
    """Bump supports cannot be placed disjointly on the equator."""


# --- geodesics ---------------------------------------------------------

class PoleHit(RevlabError):
    """Trajectory entered the pole margin."""


class StepFailure(RevlabError):
    """Adaptive step control could not meet the local tolerance."""


class NoNeck(RevlabError):
    """Metric lacks the snowman neck structure an operation requires."""


class NoCrossing(RevlabError):
    """Path never crosses the equator."""


class NoConvergence(RevlabError):
    """Shooting/root-finding failed to converge."""


class ConjugateDegeneracy(RevlabError):
    """Shooting Jacobian is singular at the solution."""


# --- spectrum ----------------------------------------------------------

class NotAGeodesic(RevlabError):
    """Path fails the geodesic-residual tolerance."""


class UnresolvedNullity(RevlabError):
    """Grid refinement does not stabilise the nullity count."""


class CrossCheckMismatch(RevlabError):
    """Dirichlet eigenvalue count disagrees with conjugate-point count."""


class GridCapExceeded(RevlabError):
    """Requested discretisation exceeds the hard grid cap."""


# --- flow --------------------------------------------------------------

class Collapsed(RevlabError):
    """Curve shrank below the perimeter floor."""


class BarrierContact(RevlabError):
    """Projection could not keep the curve strictly inside the domain."""


class MaxStepsExceeded(RevlabError):
    """Flow did not reach the curvature target within the step budget."""


class DegeneratePosition(RevlabError):
    """Curves remain tangent after jitter; crossing count undefined."""


class SimplicityLost(RevlabError):
    """Evolving curve developed a self-intersection."""


# --- fermi -------------------------------------------------------------

class FocalOverlap(RevlabError):
    """Normal geodesics cross inside the requested Fermi half-width."""


class NotStrictlyStable(RevlabError):
    """First eigenvalue is not positive."""


class ChartEdge(RevlabError):
    """Point lies outside the Fermi chart half-width."""


class CertificationFailed(RevlabError):
    """No (alpha, s*) pair in the schedule certifies convexity."""


class EscapedTube(RevlabError):
    """Persistence search left the certified tube."""


class MultipleLimits(RevlabError):
    """Multi-start uniqueness check found distinct limits."""


# --- lab / cli ---------------------------------------------------------

class RhoTooLarge(RevlabError):
    """Deflection-lemma small-radius hypothesis violated."""


class SweepDegenerate(RevlabError):
    """Minimax slot geodesics coincide; bumps are not holding strands."""


class ConfigError(RevlabError):
    """Scene file is malformed or contains unknown keys."""


class IoError(RevlabError):
    """Output artifacts could not be written."""


class NotFound(RevlabError):
    """Referenced run artifact does not exist."""
