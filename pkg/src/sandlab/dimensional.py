"""Dimensional analysis for driven dissipative systems.

Builds the dimensionless groups of a variable table (the nullspace of its
dimension-exponent matrix, in exact rational arithmetic) and evaluates the
closure relations that tie a system's drive/dissipation ratio to its number
of excited degrees of freedom: the turbulence-style relation where the
ratio grows with the degrees of freedom, and the avalanche-style relation
where it shrinks.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import ConfigError, DataError

Rational = Union[int, Fraction]

_FACTOR_RE = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)(?:\^(-?\d+(?:/\d+)?))?$")


@dataclass(frozen=True)
class Dimension:
    """Product of base dimensions with rational exponents.

    Stored as an ordered tuple of (base name, exponent) pairs with zero
    exponents dropped; the empty tuple is dimensionless.
    """

    exponents: tuple[tuple[str, Fraction], ...] = ()

    @classmethod
    def of(cls, mapping: Mapping[str, Rational] | None = None,
           **kw: Rational) -> "Dimension":
        items: list[tuple[str, Fraction]] = []
        seen = set()
        for name, exp in list((mapping or {}).items()) + list(kw.items()):
            if not name:
                raise ConfigError("base dimension names must be nonempty")
            if name in seen:
                raise ConfigError(f"duplicate base dimension {name!r}")
            seen.add(name)
            f = Fraction(exp)
            if f != 0:
                items.append((name, f))
        return cls(tuple(items))

    @classmethod
    def parse(cls, text: str) -> "Dimension":
        """Parse 'L^2 T^-1' (also 'L*T^-1'); '1' or '' is dimensionless."""
        text = text.strip()
        if text in ("", "1", "-"):
            return cls()
        out: dict[str, Rational] = {}
        for tok in re.split(r"[\s*]+", text):
            m = _FACTOR_RE.match(tok)
            if not m:
                raise ConfigError(f"cannot parse dimension factor {tok!r}")
            name, exp = m.group(1), m.group(2)
            f = Fraction(exp) if exp else Fraction(1)
            out[name] = out.get(name, Fraction(0)) + f
        return cls.of(out)

    def exponent(self, name: str) -> Fraction:
        for n, e in self.exponents:
            if n == name:
                return e
        return Fraction(0)

    @property
    def is_dimensionless(self) -> bool:
        return not self.exponents

    def base_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.exponents)

    def __str__(self) -> str:
        if not self.exponents:
            return "1"
        return " ".join(f"{n}^{e}" if e != 1 else n
                        for n, e in self.exponents)


@dataclass(frozen=True)
class DimensionedVariable:
    name: str
    dimension: Dimension
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise ConfigError("variable names must be nonempty")


@dataclass(frozen=True)
class PiGroup:
    """Dimensionless monomial over a variable table.

    Canonical form: integer exponents with collective gcd 1, first nonzero
    exponent (in table order) positive.
    """

    exponents: tuple[tuple[str, int], ...]
    label: Optional[str] = None

    def exponent(self, name: str) -> int:
        for n, e in self.exponents:
            if n == name:
                return e
        return 0

    def as_product(self) -> str:
        """Render as a product string, e.g. 'L0^1 U^1 nu^-1'."""
        return " ".join(f"{n}^{e}" for n, e in self.exponents)

    def evaluate(self, values: Mapping[str, float]) -> float:
        out = 1.0
        for n, e in self.exponents:
            out *= float(values[n]) ** e
        return out

    def __str__(self) -> str:
        return self.as_product()


@dataclass(frozen=True)
class ClosureRelation:
    """Exponents linking the control-parameter group to the d.o.f. group:
    control ~ (scale ratio)^beta, dof ~ (scale ratio)^alpha, so
    control ~ dof^beta_n."""

    beta: Fraction
    alpha: Fraction
    beta_n: Fraction = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive (scaling-type solution)")
        expected = Fraction(self.beta) / Fraction(self.alpha)
        if self.beta_n is None:
            object.__setattr__(self, "beta_n", expected)
        elif Fraction(self.beta_n) != expected:
            raise ConfigError(
                f"beta_n must equal beta/alpha = {expected}, got {self.beta_n}")


def _dimension_matrix(table: Sequence[DimensionedVariable]):
    """Base-dimension names (first-appearance order) and the W x V exact
    exponent matrix."""
    base: list[str] = []
    for var in table:
        for name in var.dimension.base_names():
            if name not in base:
                base.append(name)
    matrix = [[var.dimension.exponent(dim) for var in table] for dim in base]
    return base, matrix


def _rref(matrix: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form over Fractions; returns (rref, pivot cols)."""
    m = [row[:] for row in matrix]
    rows = len(m)
    cols = len(m[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        pivot = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if pivot is None:
            continue
        m[r], m[pivot] = m[pivot], m[r]
        inv = m[r][c]
        m[r] = [v / inv for v in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                factor = m[i][c]
                m[i] = [a - factor * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return m, pivots


def compute_pi_groups(table: Sequence[DimensionedVariable]) -> list[PiGroup]:
    """All dimensionless groups of a variable table.

    Returns a basis of the integer nullspace of the dimension matrix, one
    group per free variable (free variables taken in table order, so ratio
    groups of like-dimensioned variables come out directly), each in
    canonical form, sorted lexicographically by exponent vector.
    """
    table = list(table)
    if not table:
        raise DataError("no variables")
    names = [v.name for v in table]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate variable names: {dupes}")

    base, matrix = _dimension_matrix(table)
    rref, pivots = _rref(matrix)
    free = [j for j in range(len(table)) if j not in pivots]

    groups = []
    for j in free:
        vec = [Fraction(0)] * len(table)
        vec[j] = Fraction(1)
        for row, pc in zip(rref, pivots):
            vec[pc] = -row[j]
        # scale to coprime integers, first nonzero positive
        denom_lcm = 1
        for v in vec:
            if v != 0:
                denom_lcm = denom_lcm * v.denominator // math.gcd(
                    denom_lcm, v.denominator)
        ints = [int(v * denom_lcm) for v in vec]
        g = 0
        for v in ints:
            g = math.gcd(g, abs(v))
        ints = [v // g for v in ints]
        first = next(v for v in ints if v != 0)
        if first < 0:
            ints = [-v for v in ints]
        groups.append(ints)

    groups.sort()
    return [PiGroup(tuple((names[i], e) for i, e in enumerate(vec) if e != 0))
            for vec in groups]


def group_dimension(group: PiGroup,
                    table: Sequence[DimensionedVariable]) -> Dimension:
    """Induced dimension of a group over its table (zero iff dimensionless)."""
    by_name = {v.name: v.dimension for v in table}
    total: dict[str, Fraction] = {}
    for name, exp in group.exponents:
        for dim, e in by_name[name].exponents:
            total[dim] = total.get(dim, Fraction(0)) + e * exp
    return Dimension.of({k: v for k, v in total.items() if v != 0})


@dataclass(frozen=True)
class K41Relations:
    """Turbulence closure: reynolds ~ (scale ratio)^(4/3), evaluated."""

    reynolds: float
    dissipation_scale: float
    dof_estimate: float
    closure: ClosureRelation


def k41_relations(speed: float, driving_scale: float, viscosity: float,
                  dof_exponent: Rational = 3) -> K41Relations:
    """Reynolds number, dissipation scale and d.o.f. estimate for a
    steadily driven homogeneous turbulent flow.

    The dissipation scale follows from balancing injection (speed^3/scale)
    against viscous dissipation, which fixes the closure exponent at 4/3;
    dof_exponent is the caller's scaling exponent for the d.o.f. count
    (space dimension 3 by default).
    """
    for label, v in (("speed", speed), ("driving_scale", driving_scale),
                     ("viscosity", viscosity)):
        if not (v > 0):
            raise DataError(f"{label} must be strictly positive, got {v}")
    alpha = Fraction(dof_exponent)
    if alpha <= 0:
        raise DataError(f"dof_exponent must be positive, got {dof_exponent}")
    reynolds = speed * driving_scale / viscosity
    dissipation_scale = driving_scale * reynolds ** -0.75
    dof = (driving_scale / dissipation_scale) ** float(alpha)
    return K41Relations(
        reynolds=reynolds,
        dissipation_scale=dissipation_scale,
        dof_estimate=dof,
        closure=ClosureRelation(beta=Fraction(4, 3), alpha=alpha))


@dataclass(frozen=True)
class AvalancheRelations:
    """Avalanche closure: drive/dissipation ratio shrinks as the supported
    scale range grows, evaluated."""

    drive_ratio: float
    drive_ratio_predicted: float
    bandwidth_exponent: Fraction
    dof_estimate: float
    closure: ClosureRelation


def avalanche_relations(drive_rate: float, dissipation_rate: float,
                        scale_ratio: float, dim: int = 2,
                        dof_exponent: Rational | None = None
                        ) -> AvalancheRelations:
    """Control parameter of a driven threshold pile.

    drive_rate is the per-node injection rate, dissipation_rate the
    system-wide loss rate; scale_ratio is system size over grid size.  In
    steady state injection balances dissipation, which pins the ratio at
    scale_ratio^-dim; the d.o.f. exponent gives the (negative) exponent
    linking the ratio to the d.o.f. count.
    """
    if drive_rate < 0:
        raise DataError(f"drive_rate must be >= 0, got {drive_rate}")
    if dissipation_rate <= 0:
        raise DataError("no dissipation channel")
    if scale_ratio < 1:
        raise DataError(f"scale_ratio must be >= 1, got {scale_ratio}")
    if dim not in (1, 2, 3):
        raise DataError(f"dim must be 1, 2 or 3, got {dim}")
    alpha = Fraction(dim if dof_exponent is None else dof_exponent)
    if alpha <= 0:
        raise DataError(f"dof_exponent must be positive, got {dof_exponent}")
    closure = ClosureRelation(beta=Fraction(-dim), alpha=alpha)
    return AvalancheRelations(
        drive_ratio=drive_rate / dissipation_rate,
        drive_ratio_predicted=float(scale_ratio) ** -dim,
        bandwidth_exponent=closure.beta_n,
        dof_estimate=float(scale_ratio) ** float(alpha),
        closure=closure)


class DriveRegime(enum.Enum):
    """How hard the pile is driven relative to what avalanches can carry."""

    SDIDT = "sdidt"
    INTERMEDIATE = "intermediate"
    LAMINAR = "laminar"


_REGIME_ORDER = {DriveRegime.SDIDT: 0, DriveRegime.INTERMEDIATE: 1,
                 DriveRegime.LAMINAR: 2}


def regime_order(regime: DriveRegime) -> int:
    return _REGIME_ORDER[regime]


def classify_drive_regime(grains_per_step: float, threshold_grains: float,
                          scale_ratio: float, dim: int = 2,
                          margin: float = 0.5) -> DriveRegime:
    """Slow/intermediate/laminar driving classification.

    Slow driving (SDIDT) means each drive event is well below one toppling
    threshold; laminar means it rivals the largest avalanche the system
    supports (threshold * scale_ratio^dim cells' worth).  The bounds are
    asymptotic, so `margin` in (0,1) sets where "well below" cuts off.
    """
    for label, v in (("grains_per_step", grains_per_step),
                     ("threshold_grains", threshold_grains),
                     ("scale_ratio", scale_ratio)):
        if not (v > 0):
            raise DataError(f"{label} must be strictly positive, got {v}")
    if dim not in (1, 2, 3):
        raise DataError(f"dim must be 1, 2 or 3, got {dim}")
    if not (0 < margin < 1):
        raise DataError(f"margin must be in (0,1), got {margin}")
    if grains_per_step <= margin * threshold_grains:
        return DriveRegime.SDIDT
    if grains_per_step >= margin * threshold_grains * scale_ratio ** dim:
        return DriveRegime.LAMINAR
    return DriveRegime.INTERMEDIATE


def read_variable_table(path) -> list[DimensionedVariable]:
    """Load a variable table: one 'name dimension description...' record
    per line, '#' comments, dimension like 'L^2 T^-1' with no spaces
    (use '*' between factors) or '1' for dimensionless."""
    table = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 2)
            if len(parts) < 2:
                raise ConfigError(
                    f"{path}:{lineno}: need at least 'name dimension'")
            name, dim = parts[0], parts[1]
            desc = parts[2].strip() if len(parts) > 2 else ""
            try:
                dimension = Dimension.parse(dim)
            except ConfigError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None
            table.append(DimensionedVariable(name, dimension, desc))
    if not table:
        raise DataError(f"{path}: no variables")
    names = [v.name for v in table]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate variable names")
    return table
