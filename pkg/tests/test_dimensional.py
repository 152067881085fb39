import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandlab.dimensional import (AvalancheRelations, ClosureRelation,
                                 Dimension, DimensionedVariable, DriveRegime,
                                 PiGroup, avalanche_relations,
                                 classify_drive_regime, compute_pi_groups,
                                 group_dimension, k41_relations,
                                 read_variable_table, regime_order)
from sandlab.errors import ConfigError, DataError


def var(name, dim, desc=""):
    return DimensionedVariable(name, Dimension.parse(dim), desc)


TURBULENCE = [var("L0", "L", "driving length scale"),
              var("eta", "L", "dissipation length scale"),
              var("U", "L T^-1", "bulk flow speed"),
              var("nu", "L^2 T^-1", "viscosity")]

AVALANCHE = [var("L0", "L", "system size"),
             var("dl", "L", "grid size"),
             var("eps", "S T^-1", "system dissipation rate"),
             var("h", "S T^-1", "drive rate per node")]


class TestComputePiGroups:
    def test_turbulence_table_exact(self):
        groups = compute_pi_groups(TURBULENCE)
        assert [g.exponents for g in groups] == [
            (("L0", 1), ("eta", -1)),
            (("L0", 1), ("U", 1), ("nu", -1)),
        ]

    def test_avalanche_table_exact(self):
        # h/eps appears as its canonical representative eps/h (first
        # nonzero exponent in table order positive); same group direction
        groups = compute_pi_groups(AVALANCHE)
        assert [g.exponents for g in groups] == [
            (("eps", 1), ("h", -1)),
            (("L0", 1), ("dl", -1)),
        ]

    def test_single_variable_no_groups(self):
        assert compute_pi_groups([var("x", "L")]) == []

    def test_all_dimensionless_gives_singletons(self):
        groups = compute_pi_groups([var("a", "1"), var("b", "1")])
        assert {g.exponents for g in groups} == {(("a", 1),), (("b", 1),)}

    def test_empty_table_errors(self):
        with pytest.raises(DataError, match="no variables"):
            compute_pi_groups([])

    def test_duplicate_names_error(self):
        with pytest.raises(ConfigError, match="duplicate"):
            compute_pi_groups([var("x", "L"), var("x", "T")])

    def test_product_rendering(self):
        groups = compute_pi_groups(TURBULENCE)
        assert groups[1].as_product() == "L0^1 U^1 nu^-1"

    def test_group_evaluation(self):
        reynolds = compute_pi_groups(TURBULENCE)[1]
        assert reynolds.evaluate(
            {"L0": 2.0, "U": 3.0, "nu": 0.5}) == pytest.approx(12.0)


def _random_table(rng: random.Random):
    n_dims = rng.randint(1, 4)
    n_vars = rng.randint(1, 7)
    dims = [f"D{i}" for i in range(n_dims)]
    table = []
    for i in range(n_vars):
        exps = {d: rng.randint(-3, 3) for d in dims}
        table.append(DimensionedVariable(f"q{i}", Dimension.of(exps)))
    return table


def _rank_fraction(matrix):
    """Exact rank by straightforward Gaussian elimination (test oracle)."""
    m = [[Fraction(v) for v in row] for row in matrix]
    rank = 0
    rows = len(m)
    cols = len(m[0]) if rows else 0
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c] / m[r][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        rank += 1
        r += 1
    return rank


@pytest.mark.parametrize("seed", range(8))
def test_groups_dimensionless_and_counted(seed):
    rng = random.Random(seed)
    for _ in range(40):
        table = _random_table(rng)
        groups = compute_pi_groups(table)
        base = sorted({d for v in table for d in v.dimension.base_names()})
        matrix = [[v.dimension.exponent(d) for v in table] for d in base]
        rank = _rank_fraction(matrix) if matrix else 0
        assert len(groups) == len(table) - rank
        for g in groups:
            assert group_dimension(g, table).is_dimensionless
            exps = [e for _, e in g.exponents]
            assert math.gcd(*[abs(e) for e in exps] + [0]) == 1
            assert exps[0] > 0  # first nonzero in table order positive


def _group_matrix(groups, names):
    index = {n: i for i, n in enumerate(names)}
    rows = []
    for g in groups:
        row = [0] * len(names)
        for n, e in g.exponents:
            row[index[n]] = e
        rows.append(row)
    return rows


def test_permutation_stability_of_span():
    # the echelon basis itself depends on column order (pivot selection),
    # so shuffling may swap basis elements within the nullspace; what is
    # invariant is the spanned space: same count, and stacking both bases
    # does not increase the rank
    rng = random.Random(7)
    for _ in range(25):
        table = _random_table(rng)
        names = [v.name for v in table]
        ref = compute_pi_groups(table)
        shuffled = table[:]
        rng.shuffle(shuffled)
        alt = compute_pi_groups(shuffled)
        assert len(alt) == len(ref)
        if not ref:
            continue
        m_ref = _group_matrix(ref, names)
        m_alt = _group_matrix(alt, names)
        r = _rank_fraction(m_ref)
        assert r == len(ref)
        assert _rank_fraction(m_alt) == r
        assert _rank_fraction(m_ref + m_alt) == r


class TestK41Relations:
    def test_unity(self):
        r = k41_relations(1.0, 1.0, 1.0)
        assert r.reynolds == 1.0
        assert r.dissipation_scale == 1.0
        assert r.dof_estimate == 1.0

    def test_strong_drive(self):
        r = k41_relations(10.0, 1.0, 1e-3)
        assert r.reynolds == pytest.approx(1e4)
        assert r.dissipation_scale == pytest.approx(1e-3)

    def test_fractional_scale(self):
        r = k41_relations(2.0, 1.0, 1.0)
        assert r.dissipation_scale == pytest.approx(2 ** -0.75)

    def test_closure_exponents(self):
        r = k41_relations(5.0, 2.0, 0.1, dof_exponent=3)
        assert r.closure.beta == Fraction(4, 3)
        assert r.closure.beta_n == Fraction(4, 9)

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    @settings(max_examples=200)
    def test_round_trip(self, u, l0, nu):
        r = k41_relations(u, l0, nu)
        assert u * l0 / nu == r.reynolds
        lhs = (l0 / r.dissipation_scale) ** (4.0 / 3.0)
        assert abs(lhs - r.reynolds) <= 1e-12 * abs(r.reynolds)

    @pytest.mark.parametrize("bad", [(0, 1, 1), (1, -2, 1), (1, 1, 0)])
    def test_domain_errors(self, bad):
        with pytest.raises(DataError):
            k41_relations(*bad)


class TestAvalancheRelations:
    def test_steady_state_matches_prediction(self):
        h = 3.7
        r = avalanche_relations(h, h * 100 ** 2, 100, dim=2)
        assert r.drive_ratio == pytest.approx(1e-4)
        assert r.drive_ratio_predicted == pytest.approx(1e-4)

    def test_bandwidth_exponent(self):
        r = avalanche_relations(1.0, 1.0, 10, dim=2, dof_exponent=2)
        assert r.bandwidth_exponent == Fraction(-1)

    def test_single_cell_system(self):
        r = avalanche_relations(1.0, 1.0, 1, dim=2)
        assert r.drive_ratio_predicted == 1.0
        assert r.dof_estimate == 1.0

    def test_no_dissipation_channel(self):
        with pytest.raises(DataError, match="no dissipation channel"):
            avalanche_relations(1.0, 0.0, 10)

    def test_negative_exponent_always(self):
        r = avalanche_relations(1.0, 2.0, 50, dim=3, dof_exponent=Fraction(3, 2))
        assert r.closure.beta_n < 0


class TestClosureRelation:
    def test_beta_n_derived(self):
        c = ClosureRelation(beta=Fraction(-2), alpha=Fraction(2))
        assert c.beta_n == Fraction(-1)

    def test_inconsistent_beta_n_rejected(self):
        with pytest.raises(ConfigError):
            ClosureRelation(beta=Fraction(4, 3), alpha=Fraction(3),
                            beta_n=Fraction(1))

    def test_alpha_positive_required(self):
        with pytest.raises(ConfigError):
            ClosureRelation(beta=Fraction(1), alpha=Fraction(0))


class TestClassifyDriveRegime:
    def test_slow(self):
        assert classify_drive_regime(0.1, 4, 100) is DriveRegime.SDIDT

    def test_intermediate(self):
        assert classify_drive_regime(16, 4, 100) is DriveRegime.INTERMEDIATE

    def test_laminar(self):
        assert classify_drive_regime(4e4 * 0.6, 4, 100) is DriveRegime.LAMINAR

    @given(st.floats(1e-6, 1e9), st.floats(1e-6, 1e9))
    @settings(max_examples=300)
    def test_monotone_in_drive(self, h1, h2):
        lo, hi = sorted((h1, h2))
        a = classify_drive_regime(lo, 4, 100)
        b = classify_drive_regime(hi, 4, 100)
        assert regime_order(a) <= regime_order(b)

    def test_margin_validation(self):
        with pytest.raises(DataError):
            classify_drive_regime(1, 4, 100, margin=1.5)


class TestDimensionParsing:
    def test_parse_and_render(self):
        d = Dimension.parse("L^2 T^-1")
        assert d.exponent("L") == 2
        assert d.exponent("T") == -1
        assert str(d) == "L^2 T^-1"

    def test_star_separator(self):
        assert Dimension.parse("L*T^-1") == Dimension.parse("L T^-1")

    def test_dimensionless(self):
        assert Dimension.parse("1").is_dimensionless

    def test_rational_exponent(self):
        assert Dimension.parse("M^1/2").exponent("M") == Fraction(1, 2)

    def test_bad_token(self):
        with pytest.raises(ConfigError):
            Dimension.parse("L^^2")


def test_read_variable_table(tmp_path):
    path = tmp_path / "vars.tbl"
    path.write_text(
        "# comment line\n"
        "L0    L        driving length scale\n"
        "eta   L        dissipation length scale\n"
        "U     L*T^-1   bulk flow speed\n"
        "nu    L^2*T^-1 viscosity\n")
    table = read_variable_table(path)
    assert [v.name for v in table] == ["L0", "eta", "U", "nu"]
    assert table[2].description == "bulk flow speed"
    groups = compute_pi_groups(table)
    assert {g.as_product() for g in groups} == {
        "L0^1 eta^-1", "L0^1 U^1 nu^-1"}


def test_read_variable_table_errors(tmp_path):
    empty = tmp_path / "empty.tbl"
    empty.write_text("# nothing\n")
    with pytest.raises(DataError):
        read_variable_table(empty)
    bad = tmp_path / "bad.tbl"
    bad.write_text("onlyname\n")
    with pytest.raises(ConfigError):
        read_variable_table(bad)
