from fractions import Fraction
from itertools import combinations_with_replacement, permutations

import numpy as np
import pytest
import sympy as sp

from firstint.ansatz import (SCOPE, AnsatzSpace, AnsatzSpec, IllConditionedError, NonlinearityError,
                             assemble_linear_system, certify_candidate, monomials, nullspace, nullspace_exact,
                             nullspace_float, probe_linearity, solve)
from firstint.conditions import (ConditionSet, FICandidate, Residual, Slot, assemble_integral1, assemble_kt,
                                 assemble_reducible_kt)
from firstint.expr import mul, parse
from firstint.geometry import SymTensorField


def flat_kernel_oracle(rank, degree):
    """Dimension of polynomial Killing tensors of the flat plane, by sympy elimination."""
    x, y = sp.symbols("x y")
    X = (x, y)
    monos = [x ** i * y ** j for i in range(degree + 1) for j in range(degree + 1 - i)]
    unknowns = []
    comps = {}
    for idx in combinations_with_replacement(range(2), rank):
        cs = sp.symbols(f"c_{''.join(map(str, idx))}_0:{len(monos)}")
        unknowns.extend(cs)
        comps[idx] = sum(c * m for c, m in zip(cs, monos))
    eqs = []
    for J in combinations_with_replacement(range(2), rank + 1):
        expr = sum(sp.diff(comps[tuple(sorted(p[:rank]))], X[p[rank]]) for p in permutations(J))
        eqs.extend(sp.Poly(sp.expand(expr), x, y).coeffs())
    M = sp.Matrix([[sp.diff(e, u) for u in unknowns] for e in eqs])
    return len(unknowns) - M.rank()


class TestNullspace:
    def test_identity_has_empty_kernel(self):
        eye = [[Fraction(int(i == j)) for j in range(3)] for i in range(3)]
        assert nullspace_exact(eye, 3).basis == []
        assert nullspace_float(np.eye(3)).basis == []

    def test_exact_kernel(self):
        rows = [[Fraction(1), Fraction(2), Fraction(3)], [Fraction(2), Fraction(4), Fraction(6)]]
        res = nullspace(rows, 3)
        assert res.exact and res.rank == 1 and len(res.basis) == 2
        for v in res.basis:
            assert all(sum(a * b for a, b in zip(r, v)) == 0 for r in rows)

    def test_float_kernel_and_margin(self):
        A = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
        res = nullspace_float(A)
        assert len(res.basis) == 1 and res.margin > 1e5
        assert np.allclose(A @ res.basis[0], 0)

    def test_ill_conditioned_rank(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0 + 3e-10]])
        with pytest.raises(IllConditionedError):
            nullspace_float(A)


@pytest.fixture(scope="module")
def flat(corpus_defs):
    return corpus_defs["flat2d"].system


class TestFlatKillingTensors:
    @pytest.mark.parametrize("rank, degree, expected", [(1, 1, 3), (2, 2, 6), (3, 3, 10)])
    def test_dimensions_match_oracle(self, flat, rank, degree, expected):
        assert flat_kernel_oracle(rank, degree) == expected
        fam = solve(assemble_kt(rank, flat), AnsatzSpec(degree=degree))
        assert fam.exact and fam.dimension == expected and not fam.spurious

    @pytest.mark.parametrize("rank, degree", [(1, 1), (2, 2)])
    def test_float_path_agrees(self, flat, rank, degree):
        exact = solve(assemble_kt(rank, flat), AnsatzSpec(degree=degree))
        floating = solve(assemble_kt(rank, flat), AnsatzSpec(degree=degree), precision="double")
        assert not floating.exact
        assert floating.dimension == exact.dimension

    def test_constant_basis_gives_zero_matrix(self, flat):
        cs = assemble_kt(1, flat)
        space = AnsatzSpace(cs, AnsatzSpec(degree=0), {})
        ls = assemble_linear_system(cs, space)
        assert ls.exact and all(x == 0 for row in ls.matrix for x in row)
        assert len(nullspace(ls).basis) == space.size == 2

    def test_enlarging_basis_never_shrinks_kernel(self, flat):
        dims = [solve(assemble_kt(2, flat), AnsatzSpec(degree=d)).dimension for d in range(4)]
        assert dims == sorted(dims)
        more = solve(assemble_kt(2, flat), AnsatzSpec(degree=2, multipliers=[parse("1"), parse("exp(x)")]))
        assert more.dimension >= dims[2]

    def test_rotation_recovered(self, flat):
        fam = solve(assemble_kt(1, flat), AnsatzSpec(degree=1))
        rot = FICandidate.zero(1, flat.coords)
        rot.coeffs[1] = SymTensorField(2, 1, {(0,): parse("-y"), (1,): parse("x")})
        assert fam.contains(rot)
        bogus = FICandidate.zero(1, flat.coords)
        bogus.coeffs[1] = SymTensorField(2, 1, {(0,): parse("y"), (1,): parse("x")})
        assert not fam.contains(bogus)

    def test_normalization_first_nonzero_is_one(self, flat):
        fam = solve(assemble_kt(2, flat), AnsatzSpec(degree=2))
        for v in fam.vectors:
            assert next(c for c in v if c != 0) == 1


class TestNonmetricSystem:
    spec = AnsatzSpec(degree=2, multipliers=[parse("exp(12*beta*w/u^2)"), parse("1")])

    def test_unique_killing_tensor(self, corpus_defs):
        sys = corpus_defs["nonmetric"].system
        fam = solve(assemble_kt(2, sys), self.spec)
        assert fam.dimension == 1 and fam.scope == SCOPE
        C = fam.certified[0].candidate.coeffs[2]
        assert C[(0, 0)].is_zero_literal and C[(1, 1)].is_zero_literal
        assert C[(0, 1)] == parse("exp(12*beta*w/u^2)")
        assert not fam.parameter_conditional

    def test_no_vectors(self, corpus_defs):
        sys = corpus_defs["nonmetric"].system
        assert solve(assemble_kt(1, sys), self.spec).dimension == 0
        assert solve(assemble_reducible_kt(sys), self.spec).dimension == 0

    def test_quadratic_integral_family(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["nonmetric"].system
        fam = solve(assemble_integral1(2, 1, sys), self.spec)
        assert fam.dimension == 1
        assert fam.contains(corpus_integrals["nonmetric"]["nonmetric_qfi"])

    def test_linearity_probe_passes(self, corpus_defs):
        sys = corpus_defs["nonmetric"].system
        cs = assemble_integral1(2, 1, sys)
        space = AnsatzSpace(cs, self.spec, {"beta": Fraction(3, 2)})
        assert probe_linearity(cs, space) < 1e-10


def test_certification_independent_of_seed(flat):
    cs = assemble_kt(2, flat)
    dims = set()
    for s1, s2 in [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]:
        fam = solve(cs, AnsatzSpec(degree=2), seed=s1)
        ok = [certify_candidate(m.candidate, flat, {}, seed=s2)[0] for m in fam.certified]
        assert all(ok)
        dims.add(fam.dimension)
    assert dims == {6}


def _squared_condition(sys):
    slot = Slot("C", 0, sys.coords)

    def build(F):
        C = F.get("C", 0)
        sq = SymTensorField(sys.dim, 0, {(): mul(C[()], C[()])})
        return [Residual.of("square", sq)], FICandidate([C], sys.coords)

    return ConditionSet("fi", [slot], build, sys)


def test_nonlinearity_detected(flat):
    cs = _squared_condition(flat)
    space = AnsatzSpace(cs, AnsatzSpec(degree=1), {})
    with pytest.raises(NonlinearityError):
        probe_linearity(cs, space)
    with pytest.raises(NonlinearityError):
        assemble_linear_system(cs, space)


def test_basis_pruning_and_gauge(flat):
    cs = assemble_integral1(2, 0, flat)
    spec = AnsatzSpec(degree=1, multipliers=[parse("1"), parse("2")])
    space = AnsatzSpace(cs, spec, {})
    assert len(space.bases["C0"]) == len(monomials(flat.coords, 1))
    # constants are dropped from the gauge scalar
    assert parse("1") not in space.bases["G"]
    assert space.bases["s"] == [parse("1")]
    assert space.size == sum(len(space.bases[n]) * {0: 1, 1: 2, 2: 3}[r] for n, r in space.slot_ranks.items())
