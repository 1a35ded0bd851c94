from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from firstint.conditions import (ConditionError, FICandidate, assemble_integral1, assemble_integral2,
                                 assemble_parity_split, assemble_pde_system, corrupt, fields_from_fi,
                                 functional_rank, multinomial, noether_from_fi, permute_fi, reconstruction_residuals,
                                 total_derivative_residual)
from firstint.conditions import pde_residuals
from firstint.expr import Domain, add, const, mul, parse, sym, zero_test
from firstint.geometry import DynamicalSystem, SymTensorField, contract_force, levi_civita, raise_gradient
from helpers import random_points, sympy_time_derivative, sympy_values, to_sympy


def euclidean(V, coords=("x", "y"), box=(-1, 1)):
    n = len(coords)
    g = SymTensorField(n, 2, {(i, i): 1 for i in range(n)})
    V = parse(V)
    dom = Domain({c: (Fraction(box[0]), Fraction(box[1])) for c in coords} | {"t": (Fraction(0), Fraction(1))})
    return DynamicalSystem(coords, levi_civita(g, coords), raise_gradient(V, g, coords), g, V, dom)


def energy(sys):
    n = sys.dim
    return FICandidate([SymTensorField.scalar(n, sys.potential),
                        SymTensorField(n, 1),
                        sys.metric.scaled(const(Fraction(1, 2)))], sys.coords)


def with_velocity_boxes(sys):
    boxes = dict(sys.domain.boxes)
    for c in sys.coords:
        boxes[c + "'"] = (Fraction(-1), Fraction(1))
    return Domain(boxes, list(sys.domain.constraints), sys.domain.param_names)


def certified(fi, sys, samples=16):
    return all(zero_test([v for T in total_derivative_residual(fi, sys) for v in T.values()],
                         sys.domain, samples, seed=3))


def random_fields(cs, rng, degree=2):
    coords = cs.sys.coords
    out = {}
    for name, slot in cs.slots.items():
        def poly(idx):
            if slot.constant:
                return const(int(rng.integers(-3, 4)))
            terms = []
            for _ in range(3):
                mono = mul(*(sym(c) ** int(rng.integers(0, degree + 1)) for c in coords))
                terms.append(mul(const(int(rng.integers(-4, 5))), mono))
            return add(*terms)
        out[name] = SymTensorField.from_function(len(coords), slot.rank, poly)
    return out


def template_difference_zero(a, b, sys, points=50):
    diffs = [v for T in (a - b).coeffs for v in T.values()]
    return all(zero_test(diffs, sys.domain, points, seed=9))


class TestTotalDerivative:
    def test_matches_sympy_oracle(self, corpus_defs, corpus_integrals):
        count = 0
        for name, fis in corpus_integrals.items():
            sys = corpus_defs[name].system
            for fi in fis.values():
                bad = corrupt(fi)
                res = total_derivative_residual(bad, sys)
                vel = [sym(c + "'") for c in sys.coords]
                # expand the symmetric coefficients over all orderings
                expanded = []
                for T in res:
                    for idx, v in T.items():
                        expanded.append(mul(const(multinomial(idx)), v, *(vel[i] for i in idx)))
                ours = to_sympy(add(*expanded))
                oracle = sympy_time_derivative(bad, sys)
                ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in sys.domain.shrunk().boxes.items()}
                ranges.update({c + "_dot": (-0.5, 0.5) for c in sys.coords})
                pts = [p for p in random_points(ranges, 40, seed=count)
                       if all(float(to_sympy(c).subs({sp.Symbol(k): v for k, v in p.items()})) > 0
                              for c in sys.domain.constraints)][:8]
                a = sympy_values(ours, pts)
                b = sympy_values(oracle, pts)
                assert np.allclose(a, b, rtol=1e-9, atol=1e-9), (name, bad.label)
                count += 1
        assert count >= 15

    def test_cross_check_with_raw_system(self, corpus_defs, corpus_integrals):
        for name in ("anisotropic", "nonmetric", "angular"):
            sys = corpus_defs[name].system
            for fi in corpus_integrals[name].values():
                fi = corrupt(fi)
                m = fi.order
                tdr = total_derivative_residual(fi, sys)
                raw = pde_residuals(fi, sys)
                pairs = {m + 1: "killing-top", m: "time-top", 0: "scalar-time"}
                pairs.update({r: f"ladder[{r}]" for r in range(1, m)})
                exprs = []
                for r, entry in pairs.items():
                    exprs += [tdr[r][k] - raw[entry].comps[k] for k in tdr[r].comps]
                assert all(zero_test(exprs, sys.domain, 50, seed=2))

    def test_corpus_integrals_certify(self, corpus_defs, corpus_integrals):
        for name, fis in corpus_integrals.items():
            for key, fi in fis.items():
                assert certified(fi, corpus_defs[name].system), key

    def test_corrupted_cubic_coefficient(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["anisotropic"].system
        fi = corpus_integrals["anisotropic"]["anisotropic_cubic"]
        M1 = SymTensorField(2, 1, {(0,): parse("c1*x^2/2 + 6*c0*x^2*y"), (1,): fi.coeffs[1][(1,)]})
        bad = FICandidate([fi.coeffs[0], M1, fi.coeffs[2], fi.coeffs[3]], fi.coords)
        verdicts = zero_test([v for T in total_derivative_residual(bad, sys) for v in T.values()],
                             sys.domain, 16)
        assert not all(verdicts)
        assert any(v.witness is not None for v in verdicts if not v)


class TestRawSystem:
    def test_first_order_has_no_ladder(self):
        sys = euclidean("x^2 + y")
        names = assemble_pde_system(1, sys).entry_names
        assert not any(n.startswith("ladder") for n in names)
        assert {"killing-top", "time-top", "scalar-time"} <= set(names)

    @pytest.mark.parametrize("V", ["x^2 + 3*y^4", "exp(x)*y", "(1 + x^2 + y^2)^(-1/2)"])
    def test_energy_for_any_potential(self, V):
        sys = euclidean(V)
        res = pde_residuals(energy(sys), sys)
        assert all(zero_test([v for e in res.values() for v in e.comps.values()], sys.domain, 16))

    def test_nonmetric_quadratic_integral(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["nonmetric"].system
        res = pde_residuals(corpus_integrals["nonmetric"]["nonmetric_qfi"], sys)
        assert all(zero_test([v for e in res.values() for v in e.comps.values()], sys.domain, 16))

    def test_order_bounds(self):
        with pytest.raises(ConditionError):
            assemble_pde_system(0, euclidean("x"))
        with pytest.raises(ConditionError):
            assemble_pde_system(7, euclidean("x"))


class TestPolynomialFamily:
    def test_unknown_registry(self, corpus_defs):
        cs = assemble_integral1(2, 1, corpus_defs["nonmetric"].system)
        assert set(cs.slots) == {"C0", "L0_1", "L1_1", "G", "s"}
        assert cs.summary()["unknowns"][0] == {"name": "C0", "rank": 2}

    def test_degenerate_ranges_emit_nothing(self, corpus_defs):
        sys = corpus_defs["anisotropic"].system
        names2 = assemble_integral1(2, 0, sys).entry_names
        assert not any(n.startswith("ladder[r=2") for n in names2)
        names3 = assemble_integral1(3, 0, sys).entry_names
        assert any(n.startswith("ladder[r=2") for n in names3)
        assert not any(n.startswith("ladder[r=3") for n in names3)

    def test_nonmetric_qfi_in_family(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["nonmetric"].system
        fi = corpus_integrals["nonmetric"]["nonmetric_qfi"]
        cs = assemble_integral1(2, 1, sys)
        fields = fields_from_fi(fi, cs)
        res, tpl = cs.instantiate(fields)
        assert template_difference_zero(tpl, fi, sys)
        assert all(zero_test([v for e in res for v in e.values()], sys.domain, 16))

    def test_hyperbolic_cubic_in_family(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["hyperbolic"].system
        fi = corpus_integrals["hyperbolic"]["hyperbolic_cubic"]
        cs = assemble_integral1(3, 0, sys)
        res, tpl = cs.instantiate(fields_from_fi(fi, cs))
        assert template_difference_zero(tpl, fi, sys)
        assert all(zero_test([v for e in res for v in e.values()], sys.domain, 16))

    @pytest.mark.parametrize("k, n", [(1, 0), (2, 0), (2, 1), (3, 0)])
    def test_lower_order_is_a_subcase(self, k, n):
        """A k-th order member is an order k+1 member with vanishing top coefficient."""
        sys = euclidean("x^2 + 2*y^2 + x*y")
        rng = np.random.default_rng(k * 10 + n)
        low = assemble_integral1(k, n, sys)
        high = assemble_integral1(k + 1, n, sys, top_zero=True)
        fields = random_fields(low, rng)
        res_low, tpl_low = low.instantiate(fields)
        lifted = fields_from_fi(tpl_low, high)
        res_high, tpl_high = high.instantiate(lifted)
        assert template_difference_zero(tpl_high, tpl_low, sys)
        # residual norms agree pointwise: both encode dI/dt of the same function
        vals = lambda res: [v for e in res for v in e.values()]  # noqa: E731
        tdr = [v for T in total_derivative_residual(tpl_low, sys) for v in T.values()]
        assert not all(zero_test(tdr, sys.domain, 8))
        assert not all(zero_test(vals(res_low), sys.domain, 8))
        assert not all(zero_test(vals(res_high), sys.domain, 8))

    @pytest.mark.parametrize("m, ell", [(1, 0), (2, 0), (2, 1), (3, 1)])
    def test_degree_is_a_subcase(self, m, ell):
        """Raising the t-degree with the new top unknowns zeroed changes the
        template only by t^(n+1)/(n+1) times a residual of the lower family."""
        sys = euclidean("x^2 + y^2/4")
        rng = np.random.default_rng(m + 7 * ell)
        low = assemble_integral1(m, ell, sys)
        high = assemble_integral1(m, ell + 1, sys)
        fields = random_fields(low, rng)
        if m >= 2:
            fields["s"] = contract_force(fields[f"L{ell}_1"], sys.forces)
        res_low, tpl_low = low.instantiate(fields)
        lifted = {k: v for k, v in fields.items() if k in high.slots}
        for name in high.slots:
            if name.startswith(f"L{ell + 1}_") or name == "s":
                lifted[name] = SymTensorField(2, high.slots[name].rank)
        _, tpl_high = high.instantiate(lifted)
        if m == 1:
            assert template_difference_zero(tpl_high, tpl_low, sys)
            return
        top_res = next(e for e in res_low if e.name == f"killing[L{ell}]")
        w = mul(const(Fraction(-1, ell + 1)), sym("t") ** (ell + 1))
        corr = FICandidate.zero(m, sys.coords)
        corr.coeffs[m] = SymTensorField(2, m, {k: mul(w, v) for k, v in top_res.comps.items()})
        assert template_difference_zero(tpl_high, tpl_low + corr, sys)

    def test_true_integral_satisfies_both_specializations(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["anisotropic"].system
        fi = corpus_integrals["anisotropic"]["anisotropic_cubic"]
        for cs in (assemble_integral1(3, 0, sys), assemble_integral1(4, 0, sys, top_zero=True),
                   assemble_integral1(3, 1, sys)):
            res, tpl = cs.instantiate(fields_from_fi(fi, cs))
            assert template_difference_zero(tpl, fi, sys)
            assert all(zero_test([v for e in res for v in e.values()], sys.domain, 16))


class TestParitySplit:
    @pytest.mark.parametrize("k, odd", [(0, False), (1, False), (0, True), (1, True)])
    def test_reconstruction_identity(self, k, odd):
        sys = euclidean("x^2 + 3*y^2 + x")
        n = 2 * k + 1 if odd else 2 * k
        cs = assemble_integral1(2, n, sys)
        fields = random_fields(cs, np.random.default_rng(20 + k + odd))
        fields.pop("s")
        diffs = [v for T in reconstruction_residuals(2, k, fields, sys, odd_degree=odd) for v in T.values()]
        assert all(zero_test(diffs, sys.domain, 50, seed=4))

    def test_ell_zero_part1_is_autonomous_family(self):
        sys = euclidean("x^2 + 3*y^2")
        part1, part2 = assemble_parity_split(2, 0, sys)
        assert set(part1.slots) == {"C0", "G"}
        assert all(s.rank in (0, 2) for s in part1.slots.values())
        assert set(part2.slots) == {"L0_1"}

    def test_nonmetric_qfi_is_part_one(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["nonmetric"].system
        fi = corpus_integrals["nonmetric"]["nonmetric_qfi"]
        part1, _ = assemble_parity_split(2, 1, sys)
        res, tpl = part1.instantiate(fields_from_fi(fi, part1))
        assert template_difference_zero(tpl, fi, sys)
        assert all(zero_test([v for e in res for v in e.values()], sys.domain, 16))

    def test_time_dependent_cubic_parity_part(self, corpus_defs, corpus_integrals):
        # t^1 on odd velocity ranks, t^0 on even ones
        sys = corpus_defs["angular"].system
        fi = corpus_integrals["angular"]["angular_cubic_t"]
        part1, _ = assemble_parity_split(3, 1, sys, reduce_odd=True)
        res, tpl = part1.instantiate(fields_from_fi(fi, part1))
        assert template_difference_zero(tpl, fi, sys)
        assert all(zero_test([v for e in res for v in e.values()], sys.domain, 16))

    def test_odd_order_needs_flag(self):
        with pytest.raises(ConditionError):
            assemble_parity_split(3, 0, euclidean("x^2"))


class TestExponentialFamily:
    def test_repulsive_integrals(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["repulsive"].system
        for lam, key in ((-1, "repulsive_decaying"), (1, "repulsive_growing")):
            cs = assemble_integral2(1, lam, sys)
            assert cs.info["rate"] == const(lam)
            assert certified(corpus_integrals["repulsive"][key], sys)

    def test_zero_rate_rejected(self):
        with pytest.raises(ConditionError):
            assemble_integral2(2, 0, euclidean("x^2"))


class TestNoether:
    def test_energy_generator(self):
        sys = euclidean("x^2*y")
        gen = noether_from_fi(energy(sys), sys)
        dom = with_velocity_boxes(sys)
        assert all(zero_test([gen.eta[0] + parse("x'"), gen.eta[1] + parse("y'"),
                              gen.f - parse("x^2*y - (x'^2 + y'^2)/2")], dom, 16))
        assert gen.xi.is_zero_literal and all(p.is_zero_literal for p in gen.phi)

    def test_identity_for_cubic(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["anisotropic"].system
        fi = corpus_integrals["anisotropic"]["anisotropic_cubic"]
        gen = noether_from_fi(fi, sys)
        vel = [sym(c + "'") for c in sys.coords]
        recon = add(gen.f, *(mul(const(-1), e, v) for e, v in zip(gen.eta, vel)))
        assert all(zero_test([recon - fi.expression()], with_velocity_boxes(sys), 50))

    def test_zero_candidate(self):
        sys = euclidean("x")
        gen = noether_from_fi(FICandidate.zero(2, sys.coords), sys)
        assert gen.f.is_zero_literal and all(e.is_zero_literal for e in gen.eta)

    def test_needs_metric(self, corpus_defs, corpus_integrals):
        sys = corpus_defs["nonmetric"].system
        with pytest.raises(ConditionError):
            noether_from_fi(corpus_integrals["nonmetric"]["nonmetric_qfi"], sys)


def test_permutation_preserves_certification(corpus_defs, corpus_integrals):
    from firstint.cli.sysdef import permute_system
    sys = corpus_defs["anisotropic"].system
    fi = corpus_integrals["anisotropic"]["anisotropic_cubic"]
    assert certified(permute_fi(fi, (1, 0)), permute_system(sys, (1, 0)))
    assert not certified(permute_fi(fi, (1, 0)), sys)


def test_functional_rank_counts_independent_integrals(corpus_defs, corpus_integrals):
    sys = corpus_defs["anisotropic"].system
    fis = corpus_integrals["anisotropic"]
    params = {"c0": Fraction(1), "c1": Fraction(1, 2)}
    e, j = fis["anisotropic_energy"], fis["anisotropic_cubic"]
    assert functional_rank([e, j], sys, params) == 2
    doubled = e.map(lambda v: mul(const(2), v))
    assert functional_rank([e, doubled], sys, params) == 1
