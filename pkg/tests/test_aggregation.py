import pytest

from qosmc.aggregation import AggregateExpr, aggregate
from qosmc.machines import SystemError_, enumerate_runs, parse_trace, replay
from qosmc.rcf import (
    AggregatorKind,
    InstAttr,
    format_formula,
    instantiate,
    instantiated_symbols,
    parse_rcf_formula,
)


def intro_run(intro_system, text):
    word = parse_trace(text, frozenset(intro_system.participant_names))
    return replay(intro_system, word)


class TestIntroContext:
    def test_two_step_local(self, intro_system):
        """All four visited (participant, state) contracts appear, instantiated."""
        ctx = aggregate(intro_system, intro_run(intro_system, "ab!m ab?m"))
        reg = intro_system.registry
        expected = set()
        for p, states in (("a", ["q0", "q1"]), ("b", ["q0p", "q1p"])):
            for q in states:
                for f in intro_system.participants[p].qos[q]:
                    expected.add(instantiate(f, p, q))
        assert ctx.local == expected
        assert "c[b,q1p] = 0.01 * m[b,q1p]" in {
            format_formula(f) for f in ctx.local
        }
        assert len(ctx.local) == 10
        del reg

    def test_two_step_aggregates(self, intro_system):
        ctx = aggregate(intro_system, intro_run(intro_system, "ab!m ab?m"))
        agg = ctx.aggregate_map()
        # sum over multiset of charged (participant, state) pairs
        assert agg["c"].kind is AggregatorKind.SUM
        assert sorted(map(str, agg["c"].operands)) == [
            "c[a,q0]", "c[a,q1]", "c[b,q0p]", "c[b,q1p]"
        ]
        assert agg["m"].kind is AggregatorKind.MAX
        assert sorted(map(str, agg["m"].operands)) == [
            "m[a,q0]", "m[a,q1]", "m[b,q0p]", "m[b,q1p]"
        ]

    def test_empty_run(self, intro_system):
        ctx = aggregate(intro_system, intro_run(intro_system, ""))
        agg = ctx.aggregate_map()
        # participant fold over initial states only, lexicographic order
        assert [str(o) for o in agg["c"].operands] == ["c[a,q0]", "c[b,q0p]"]
        assert [str(o) for o in agg["m"].operands] == ["m[a,q0]", "m[b,q0p]"]
        assert len(ctx.local) == 4

    def test_one_step_operand_order(self, intro_system):
        ctx = aggregate(intro_system, intro_run(intro_system, "ab!m"))
        agg = ctx.aggregate_map()
        # step fold (trace order) then final-state fold (name order)
        assert [str(o) for o in agg["c"].operands] == [
            "c[a,q0]", "c[a,q1]", "c[b,q0p]"
        ]

    def test_foreign_run_rejected(self, intro_system, pop_system):
        run = intro_run(intro_system, "ab!m")
        with pytest.raises(SystemError_):
            aggregate(pop_system, run)


class TestProperties:
    def test_local_monotone_along_prefixes(self, pop_system):
        for run in enumerate_runs(pop_system, 5):
            if len(run) < 2:
                continue
            shorter = aggregate(pop_system, run.prefix(len(run) - 1))
            longer = aggregate(pop_system, run)
            assert shorter.local <= longer.local

    def test_idle_participant_accounting(self, intro_system):
        ctx = aggregate(intro_system, intro_run(intro_system, "ab!m"))
        # b acted in no step: exactly one b-operand, at its final state
        c_ops = ctx.aggregate_map()["c"].operands
        b_ops = [o for o in c_ops if o.participant == "b"]
        assert b_ops == [InstAttr("c", "b", "q0p")]

    def test_determinism(self, pop_system):
        word = parse_trace("cs!helo cs?helo sc!int", frozenset(["c", "s"]))
        assert aggregate(pop_system, replay(pop_system, word)) == aggregate(
            pop_system, replay(pop_system, word)
        )

    def test_symbol_hygiene(self, pop_system):
        for run in enumerate_runs(pop_system, 4):
            ctx = aggregate(pop_system, run)
            occurring = set()
            for f in ctx.local:
                occurring |= instantiated_symbols(f)
            for _, expr in ctx.aggregates:
                occurring |= set(expr.operands)
            assert ctx.symbols == occurring

    def test_aggregate_count_matches_registry(self, pop_system):
        ctx = aggregate(pop_system, intro_like_empty(pop_system))
        assert [attr for attr, _ in ctx.aggregates] == sorted(pop_system.registry)


def intro_like_empty(system):
    return replay(system, ())


class TestExprRendering:
    def test_sum(self):
        expr = AggregateExpr(
            AggregatorKind.SUM,
            (InstAttr("c", "a", "q0"), InstAttr("c", "b", "q1")),
        )
        assert str(expr) == "c[a,q0] + c[b,q1]"

    def test_max(self):
        expr = AggregateExpr(
            AggregatorKind.MAX,
            (InstAttr("m", "a", "q0"), InstAttr("m", "b", "q1")),
        )
        assert str(expr) == "max{m[a,q0], m[b,q1]}"


def test_context_format_is_stable(intro_system):
    word = parse_trace("ab!m ab?m", frozenset(["a", "b"]))
    ctx = aggregate(intro_system, replay(intro_system, word))
    text = ctx.format()
    assert text.splitlines()[0] == "local:"
    assert "c = c[a,q0] + c[b,q0p] + c[a,q1] + c[b,q1p]" in text
    assert "m = max{m[a,q0], m[b,q0p], m[a,q1], m[b,q1p]}" in text


def test_quantified_contract_instantiation(pop_system):
    word = parse_trace("cs!helo cs?helo sc!int sc?int", frozenset(["c", "s"]))
    ctx = aggregate(pop_system, replay(pop_system, word))
    rendered = {format_formula(f) for f in ctx.local}
    assert (
        "t[c,q2] <= 3 -> exists x . 0.5 <= x && x <= 1 && c[c,q2] = t[c,q2] * x"
        in rendered
    )


def test_parse_rcf_formula_reused(intro_system):
    # atoms later checked against contexts use the same registry
    f = parse_rcf_formula("c <= 15.5", intro_system.registry)
    assert f is not None
