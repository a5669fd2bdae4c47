import random

import pytest

from codelog.datalog import (
    Agg,
    Atom,
    Cmp,
    DatalogError,
    EvalError,
    EvalStats,
    Neg,
    Pos,
    Predicate,
    Rule,
    StratifyError,
    Var,
    apply_rule,
    check_safety,
    evaluate_naive,
    evaluate_seminaive,
    format_rule,
    parse_rules,
    stratify,
)
from codelog.datalog.ir import DatalogProgram
from codelog.datalog.textfmt import infer_program

ANCESTOR_RULES = """
parent(a, b) :- class(a), extends(a, b), class(b).
ancestorclass(a, b) :- parent(a, b).
ancestorclass(a, c) :- parent(a, b), ancestorclass(b, c).
"""


def ancestor_program():
    return infer_program(parse_rules(ANCESTOR_RULES), outputs=["ancestorclass"])


def chain_edb(n):
    return {
        "class": {(i,) for i in range(1, n + 1)},
        "extends": {(i, i + 1) for i in range(1, n)},
    }


# -- safety


def test_safety_ok():
    prog = infer_program(parse_rules("p(x) :- q(x)."))
    assert check_safety(prog) == []


def test_safety_unbound_head_var():
    prog = infer_program(parse_rules("p(x, y) :- q(x)."))
    diags = check_safety(prog)
    assert len(diags) == 1 and "y" in diags[0] and "rule 0" in diags[0]


def test_safety_negation_only():
    prog = infer_program(parse_rules("p(x) :- !q(x)."))
    diags = check_safety(prog)
    assert any("negated" in d and "x" in d for d in diags)


# -- stratification


def test_stratify_ancestor_single_stratum():
    strat = stratify(ancestor_program())
    assert strat.strata == [["ancestorclass", "parent"]]


def test_stratify_negation_two_strata():
    prog = infer_program(parse_rules("p(x) :- d(x), !q(x).\nq(x) :- r(x)."))
    assert stratify(prog).strata == [["q"], ["p"]]


def test_stratify_negative_cycle_rejected():
    prog = infer_program(parse_rules("p(x) :- d(x), !q(x).\nq(x) :- p(x)."))
    with pytest.raises(StratifyError) as err:
        stratify(prog)
    assert set(err.value.cycle) == {"p", "q"}


def test_recursive_arith_bind_rejected():
    rules = parse_rules("up(x) :- seed(x).\nup(y) :- up(x), y := x + 1.")
    prog = infer_program(rules)
    with pytest.raises(StratifyError, match="arithmetic bind"):
        stratify(prog)


def test_nonrecursive_arith_bind_allowed():
    rules = parse_rules("d(x, y) :- seed(x), y := x * 2.")
    prog = infer_program(rules)
    out = evaluate_seminaive(prog, {"seed": {(3,), (4,)}})
    assert out["d"] == {(3, 6), (4, 8)}


# -- naive evaluation


def test_naive_abc_chain():
    out = evaluate_naive(ancestor_program(), {
        "class": {("A",), ("B",), ("C",)},
        "extends": {("A", "B"), ("B", "C")},
    })
    assert out["ancestorclass"] == {("A", "B"), ("B", "C"), ("A", "C")}


def test_naive_empty_edb():
    out = evaluate_naive(ancestor_program(), {})
    assert out["parent"] == set() and out["ancestorclass"] == set()


def test_naive_chain_100():
    out = evaluate_naive(ancestor_program(), chain_edb(100))
    assert len(out["ancestorclass"]) == 4950  # n(n-1)/2


def test_naive_arity_mismatch():
    with pytest.raises(EvalError, match="arity"):
        evaluate_naive(ancestor_program(), {"class": {(1, 2)}})


def test_division_truncates_toward_zero():
    prog = infer_program(parse_rules("q(x, y) :- d(x), y := x / 2."))
    out = evaluate_seminaive(prog, {"d": {(-3,), (3,), (-4,)}})
    assert out["q"] == {(-3, -1), (3, 1), (-4, -2)}


def test_division_by_zero_names_rule():
    prog = infer_program(parse_rules("q(x, y) :- d(x), y := x / 0."))
    with pytest.raises(EvalError, match="division by zero"):
        evaluate_seminaive(prog, {"d": {(1,)}})


def test_negation_is_set_difference():
    prog = infer_program(parse_rules("p(x) :- d(x), !q(x)."))
    d = {(i,) for i in range(10)}
    q = {(i,) for i in range(0, 10, 3)}
    out = evaluate_seminaive(prog, {"d": d, "q": q})
    assert out["p"] == d - q


# -- semi-naive vs naive


def test_seminaive_matches_naive_on_chain():
    prog = ancestor_program()
    edb = chain_edb(40)
    assert evaluate_seminaive(prog, edb) == evaluate_naive(prog, edb)


def test_seminaive_iteration_count_chain_100():
    stats = EvalStats()
    evaluate_seminaive(ancestor_program(), chain_edb(100), stats=stats)
    assert abs(stats.iterations["ancestorclass"] - 100) <= 1


def test_monotone_totals_requires_no_retraction():
    # evaluation result includes every EDB-derivable base tuple
    prog = ancestor_program()
    out = evaluate_seminaive(prog, chain_edb(10))
    assert out["parent"] <= out["ancestorclass"]


# -- random program suite (the oracle-equivalence property)


def random_program(rng: random.Random):
    n_edb = rng.randint(1, 3)
    n_idb = rng.randint(1, 4)
    arity = {}
    preds = {}
    for i in range(n_edb):
        name = f"e{i}"
        arity[name] = rng.randint(1, 2)
        preds[name] = Predicate(name, arity[name], "edb")
    for i in range(n_idb):
        name = f"p{i}"
        arity[name] = rng.randint(1, 2)
        preds[name] = Predicate(name, arity[name], "idb")

    pool = [Var(v) for v in "xyzw"]
    rules = []
    for i in range(n_idb):
        head_name = f"p{i}"
        for _ in range(rng.randint(1, 3)):
            body = []
            bound = []
            for _ in range(rng.randint(1, 3)):
                # positive atoms over EDB or IDB with index <= i (allows
                # self-recursion, keeps later negation stratifiable)
                if rng.random() < 0.5 or i == 0:
                    pred = f"e{rng.randrange(n_edb)}"
                else:
                    pred = f"p{rng.randint(0, i)}"
                terms = tuple(rng.choice(pool) for _ in range(arity[pred]))
                body.append(Pos(Atom(pred, terms)))
                bound.extend(t.name for t in terms)
            if bound and rng.random() < 0.3 and i > 0:
                target = f"p{rng.randrange(i)}"
                terms = tuple(Var(rng.choice(bound)) for _ in range(arity[target]))
                body.append(Neg(Atom(target, terms)))
            if len(set(bound)) >= 2 and rng.random() < 0.3:
                a, b = rng.sample(sorted(set(bound)), 2)
                body.append(Cmp(rng.choice(["<", "<=", "!="]), Var(a), Var(b)))
            head_terms = tuple(
                Var(rng.choice(bound)) for _ in range(arity[head_name])
            )
            rules.append(Rule(Atom(head_name, head_terms), tuple(body)))

    program = DatalogProgram(
        predicates=preds, rules=rules, outputs=[f"p{i}" for i in range(n_idb)]
    )
    edb = {}
    for i in range(n_edb):
        name = f"e{i}"
        rows = set()
        for _ in range(rng.randint(0, 10)):
            rows.add(tuple(rng.randint(0, 4) for _ in range(arity[name])))
        edb[name] = rows
    return program, edb


def test_seminaive_equals_naive_on_random_programs():
    checked = 0
    for seed in range(120):
        rng = random.Random(seed)
        program, edb = random_program(rng)
        if check_safety(program):
            continue  # generator occasionally builds an unsafe rule; skip it
        try:
            stratify(program)
        except StratifyError:
            continue
        assert evaluate_seminaive(program, edb) == evaluate_naive(program, edb), (
            f"divergence at seed {seed}"
        )
        checked += 1
    assert checked >= 100


# -- apply_rule


def anc_rule():
    return parse_rules("anc(a, c) :- parent(a, b), anc(b, c).")[0]


def test_apply_rule_empty_delta():
    out = apply_rule(anc_rule(), {"parent": {(1, 2)}, "anc": set()}, {"anc": set()})
    assert out == set()


def test_apply_rule_single_join():
    out = apply_rule(
        anc_rule(),
        {"parent": {("A", "B")}, "anc": {("B", "C")}},
        {"anc": {("B", "C")}},
    )
    assert out == {("A", "C")}


def test_apply_rule_excludes_existing():
    out = apply_rule(
        anc_rule(),
        {"parent": {("A", "B")}, "anc": {("B", "C"), ("A", "C")}},
        {"anc": {("B", "C")}},
    )
    assert out == set()


def brute_force_join(parent, anc):
    return {(a, c) for (a, b) in parent for (b2, c) in anc if b == b2}


def test_apply_rule_against_nested_loop_oracle():
    rng = random.Random(11)
    for _ in range(50):
        parent = {(rng.randint(0, 6), rng.randint(0, 6)) for _ in range(rng.randint(0, 12))}
        delta = {(rng.randint(0, 6), rng.randint(0, 6)) for _ in range(rng.randint(0, 12))}
        totals = {"parent": parent, "anc": set(delta)}
        got = apply_rule(anc_rule(), totals, {"anc": delta})
        assert got == brute_force_join(parent, delta) - totals["anc"]


# -- aggregation semantics


def agg_program():
    count_rule = Rule(
        Atom("n_children", (Var("p"), Var("n"))),
        (
            Pos(Atom("node", (Var("p"),))),
            Agg(Var("n"), "count", (Var("p"),), (Var("c"),),
                (Pos(Atom("edge", (Var("p"), Var("c")))),)),
        ),
    )
    sum_rule = Rule(
        Atom("weight_sum", (Var("p"), Var("s"))),
        (
            Pos(Atom("node", (Var("p"),))),
            Agg(Var("s"), "sum", (Var("p"),), (Var("w"),),
                (Pos(Atom("weight", (Var("p"), Var("w")))),)),
        ),
    )
    preds = {
        "node": Predicate("node", 1, "edb"),
        "edge": Predicate("edge", 2, "edb"),
        "weight": Predicate("weight", 2, "edb"),
        "n_children": Predicate("n_children", 2, "idb"),
        "weight_sum": Predicate("weight_sum", 2, "idb"),
    }
    return DatalogProgram(preds, [count_rule, sum_rule], ["n_children", "weight_sum"])


def test_count_of_empty_group_is_zero():
    out = evaluate_seminaive(agg_program(), {
        "node": {(1,), (2,)},
        "edge": {(1, 10), (1, 11)},
        "weight": set(),
    })
    assert out["n_children"] == {(1, 2), (2, 0)}
    assert out["weight_sum"] == set()  # sum over empty group yields no tuple


def test_sum_min_max_over_groups():
    edb = {
        "node": {(1,), (2,)},
        "edge": set(),
        "weight": {(1, 3), (1, 4), (2, 7)},
    }
    out = evaluate_seminaive(agg_program(), edb)
    assert out["weight_sum"] == {(1, 7), (2, 7)}
    assert evaluate_naive(agg_program(), edb) == out


def test_duplicate_rules_idempotent():
    rules = parse_rules("p(x) :- q(x).\np(x) :- q(x).")
    prog = infer_program(rules)
    assert evaluate_seminaive(prog, {"q": {(1,)}})["p"] == {(1,)}


def test_text_format_roundtrip():
    rules = parse_rules(
        'p(x, y) :- q(x, z), !r(z), x < y, y := z + 1, starts_with("ab", "a").'
    )
    text = format_rule(rules[0])
    again = parse_rules(text)
    assert again == rules


def test_undeclared_predicate_rejected():
    prog = infer_program(parse_rules("p(x) :- q(x)."))
    prog.rules.append(parse_rules("p(x) :- mystery(x).")[0])
    with pytest.raises(DatalogError, match="mystery"):
        prog.validate()
