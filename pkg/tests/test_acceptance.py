"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced.  The randomized-agreement harness (criteria 3, 7, 8) shares
one generated corpus via a module-scoped fixture.
"""

import json
import random
import time
from dataclasses import dataclass
from typing import Optional

import pytest

from qosmc.choreography import Interaction, Label, alphabet, is_maximal_word, is_prefix_word
from qosmc.cli import main
from qosmc.logic import (
    SAT,
    UNSAT_UP_TO_BOUND,
    VALID_UP_TO_BOUND,
    Atom,
    Evaluator,
    QlFormula,
    QlNot,
    QlOr,
    TOP,
    Until,
    is_star_free,
    q_sat,
    validate_against,
)
from qosmc.machines import (
    Cfsm,
    QosCfsm,
    QosSystem,
    Run,
    enumerate_runs,
    is_final,
    trace,
)
from qosmc.rcf import (
    AggregatorKind,
    AttributeRegistry,
    EMPTY_SPEC,
    parse_rcf_formula,
    parse_spec,
)
from oracles import linearization_language, oracle_is_maximal, random_gchor


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] criterion {num}: {name}{suffix}")
    assert ok, f"criterion {num} failed: {name} {detail}"


# ------------------------------------------------------------------------- #
# Criterion 1: aggregation fidelity
# ------------------------------------------------------------------------- #

EXPECTED_INTRO_CONTEXT = """\
local:
  10 <= m[b,q1p]
  5 <= c[a,q1]
  c[a,q0] <= 5
  c[a,q1] <= 10
  c[b,q0p] = 0
  c[b,q1p] = 0.01 * m[b,q1p]
  m[a,q0] = 0
  m[a,q1] < 3
  m[b,q0p] = 0
  m[b,q1p] <= 50
aggregates:
  c = c[a,q0] + c[b,q0p] + c[a,q1] + c[b,q1p]
  m = max{m[a,q0], m[b,q0p], m[a,q1], m[b,q1p]}
"""


def test_criterion_1_aggregation_fidelity(models_dir, capsys):
    started = time.monotonic()
    code = main(["aggregate", str(models_dir / "intro.cfsm"), "ab!m ab?m"])
    elapsed = time.monotonic() - started
    out = capsys.readouterr().out
    with capsys.disabled():
        ok = code == 0 and out.strip() == EXPECTED_INTRO_CONTEXT.strip()
        ok = ok and elapsed < 1.0
        report(1, "aggregation fidelity", ok, f"{elapsed:.2f}s")


# ------------------------------------------------------------------------- #
# Criterion 2: entailment bounds on the intro system
# ------------------------------------------------------------------------- #

def test_criterion_2_entailment_bounds(models_dir, capsys):
    started = time.monotonic()
    intro = str(models_dir / "intro.cfsm")
    code_good = main([
        "check", intro, str(models_dir / "intro_box_155.ql"),
        "-k", "2", "--format", "json",
    ])
    doc_good = json.loads(capsys.readouterr().out)
    code_bad = main([
        "check", intro, str(models_dir / "intro_box_15.ql"),
        "-k", "2", "--format", "json",
    ])
    doc_bad = json.loads(capsys.readouterr().out)
    elapsed = time.monotonic() - started
    with capsys.disabled():
        ok = (
            code_good == 0
            and doc_good["verdict"] == "valid-up-to-bound"
            and code_bad == 1
            and doc_bad["verdict"] == "counterexample"
            and [e["label"] for e in doc_bad["trace"]] == ["ab!m", "ab?m"]
            and elapsed < 5.0
        )
        report(2, "entailment bounds (c <= 15.5 valid, c <= 15 refuted)",
               ok, f"{elapsed:.2f}s")


# ------------------------------------------------------------------------- #
# Criteria 3/7/8: randomized algorithm/semantics agreement
# ------------------------------------------------------------------------- #

@dataclass
class Instance:
    system: QosSystem
    phi: QlFormula
    k: int
    verdict: str
    witness: Optional[Run]
    evaluator: Evaluator
    agree_models: bool
    agree_sat: bool


def _random_system(rng: random.Random, registry: AttributeRegistry) -> QosSystem:
    names = ["a", "b", "c"][: rng.choice([2, 2, 3])]
    messages = ["x", "y"]
    participants = {}
    for p in names:
        n_states = rng.randint(2, 4)
        states = [f"{p}{i}" for i in range(n_states)]
        transitions = {}
        for _ in range(rng.randint(1, 2)):
            src = rng.choice(states)
            dst = rng.choice(states)
            partner = rng.choice([q for q in names if q != p])
            msg = rng.choice(messages)
            if rng.random() < 0.5:
                label = Label(p, partner, msg, True)
            else:
                label = Label(partner, p, msg, False)
            transitions[(src, label)] = dst
        machine = Cfsm(
            p,
            frozenset(states),
            states[0],
            frozenset((s, l, d) for (s, l), d in transitions.items()),
        )
        finals = frozenset(rng.sample(states, rng.randint(1, n_states)))
        qos = {}
        for s in states:
            specs = []
            if rng.random() < 0.7:
                specs.append(f"u {rng.choice(['<=', '='])} {rng.randint(0, 3)}")
            if rng.random() < 0.5:
                specs.append(f"v <= {rng.randint(0, 3)}")
            qos[s] = parse_spec(", ".join(specs), registry) if specs else EMPTY_SPEC
        participants[p] = QosCfsm(machine, finals, qos)
    return QosSystem(participants, registry)


def _random_formula(
    rng: random.Random, system: QosSystem, depth: int
) -> QlFormula:
    registry = system.registry
    messages = sorted(system.messages())
    names = system.participant_names

    def atom() -> QlFormula:
        lhs = rng.choice(["u", "v", "u + v"])
        op = rng.choice(["<=", ">=", "<", ">", "="])
        return Atom(parse_rcf_formula(f"{lhs} {op} {rng.randint(0, 6)}", registry))

    def chor():
        g = random_gchor(rng, names, messages, rng.randint(1, 3))
        return g

    def build(d: int) -> QlFormula:
        roll = rng.random()
        if d == 0 or roll < 0.15:
            return TOP if rng.random() < 0.4 else atom()
        if roll < 0.35:
            return QlNot(build(d - 1))
        if roll < 0.60:
            return QlOr(build(d - 1), build(d - 1))
        return Until(build(d - 1), chor(), build(d - 1))

    return build(depth)


@pytest.fixture(scope="module")
def corpus(memo_solver):
    """The generated instances plus agreement bookkeeping for criteria 3/7/8."""
    rng = random.Random(987654321)
    registry = AttributeRegistry(
        {"u": AggregatorKind.SUM, "v": AggregatorKind.MAX}
    )
    instances: list[Instance] = []
    sat_count = 0
    started = time.monotonic()
    while len(instances) < 500 or sat_count < 100:
        system = _random_system(rng, registry)
        k = rng.randint(2, 4)
        runs = list(enumerate_runs(system, k))
        if len(runs) > 250:
            continue  # keep the corpus desk-sized
        final_runs = [r for r in runs if is_final(system, r.last)]
        phi = _random_formula(rng, system, 3)
        try:
            validate_against(phi, system)
        except Exception:
            continue
        ev = Evaluator(system, memo_solver)

        agree_models = True
        for run in final_runs[:3]:
            for plen in range(len(run) + 1):
                if ev.models(phi, run, plen) != ev.oracle_models(phi, run, plen):
                    agree_models = False

        verdict = q_sat(phi, system, k, memo_solver, evaluator=ev)
        brute_sat = any(ev.oracle_models(phi, r, 0) for r in final_runs)
        agree_sat = (verdict.result == SAT) == brute_sat

        if verdict.result == SAT:
            sat_count += 1
        instances.append(
            Instance(system, phi, k, verdict.result, verdict.witness, ev,
                     agree_models, agree_sat)
        )
        if time.monotonic() - started > 540:
            break
    return instances, time.monotonic() - started


def test_criterion_3_algorithm_semantics_agreement(corpus, capsys):
    instances, elapsed = corpus
    with capsys.disabled():
        disagreements = [
            i for i, inst in enumerate(instances)
            if not (inst.agree_models and inst.agree_sat)
        ]
        ok = len(instances) >= 500 and not disagreements and elapsed < 600
        report(
            3, "q_models/oracle and q_sat/brute-force agreement", ok,
            f"{len(instances)} instances, {len(disagreements)} disagreements, "
            f"{elapsed:.0f}s",
        )


def test_criterion_7_bound_monotonicity(corpus, capsys):
    instances, _ = corpus
    started = time.monotonic()
    bad = 0
    checked = 0
    for inst in instances:
        if inst.verdict != SAT:
            continue
        checked += 1
        for bump in (1, 2):
            again = q_sat(
                inst.phi, inst.system, inst.k + bump, inst.evaluator.session,
                evaluator=inst.evaluator,
            )
            if again.result != SAT or trace(again.witness) != trace(inst.witness):
                bad += 1
    with capsys.disabled():
        ok = checked >= 100 and bad == 0
        report(
            7, "bound monotonicity with identical witnesses", ok,
            f"{checked} sat instances rechecked, {bad} regressions, "
            f"{time.monotonic() - started:.0f}s",
        )


def test_criterion_8_finite_model_property(corpus, capsys):
    instances, _ = corpus
    flips = 0
    checked = 0
    for inst in instances:
        if inst.verdict != SAT or not is_star_free(inst.phi):
            continue
        if checked >= 100:
            break
        checked += 1
        witness = inst.witness
        # the witness itself is the finite run: truncating the search right
        # at its length must keep the verdict sat with the same witness
        tight = q_sat(
            inst.phi, inst.system, len(witness), inst.evaluator.session,
            evaluator=inst.evaluator,
        )
        if tight.result != SAT or trace(tight.witness) != trace(witness):
            flips += 1
        if not inst.evaluator.models(inst.phi, witness, 0):
            flips += 1
    with capsys.disabled():
        ok = checked >= 100 and flips == 0
        report(
            8, "finite-model property on star-free sat instances", ok,
            f"{checked} instances, {flips} flips",
        )


# ------------------------------------------------------------------------- #
# Criterion 4: language recognizer vs linearization enumeration
# ------------------------------------------------------------------------- #

def test_criterion_4_recognizer_oracle(capsys):
    started = time.monotonic()
    rng = random.Random(31337)
    disagreements = 0
    chors = 0
    while chors < 200:
        g = random_gchor(rng, ["A", "B", "C"], ["m", "n"], 4)
        lang = linearization_language(g)
        sigma = sorted(alphabet(g), key=str)
        words = set(rng.sample(sorted(lang, key=str), min(4, len(lang))))
        for _ in range(4):
            length = rng.randint(0, 10)
            if sigma:
                words.add(tuple(rng.choice(sigma) for _ in range(length)))
        for word in words:
            if is_prefix_word(g, word) != (word in lang):
                disagreements += 1
            if is_maximal_word(g, word) != oracle_is_maximal(g, word):
                disagreements += 1
        chors += 1
    elapsed = time.monotonic() - started
    with capsys.disabled():
        ok = disagreements == 0 and elapsed < 60
        report(
            4, "recognizer agrees with linearization enumeration", ok,
            f"{chors} choreographies, {disagreements} disagreements, "
            f"{elapsed:.0f}s",
        )


# ------------------------------------------------------------------------- #
# Criterion 5: weak-sequencing litmus
# ------------------------------------------------------------------------- #

def test_criterion_5_weak_sequencing_litmus(capsys):
    from qosmc.choreography import Seq

    g = Seq(Interaction("A", "B", "m"), Interaction("C", "B", "n"))
    lab = lambda s: Label(s[0], s[1], s[3:], s[2] == "!")
    accepted = is_prefix_word(
        g, (lab("CB!n"), lab("AB!m"), lab("AB?m"), lab("CB?n"))
    )
    rejected_input_first = not is_prefix_word(g, (lab("AB?m"),))
    rejected_subject_order = not is_prefix_word(g, (lab("CB!n"), lab("CB?n")))
    with capsys.disabled():
        ok = accepted and rejected_input_first and rejected_subject_order
        report(5, "weak-sequencing litmus word", ok)


# ------------------------------------------------------------------------- #
# Criterion 6: POP end-to-end
# ------------------------------------------------------------------------- #

def test_criterion_6_pop_end_to_end(models_dir, capsys):
    # hand-computed baseline: the three-reads-then-quit run needs 38 labels,
    # beyond k = 30, and the starred right conjunct has no finite maximal
    # word, so the formula holds vacuously on every run within the bound
    started = time.monotonic()
    code = main([
        "check", str(models_dir / "pop.cfsm"), str(models_dir / "pop_phi.ql"),
        "-k", "30", "--format", "json",
    ])
    doc = json.loads(capsys.readouterr().out)
    elapsed = time.monotonic() - started
    with capsys.disabled():
        ok = (
            code == 0
            and doc["verdict"] == "valid-up-to-bound"
            and doc["bound"] == 30
            and elapsed < 300
        )
        report(6, "POP formula at k=30 matches the recorded baseline", ok,
               f"{elapsed:.0f}s")
