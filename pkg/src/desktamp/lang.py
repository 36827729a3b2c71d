"""Symbolic action language: literals, fluent states, schemata, domains.

Continuous values never appear here directly; literals carry opaque handle
strings (by convention prefixed with '@') that the planner binds to poses,
grasps, configurations, and trajectories. Variables start with '?', and a
'*' argument in a goal matches anything.

Domain files are s-expressions::

    (domain NAME
      (predicates (fluent (AtPose obj pose) ...) (static (Kin conf grasp pose) ...))
      (action NAME [:human] (params (?v type) ...) (con L ...) (pre L ...) (eff L ...)))

Fluent predicates may appear in pre/eff, static ones only in con. Negative
preconditions are rejected; effects and goals may negate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from . import sexp

PARAM_TYPES = ("obj", "pose", "grasp", "conf", "traj")


class LangError(ValueError):
    pass


class Literal(NamedTuple):
    pred: str
    args: tuple[str, ...] = ()
    positive: bool = True

    def negate(self) -> "Literal":
        return Literal(self.pred, self.args, not self.positive)

    def substitute(self, binding: dict[str, str]) -> "Literal":
        return Literal(
            self.pred,
            tuple(binding.get(a, a) for a in self.args),
            self.positive,
        )

    def is_ground(self) -> bool:
        return not any(a.startswith("?") for a in self.args)

    def to_sexp(self):
        inner = [self.pred, *self.args]
        return inner if self.positive else ["not", inner]


# A formula is a conjunction of (possibly negated) literals.
Formula = tuple[Literal, ...]


class PredicateDecl(NamedTuple):
    name: str
    arg_types: tuple[str, ...]
    fluent: bool


@dataclass(frozen=True)
class FluentState:
    """An immutable set of ground positive fluent atoms.

    Invariants: at most one AtConf atom, at most one AtPose per object, and
    exactly one of {some AtGrasp, Empty} when either predicate is in play.
    """

    atoms: frozenset[Literal]

    def __post_init__(self):
        by_pred: dict[str, list[Literal]] = {}
        for a in self.atoms:
            if not a.positive:
                raise LangError(f"state atom must be positive: {a}")
            if not a.is_ground():
                raise LangError(f"state atom must be ground: {a}")
            by_pred.setdefault(a.pred, []).append(a)
        if len(by_pred.get("AtConf", [])) > 1:
            raise LangError("multiple AtConf atoms")
        seen = set()
        for a in by_pred.get("AtPose", []):
            if a.args[0] in seen:
                raise LangError(f"multiple AtPose atoms for {a.args[0]}")
            seen.add(a.args[0])
        grasping = bool(by_pred.get("AtGrasp"))
        empty = bool(by_pred.get("Empty"))
        if grasping == empty:
            raise LangError("state needs exactly one of AtGrasp/Empty")

    def holds(self, lit: Literal) -> bool:
        if lit.positive:
            return self._matches(lit)
        return not self._matches(lit.negate())

    def _matches(self, lit: Literal) -> bool:
        if "*" not in lit.args:
            return lit in self.atoms
        for a in self.atoms:
            if a.pred != lit.pred or len(a.args) != len(lit.args):
                continue
            if all(w == "*" or w == g for w, g in zip(lit.args, a.args)):
                return True
        return False

    def __iter__(self):
        return iter(self.atoms)

    def __len__(self):
        return len(self.atoms)


def make_state(atoms: Iterable[Literal]) -> FluentState:
    return FluentState(frozenset(atoms))


def eval_formula(state: FluentState, goal: Formula) -> bool:
    """True iff every conjunct holds. Raises on unground variables."""
    for lit in goal:
        if not lit.is_ground():
            raise LangError(f"goal literal is not ground: {lit}")
        if not state.holds(lit):
            return False
    return True


def apply_effects(state: FluentState, effects: Iterable[Literal]) -> FluentState:
    """STRIPS update: all deletes, then all adds."""
    effects = list(effects)
    atoms = set(state.atoms)
    for e in effects:
        if not e.positive:
            atoms.discard(e.negate())
    for e in effects:
        if e.positive:
            atoms.add(e)
    return FluentState(frozenset(atoms))


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]  # (?var, type)
    con: tuple[Literal, ...]
    pre: tuple[Literal, ...]
    eff: tuple[Literal, ...]
    human: bool = False

    def param_type(self, var: str) -> str:
        for v, t in self.params:
            if v == var:
                return t
        raise KeyError(var)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    predicates: dict[str, PredicateDecl]
    schemas: tuple[ActionSchema, ...]

    def schema(self, name: str) -> ActionSchema:
        for s in self.schemas:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class ProblemSpec:
    """Symbolic slice of a task file; geometry lives in tasks.TaskSpec."""

    name: str
    domain: str
    objects: tuple[str, ...]
    init: tuple[Literal, ...]
    goal: Formula
    object_forms: dict[str, list] = field(default_factory=dict, compare=False)
    extra_forms: tuple = field(default_factory=tuple, compare=False)


def _parse_literal(form, domain_preds: dict[str, PredicateDecl] | None = None) -> Literal:
    if not isinstance(form, list) or not form:
        raise LangError(f"literal must be a non-empty list: {form!r}")
    positive = True
    if form[0] == "not":
        if len(form) != 2:
            raise LangError(f"negation takes one literal: {form!r}")
        positive = False
        form = form[1]
        if not isinstance(form, list) or not form:
            raise LangError(f"negation of a non-literal: {form!r}")
    pred = str(form[0])
    args = tuple(str(a) for a in form[1:])
    if domain_preds is not None:
        decl = domain_preds.get(pred)
        if decl is None:
            raise LangError(f"unknown predicate {pred!r}")
        if len(args) != len(decl.arg_types):
            raise LangError(
                f"{pred} expects {len(decl.arg_types)} args, got {len(args)}"
            )
    return Literal(pred, args, positive)


def _section(form: list, key: str) -> list | None:
    for item in form:
        if isinstance(item, list) and item and item[0] == key:
            return item[1:]
    return None


def parse_domain(text_or_form) -> DomainSpec:
    form = (
        sexp.parse_one(text_or_form)
        if isinstance(text_or_form, str)
        else text_or_form
    )
    if not (isinstance(form, list) and form and form[0] == "domain"):
        raise LangError("expected a (domain ...) form")
    if len(form) < 2 or not isinstance(form[1], str):
        raise LangError("domain needs a name")
    name = form[1]

    preds_form = _section(form, "predicates")
    if preds_form is None:
        raise LangError("domain is missing (predicates ...)")
    predicates: dict[str, PredicateDecl] = {}
    for group in preds_form:
        if not (isinstance(group, list) and group and group[0] in ("fluent", "static")):
            raise LangError(f"predicate group must be fluent/static: {group!r}")
        fluent = group[0] == "fluent"
        for decl in group[1:]:
            if not isinstance(decl, list) or not decl:
                raise LangError(f"bad predicate declaration: {decl!r}")
            pname = str(decl[0])
            types = tuple(str(t) for t in decl[1:])
            for t in types:
                if t not in PARAM_TYPES:
                    raise LangError(f"unknown type {t!r} in predicate {pname}")
            if pname in predicates:
                raise LangError(f"duplicate predicate {pname}")
            predicates[pname] = PredicateDecl(pname, types, fluent)

    schemas = []
    for item in form[2:]:
        if not (isinstance(item, list) and item and item[0] == "action"):
            continue
        if len(item) < 2 or not isinstance(item[1], str):
            raise LangError("action needs a name")
        aname = item[1]
        human = ":human" in item[2:]
        body = [f for f in item[2:] if f != ":human"]
        params_form = _section(body, "params")
        if params_form is None:
            raise LangError(f"action {aname} is missing (params ...)")
        params = []
        for p in params_form:
            if not (isinstance(p, list) and len(p) == 2):
                raise LangError(f"bad param {p!r} in action {aname}")
            var, ptype = str(p[0]), str(p[1])
            if not var.startswith("?"):
                raise LangError(f"param {var!r} must start with '?'")
            if ptype not in PARAM_TYPES:
                raise LangError(f"unknown param type {ptype!r} in action {aname}")
            params.append((var, ptype))
        con = tuple(
            _parse_literal(l, predicates) for l in (_section(body, "con") or [])
        )
        pre = tuple(
            _parse_literal(l, predicates) for l in (_section(body, "pre") or [])
        )
        eff = tuple(
            _parse_literal(l, predicates) for l in (_section(body, "eff") or [])
        )
        for lit in con:
            if predicates[lit.pred].fluent:
                raise LangError(f"fluent {lit.pred} in con of {aname}")
            if not lit.positive:
                raise LangError(f"negated constraint in {aname}: {lit}")
        for lit in pre:
            if not predicates[lit.pred].fluent:
                raise LangError(f"static {lit.pred} in pre of {aname}")
            if not lit.positive:
                raise LangError(f"negative precondition in {aname}: {lit}")
        for lit in eff:
            if not predicates[lit.pred].fluent:
                raise LangError(f"static {lit.pred} in eff of {aname}")
        declared = {v for v, _ in params}
        for lit in (*con, *pre, *eff):
            for a in lit.args:
                if a.startswith("?") and a not in declared:
                    raise LangError(f"undeclared variable {a} in {aname}")
        schemas.append(ActionSchema(aname, tuple(params), con, pre, eff, human))
    if not schemas:
        raise LangError(f"domain {name} declares no actions")
    return DomainSpec(name, predicates, tuple(schemas))


def print_domain(domain: DomainSpec) -> str:
    fluents = [
        [d.name, *d.arg_types] for d in domain.predicates.values() if d.fluent
    ]
    statics = [
        [d.name, *d.arg_types] for d in domain.predicates.values() if not d.fluent
    ]
    form: list = [
        "domain",
        domain.name,
        ["predicates", ["fluent", *fluents], ["static", *statics]],
    ]
    for s in domain.schemas:
        action: list = ["action", s.name]
        if s.human:
            action.append(":human")
        action.append(["params", *[[v, t] for v, t in s.params]])
        action.append(["con", *[l.to_sexp() for l in s.con]])
        action.append(["pre", *[l.to_sexp() for l in s.pre]])
        action.append(["eff", *[l.to_sexp() for l in s.eff]])
        form.append(action)
    return sexp.dumps(form) + "\n"


def parse_problem(text_or_form, domain: DomainSpec | None = None) -> ProblemSpec:
    form = (
        sexp.parse_one(text_or_form)
        if isinstance(text_or_form, str)
        else text_or_form
    )
    if not (isinstance(form, list) and form and form[0] == "problem"):
        raise LangError("expected a (problem ...) form")
    if len(form) < 2 or not isinstance(form[1], str):
        raise LangError("problem needs a name")
    name = form[1]
    dom_form = _section(form, "domain")
    if not dom_form or not isinstance(dom_form[0], str):
        raise LangError("problem is missing (domain NAME)")
    preds = domain.predicates if domain is not None else None

    objects_form = _section(form, "objects")
    if objects_form is None:
        raise LangError("problem is missing (objects ...)")
    objects = []
    object_forms: dict[str, list] = {}
    for o in objects_form:
        if not (isinstance(o, list) and o and isinstance(o[0], str)):
            raise LangError(f"bad object entry: {o!r}")
        objects.append(o[0])
        object_forms[o[0]] = o[1:]

    init_form = _section(form, "init") or []
    init = tuple(_parse_literal(l, preds) for l in init_form)
    for lit in init:
        if not lit.positive:
            raise LangError(f"negative literal in init: {lit}")

    goal_form = _section(form, "goal")
    if goal_form is None:
        raise LangError("problem is missing (goal ...)")
    if len(goal_form) == 1 and isinstance(goal_form[0], list) and goal_form[0][:1] == ["and"]:
        conjuncts = goal_form[0][1:]
    else:
        conjuncts = goal_form
    goal = tuple(_parse_literal(l, preds) for l in conjuncts)

    extra = tuple(
        f
        for f in form[2:]
        if isinstance(f, list)
        and f
        and f[0] not in ("domain", "objects", "init", "goal")
    )
    return ProblemSpec(
        name, dom_form[0], tuple(objects), init, goal, object_forms, extra
    )
