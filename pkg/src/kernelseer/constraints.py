"""Kernel tuning-parameter specs and the Boolean predicate engine.

A predicate sees the problem descriptor and a *partial* map of decoded
parameter values. Predicates used for pruning during beam search must be
monotone: once false on a partial map, false on every extension of it.
Non-monotone checks are registered with ``final_only=True`` and only run on
complete maps.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .errors import ArityError, ParameterError, ParseError, SchemaError


@dataclass(frozen=True)
class ConstraintPredicate:
    name: str
    fn: Callable[[object, Mapping[str, int]], bool]
    reads: tuple[str, ...] = ()
    final_only: bool = False
    explain: Callable[[object, Mapping[str, int]], tuple[str, ...]] | None = None

    def __call__(self, descriptor, partial: Mapping[str, int]) -> bool:
        return bool(self.fn(descriptor, partial))

    def culprits(self, descriptor, partial: Mapping[str, int]) -> tuple[str, ...]:
        if self.explain is not None:
            return self.explain(descriptor, partial)
        return tuple(n for n in self.reads if n in partial)


@dataclass(frozen=True)
class KernelSpec:
    name: str
    params: tuple[tuple[str, tuple[int, ...]], ...]
    predicates: tuple[ConstraintPredicate, ...] = field(default=(), compare=False)

    def __post_init__(self):
        names = [p for p, _ in self.params]
        if not names:
            raise SchemaError(f"kernel {self.name} declares no parameters")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate parameter names in kernel {self.name}")
        for pname, values in self.params:
            if not values:
                raise SchemaError(f"parameter {pname} of {self.name} has an empty value set")
            if len(set(values)) != len(values):
                raise SchemaError(f"parameter {pname} of {self.name} repeats a value")

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.params)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for _, v in self.params)

    def values(self, name: str) -> tuple[int, ...]:
        for pname, vals in self.params:
            if pname == name:
                return vals
        raise SchemaError(f"kernel {self.name} has no parameter '{name}'")

    def __len__(self) -> int:
        return len(self.params)


def _r(lo: int, hi: int) -> tuple[int, ...]:
    return tuple(range(lo, hi + 1))


def _p2(lo: int, hi: int) -> tuple[int, ...]:
    return tuple(2**e for e in range(lo, hi + 1))


# The four builtin kernels and the legal values of each tuning parameter.
_BUILTIN_PARAMS: dict[str, tuple[tuple[str, tuple[int, ...]], ...]] = {
    "ConvAsm1x1U": (
        ("read_size", _r(1, 4)),
        ("k_mult", (1, 4, 8, 16, 32)),
        ("chunks_per_wave", _r(1, 16)),
        ("chunk_size", (1, 2, 4, 8, 16, 32, 64)),
        ("n_mult", _r(1, 8)),
        ("c_mult", (1, 2, 4, 8, 16, 32)),
        ("waves_c_in_group", _r(1, 8)),
        ("waves_k_in_group", (1, 2, 4, 8)),
    ),
    "ConvOclDirectFwd1x1": (
        ("grp_tile1", _p2(0, 4)),
        ("grp_tile0", _p2(0, 8)),
        ("in_tile1", _p2(0, 5)),
        ("in_tile_0", _p2(0, 5)),
        ("out_pix_tile1", (0, 1)),
        ("out_pix_tile0", (0, 1, 2, 4)),
        ("n_out_pix_tiles", _p2(0, 6)),
        ("n_in_data_tiles", _p2(0, 11)),
        ("n_stacks", (0, 1)),
    ),
    "ConvAsmBwdWrW1x1": (
        ("read_size", _r(1, 4)),
        ("c_per_gpr", (1, 2, 4, 8, 16)),
        ("c_mult", (1, 2, 4, 8, 16)),
        ("k_per_gpr", (1, 2, 4, 8, 16)),
        ("k_mult", (1, 2, 4, 8, 16)),
        ("n_per_gpr", (1, 2, 4, 8, 16)),
        ("n_part_cnt", _r(1, 8)),
        ("chunk_size", (1, 2, 4, 8, 16)),
        ("short_store", (0, 1)),
        ("data_prefetch", _r(0, 4)),
    ),
    "ConvAsmBwdWrW3x3": (
        ("limit_wave_cnt", _r(0, 9)),
        ("reverse_inout", (0, 1)),
        ("chunk_size", (8, 16)),
        ("k_per_wave", (1, 2, 4, 8)),
        ("pipe_lines_depth", _r(1, 16)),
        ("n_per_group", _r(1, 8)),
    ),
}

# Illustrative linear resource budgets. These are not hardware limits; real
# register/LDS ceilings are user configuration.
EXAMPLE_BUDGETS: dict[str, tuple[dict[str, float], dict[str, dict[str, float]]]] = {
    "ConvAsm1x1U": (
        {"vgpr_units": 48.0},
        {"vgpr_units": {"read_size": 4.0, "k_mult": 1.0, "c_mult": 1.0}},
    ),
    "ConvOclDirectFwd1x1": (
        {"lds_units": 96.0},
        {"lds_units": {"grp_tile1": 2.0, "grp_tile0": 0.25, "in_tile1": 1.0, "in_tile_0": 1.0}},
    ),
    "ConvAsmBwdWrW1x1": (
        {"gpr_units": 40.0},
        {"gpr_units": {"c_per_gpr": 1.0, "k_per_gpr": 1.0, "n_per_gpr": 1.0, "read_size": 2.0}},
    ),
    "ConvAsmBwdWrW3x3": (
        {"wave_units": 20.0},
        {"wave_units": {"limit_wave_cnt": 1.0, "pipe_lines_depth": 1.0}},
    ),
}


def membership_predicate(spec: KernelSpec) -> ConstraintPredicate:
    legal = {name: frozenset(vals) for name, vals in spec.params}

    def bad(_desc, partial):
        out = []
        for name, value in partial.items():
            if name not in legal:
                raise SchemaError(f"kernel {spec.name} has no parameter '{name}'")
            if value not in legal[name]:
                out.append(name)
        return tuple(out)

    return ConstraintPredicate(
        name="membership",
        fn=lambda desc, partial: not bad(desc, partial),
        reads=spec.param_names,
        explain=bad,
    )


def resource_budget_predicate(
    budget: Mapping[str, float],
    cost_fn: Mapping[str, Mapping[str, float]],
    name: str = "resource_budget",
) -> ConstraintPredicate:
    """True iff for every resource ``r``: sum of ``weight[r][p] * value[p]`` over assigned ``p`` <= ``budget[r]``.

    Unassigned parameters contribute nothing, so with non-negative weights and
    values the predicate is monotone.
    """
    for res, limit in budget.items():
        if limit < 0:
            raise ParameterError(f"budget for {res} is negative")
    for res, weights in cost_fn.items():
        if res not in budget:
            raise ParameterError(f"cost weights given for unknown resource {res}")
        for pname, w in weights.items():
            if w < 0:
                raise ParameterError(f"negative weight {w} for {pname} in {res}")
    budget = dict(budget)
    cost_fn = {r: dict(w) for r, w in cost_fn.items()}
    reads = tuple(sorted({p for w in cost_fn.values() for p in w}))

    def fits(_desc, partial):
        for res, weights in cost_fn.items():
            used = sum(w * partial[p] for p, w in weights.items() if p in partial)
            if used > budget[res]:
                return False
        return True

    def over(_desc, partial):
        names: list[str] = []
        for res, weights in cost_fn.items():
            used = sum(w * partial[p] for p, w in weights.items() if p in partial)
            if used > budget[res]:
                names.extend(p for p in weights if p in partial and p not in names)
        return tuple(names)

    return ConstraintPredicate(name=name, fn=fits, reads=reads, explain=over)


def example_budget_predicate(kernel: str) -> ConstraintPredicate:
    budget, costs = EXAMPLE_BUDGETS[kernel]
    return resource_budget_predicate(budget, costs, name=f"{kernel}.example_budget")


def builtin_specs() -> dict[str, KernelSpec]:
    specs = {}
    for name, params in _BUILTIN_PARAMS.items():
        bare = KernelSpec(name, params)
        specs[name] = KernelSpec(
            name, params, (membership_predicate(bare), example_budget_predicate(name))
        )
    return specs


def get_spec(name: str, registry: Mapping[str, KernelSpec] | None = None) -> KernelSpec:
    registry = builtin_specs() if registry is None else registry
    try:
        return registry[name]
    except KeyError:
        known = ", ".join(sorted(registry))
        raise SchemaError(f"unknown kernel '{name}'; known kernels: {known}") from None


@dataclass(frozen=True)
class Violation:
    predicate: str
    params: tuple[str, ...]


def validate_sequence(
    spec: KernelSpec,
    descriptor,
    values: Mapping[str, int],
    predicates: list[ConstraintPredicate] | tuple[ConstraintPredicate, ...] | None = None,
) -> Violation | None:
    """Check a complete parameter map; ``None`` means valid, otherwise the first failure."""
    missing = [n for n in spec.param_names if n not in values]
    if missing:
        raise ArityError(f"parameter map for {spec.name} is missing {', '.join(missing)}")
    extra = [n for n in values if n not in spec.param_names]
    if extra:
        raise SchemaError(f"kernel {spec.name} has no parameter(s) {', '.join(extra)}")
    predicates = spec.predicates if predicates is None else predicates
    for pred in predicates:
        if not pred(descriptor, values):
            return Violation(pred.name, pred.culprits(descriptor, values))
    return None


def search_space_size(spec: KernelSpec) -> int:
    return math.prod(len(v) for _, v in spec.params)


# ---------------------------------------------------------------------------
# text schema: "@spec <Kernel>|<param>=<values>,<param>=<values>"
# where <values> is space separated tokens INT, LO-HI or 2^LO-HI.

_VALUE_TOKEN = re.compile(r"^(?:(2\^)(\d+)-(\d+)|(-?\d+)-(\d+)|(-?\d+))$")


def _expand(token: str, line: int, col: int) -> list[int]:
    m = _VALUE_TOKEN.match(token)
    if not m:
        raise ParseError(f"bad value token '{token}'", line, col)
    if m.group(1):
        lo, hi = int(m.group(2)), int(m.group(3))
        vals = [2**e for e in range(lo, hi + 1)]
    elif m.group(4) is not None:
        lo, hi = int(m.group(4)), int(m.group(5))
        vals = list(range(lo, hi + 1))
    else:
        vals = [int(m.group(6))]
    if not vals:
        raise ParseError(f"empty range '{token}'", line, col)
    return vals


def parse_spec_line(text: str, line: int = 1) -> KernelSpec:
    body = text.strip()
    if not body.startswith("@spec"):
        raise ParseError("spec lines start with '@spec'", line, 1)
    body = body[len("@spec") :]
    offset = len(text) - len(text.lstrip()) + len("@spec") + 1
    if "|" not in body:
        raise ParseError("expected '<kernel>|<param>=<values>,...'", line, offset)
    name, rest = body.split("|", 1)
    name = name.strip()
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
        raise ParseError(f"bad kernel name '{name}'", line, offset)
    params = []
    col = offset + len(body.split("|", 1)[0]) + 1
    for chunk in rest.split(","):
        if "=" not in chunk:
            raise ParseError(f"expected '<param>=<values>' in '{chunk.strip()}'", line, col)
        pname, vals = chunk.split("=", 1)
        pname = pname.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", pname):
            raise ParseError(f"bad parameter name '{pname}'", line, col)
        values: list[int] = []
        for tok in vals.split():
            values.extend(_expand(tok, line, col))
        if not values:
            raise ParseError(f"parameter '{pname}' has no values", line, col)
        params.append((pname, tuple(values)))
        col += len(chunk) + 1
    bare = KernelSpec(name, tuple(params))
    return KernelSpec(name, bare.params, (membership_predicate(bare),))


def format_spec_line(spec: KernelSpec) -> str:
    parts = [f"{n}={' '.join(str(v) for v in vals)}" for n, vals in spec.params]
    return f"@spec {spec.name}|{','.join(parts)}"


def load_spec_file(path) -> dict[str, KernelSpec]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip().startswith("@spec"):
                spec = parse_spec_line(raw, lineno)
                out[spec.name] = spec
    return out
