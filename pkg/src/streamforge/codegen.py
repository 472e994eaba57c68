"""Point-wise kernel generation.

A kernel is described once as a restricted, scalar, C-like template
(:class:`KernelSpec`): per-point statements with ``${...}`` placeholders
and bounded ``%for`` loops over the field-variable or dimension counts.
The generator unrolls the loops, splices configured expressions (e.g.
source terms), prunes parameters that end up unused, and emits a complete
native translation unit — a flat, parallel-for annotated loop over points
with one pointer parameter per surviving argument plus a leading ``int64``
point count. Data layout is fixed: struct-of-arrays, point index fastest
(component ``k`` of parameter ``q`` lives at ``q[k*npts + pt]``).

Every spec also yields an in-process twin that evaluates the same
statements vectorized over points, so generated kernels run without a
compiler and compiled output can be checked against an independent
reference.

Template language, deliberately minimal:

* ``%for i in nvars`` ... ``%endfor`` (also ``ndims``), nestable;
* ``${i}`` substitutes a loop index, ``${name}`` an entry from the
  context's expression map (list-valued entries are indexed by the
  innermost loop; empty entries read as ``0``);
* statements assign to ``out``/``inout`` parameters only, referencing
  components as ``name[k]`` (or bare ``name`` when the per-point extent
  is 1) and scalars by name;
* expressions use ``+ - * /``, unary minus, parentheses, numeric
  literals, ``pi`` and the functions below. Write float literals with a
  decimal point (``1.0/2.0``, not ``1/2``) — integer division is not a
  thing here.
"""
from __future__ import annotations

import hashlib
import os
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import CodegenError, CompileError, InvalidArgumentError

INTENTS = ("in", "out", "inout", "scalar")
BASE_TYPES = ("fpdtype", "i64")
PRECISIONS = ("f32", "f64")

_RESERVED_NAMES = {"npts", "pt", "pi"}

#: functions usable in kernel expressions, with their vectorized equivalents
DSL_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "fabs": np.abs,
    "pow": np.power,
    "fmin": np.minimum,
    "fmax": np.maximum,
}

DEFAULT_COMPILER_COMMAND = "cc -O2 -fopenmp -shared -fPIC -ffp-contract=off"
CACHE_DIR_NAME = ".streamforge-cache"
MODULE_SUFFIX = ".so"


@dataclass(frozen=True)
class KernelParam:
    """One formal parameter of a point-wise kernel."""

    name: str
    intent: str  # in | out | inout | scalar
    base_type: str = "fpdtype"  # fpdtype | i64
    per_point_extent: int = 1


@dataclass(frozen=True)
class KernelContext:
    """Expansion context: loop bounds, precision, and spliced expressions."""

    ndims: int = 1
    nvars: int = 1
    precision: str = "f64"
    extra_exprs: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class KernelSpec:
    """A scalar point-wise kernel template plus its expansion context."""

    name: str
    params: tuple[KernelParam, ...]
    body: tuple[str, ...]
    context: KernelContext = field(default_factory=KernelContext)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "body", tuple(self.body))
        _validate_spec(self)


@dataclass(frozen=True)
class GeneratedSource:
    """A complete native translation unit for one kernel."""

    text: str
    pruned_params: tuple[KernelParam, ...]
    entry_symbol: str


_IDENT_RE = re.compile(r"^[A-Za-z_]\w*$")
# identifier occurrences inside expressions; the lookbehind keeps the
# exponent letter of literals like 1e-3 from reading as a name
_TOKEN_RE = re.compile(r"(?<![\w.])[A-Za-z_]\w*")


def _validate_spec(spec: KernelSpec) -> None:
    if not _IDENT_RE.match(spec.name):
        raise CodegenError(f"kernel name {spec.name!r} is not a valid identifier")
    seen = set()
    for p in spec.params:
        if not _IDENT_RE.match(p.name):
            raise CodegenError(f"parameter name {p.name!r} is not a valid identifier")
        if p.name in _RESERVED_NAMES or p.name in DSL_FUNCTIONS:
            raise CodegenError(f"parameter name {p.name!r} is reserved")
        if p.name.endswith("__p"):
            raise CodegenError(f"parameter name {p.name!r} collides with generated names")
        if p.name in seen:
            raise CodegenError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)
        if p.intent not in INTENTS:
            raise CodegenError(f"parameter {p.name!r}: unknown intent {p.intent!r}")
        if p.base_type not in BASE_TYPES:
            raise CodegenError(f"parameter {p.name!r}: unknown base type {p.base_type!r}")
        if p.per_point_extent < 1:
            raise CodegenError(f"parameter {p.name!r}: extent must be >= 1")
        if p.intent == "scalar" and p.per_point_extent != 1:
            raise CodegenError(f"scalar parameter {p.name!r} cannot have an extent")
    ctx = spec.context
    if not 1 <= ctx.ndims <= 3:
        raise CodegenError(f"ndims must be in 1..3, got {ctx.ndims}")
    if ctx.nvars < 1:
        raise CodegenError(f"nvars must be >= 1, got {ctx.nvars}")
    if ctx.precision not in PRECISIONS:
        raise CodegenError(f"precision must be one of {PRECISIONS}, got {ctx.precision!r}")


# -- body expansion -----------------------------------------------------------

_LOOP_RE = re.compile(r"^\s*%for\s+([A-Za-z_]\w*)\s+in\s+(nvars|ndims)\s*$")
_ENDFOR_RE = re.compile(r"^\s*%endfor\s*$")
_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_]\w*)\}")
_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.S)


def _splice(name: str, value, bindings: dict[str, int]) -> str:
    if value is None or value == "" or value == []:
        return "0"
    if isinstance(value, (list, tuple)):
        if not bindings:
            raise CodegenError(
                f"list-valued expression {name!r} used outside a loop"
            )
        index = bindings[next(reversed(bindings))]  # innermost loop
        if index >= len(value):
            raise CodegenError(
                f"expression list {name!r} has {len(value)} entries, "
                f"loop index is {index}"
            )
        entry = value[index]
        return "0" if entry is None or entry == "" else str(entry)
    return str(value)


def expand_body(spec: KernelSpec) -> list[str]:
    """Unroll loops and substitute placeholders, yielding straight-line
    scalar statements. Unresolved placeholders raise ``CodegenError``
    naming the placeholder."""
    ctx = spec.context
    counts = {"nvars": ctx.nvars, "ndims": ctx.ndims}
    out: list[str] = []

    def substitute(line: str, bindings: dict[str, int]) -> str:
        def repl(match: re.Match) -> str:
            name = match.group(1)
            if name in bindings:
                return str(bindings[name])
            if name in ctx.extra_exprs:
                return _splice(name, ctx.extra_exprs[name], bindings)
            raise CodegenError(f"unresolved placeholder '{name}'")

        return _PLACEHOLDER_RE.sub(repl, line)

    def emit(lines: Sequence[str], bindings: dict[str, int]) -> None:
        i = 0
        while i < len(lines):
            line = lines[i]
            loop = _LOOP_RE.match(line)
            if loop:
                var, space = loop.group(1), loop.group(2)
                depth, j = 1, i + 1
                while j < len(lines):
                    if _LOOP_RE.match(lines[j]):
                        depth += 1
                    elif _ENDFOR_RE.match(lines[j]):
                        depth -= 1
                        if depth == 0:
                            break
                    j += 1
                if depth != 0:
                    raise CodegenError("unterminated %for loop")
                inner = lines[i + 1 : j]
                for idx in range(counts[space]):
                    emit(inner, {**bindings, var: idx})
                i = j + 1
            elif _ENDFOR_RE.match(line):
                raise CodegenError("%endfor without a matching %for")
            else:
                stmt = _COMMENT_RE.sub(" ", substitute(line, bindings)).strip()
                if stmt:
                    out.append(stmt)
                i += 1

    emit(list(spec.body), {})
    return out


def prune_unused_params(
    spec: KernelSpec, expanded_body: Sequence[str]
) -> list[KernelParam]:
    """Parameters whose names never occur as a token in the expanded body
    are removed; survivor order is preserved. The invoke call site must
    supply only the surviving parameters."""
    text = _COMMENT_RE.sub(" ", "\n".join(expanded_body))
    tokens = set(_TOKEN_RE.findall(text))
    return [p for p in spec.params if p.name in tokens]


# -- single-precision constant suffixing -------------------------------------

_FLOAT_LITERAL_RE = re.compile(
    r"(?<![\w.])"
    r"(?:\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)"
    r"(?![\w.])"
)


def suffix_float_constants(source_text: str, precision: str) -> str:
    """Suffix floating literals with ``f`` when targeting f32.

    Recognized forms: ``1.0``, ``.5``, ``2.``, ``1e-3``, ``1.5E+2``.
    Integer literals, exponent digits, and already-suffixed literals are
    untouched; the transformation is idempotent. f64 input is returned
    unchanged.
    """
    if precision not in PRECISIONS:
        raise InvalidArgumentError(f"precision must be one of {PRECISIONS}")
    if precision == "f64":
        return source_text
    return _FLOAT_LITERAL_RE.sub(lambda m: m.group(0) + "f", source_text)


_F32_FUNC_RE = re.compile(r"\b(" + "|".join(DSL_FUNCTIONS) + r")\s*\(")


def _f32_function_names(text: str) -> str:
    return _F32_FUNC_RE.sub(lambda m: m.group(1) + "f(", text)


# -- statement parsing (shared by the C emitter and the in-process twin) ------


@dataclass(frozen=True)
class _Statement:
    target: str
    index: int | None  # component index, None for flat/extent-1 targets
    rhs: str
    code: object = field(repr=False, compare=False)  # compiled Python expr


_LHS_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\[\s*(\d+)\s*\])?\s*$")
# int-literal / int-literal truncates in C but not in the in-process twin
_INT_DIV_RE = re.compile(r"(?<![\w.])\d+\s*/\s*\d+(?![\w.eE])")


def _parse_statements(
    spec: KernelSpec, expanded_body: Sequence[str], params: Sequence[KernelParam]
) -> list[_Statement]:
    by_name = {p.name: p for p in params}
    writable = {p.name for p in params if p.intent in ("out", "inout")}
    assigned: set[str] = set()
    unwritten_out = {p.name for p in params if p.intent == "out"}
    statements: list[_Statement] = []
    for raw in expanded_body:
        stmt = raw.strip().rstrip(";").strip()
        if not stmt:
            continue
        lhs, eq, rhs = stmt.partition("=")
        if not eq or rhs.startswith("="):
            raise CodegenError(f"statement is not an assignment: {raw!r}")
        m = _LHS_RE.match(lhs)
        if not m:
            raise CodegenError(f"malformed assignment target in {raw!r}")
        target, idx_text = m.group(1), m.group(2)
        if target not in writable:
            raise CodegenError(
                f"cannot assign to {target!r}; only out/inout parameters are writable"
            )
        param = by_name[target]
        index: int | None = int(idx_text) if idx_text is not None else None
        if index is not None and index >= param.per_point_extent:
            raise CodegenError(
                f"component {target}[{index}] exceeds extent {param.per_point_extent}"
            )
        if param.per_point_extent == 1:
            index = None
        elif index is None:
            raise CodegenError(
                f"{target!r} has extent {param.per_point_extent}; index a component"
            )
        rhs = rhs.strip()
        # extent-1 components may be written `name[0]`; normalize to the bare
        # name so the vectorized twin sees the whole per-point plane
        for p in params:
            if p.per_point_extent == 1 and p.intent != "scalar":
                rhs = re.sub(rf"\b{p.name}\s*\[\s*0\s*\]", p.name, rhs)
        if "**" in rhs:
            raise CodegenError("'**' is not part of the kernel language; use pow()")
        if _INT_DIV_RE.search(rhs):
            raise CodegenError(
                f"integer-literal division in {rhs!r}; write float literals (1.0/2.0)"
            )
        rhs_tokens = set(_TOKEN_RE.findall(rhs))
        stale = rhs_tokens & unwritten_out
        if stale:
            raise CodegenError(
                f"out parameter(s) {sorted(stale)} read before first assignment"
            )
        unknown = rhs_tokens - set(by_name) - set(DSL_FUNCTIONS) - {"pi"}
        if unknown:
            raise CodegenError(f"unknown identifier(s) in body: {sorted(unknown)}")
        try:
            code = compile(rhs, f"<kernel {spec.name}>", "eval")
        except SyntaxError as exc:
            raise CodegenError(f"cannot parse expression {rhs!r}: {exc}") from exc
        statements.append(_Statement(target, index, rhs, code))
        assigned.add(target)
        unwritten_out.discard(target)
    if not statements:
        raise CodegenError(f"kernel {spec.name!r} has an empty body")
    missing = unwritten_out
    if missing:
        raise CodegenError(f"out parameter(s) {sorted(missing)} never assigned")
    return statements


# -- native source emission ----------------------------------------------------


def _c_scalar_type(param: KernelParam, ctype: str) -> str:
    return "int64_t" if param.base_type == "i64" else ctype


def generate_pointwise_source(spec: KernelSpec) -> GeneratedSource:
    """Emit a complete native translation unit for ``spec``.

    The prototype carries a leading ``int64`` point count followed by the
    pruned parameters in declaration order; the body is a parallel-for
    annotated flat loop over points with per-point unpacking of array
    parameters.
    """
    precision = spec.context.precision
    ctype = "float" if precision == "f32" else "double"
    expanded = expand_body(spec)
    pruned = prune_unused_params(spec, expanded)
    statements = _parse_statements(spec, expanded, pruned)

    def body_text(stmt: _Statement) -> str:
        text = f"{stmt.target}{'' if stmt.index is None else f'_{stmt.index}'} = {stmt.rhs};"
        for p in pruned:
            if p.per_point_extent > 1:
                text = re.sub(rf"\b{p.name}\s*\[\s*(\d+)\s*\]", rf"{p.name}_\1", text)
            else:
                text = re.sub(rf"\b{p.name}\s*\[\s*0\s*\]", p.name, text)
        if precision == "f32":
            text = suffix_float_constants(text, "f32")
            text = _f32_function_names(text)
        return text

    uses_pi = any(
        "pi" in _TOKEN_RE.findall(s.rhs) for s in statements
    )

    lines: list[str] = []
    lines.append(f"/* generated point-wise kernel: {spec.name} */")
    lines.append("#include <stdint.h>")
    lines.append("#include <math.h>")
    lines.append("")
    lines.append('#define SF_EXPORT __attribute__((visibility("default")))')
    lines.append("")
    proto_params = ["const int64_t *npts__p"]
    for p in pruned:
        base = _c_scalar_type(p, ctype)
        const = "const " if p.intent in ("in", "scalar") else ""
        proto_params.append(f"{const}{base} *{p.name}__p")
    lines.append(f"SF_EXPORT void {spec.name}(")
    lines.append("    " + ",\n    ".join(proto_params) + ")")
    lines.append("{")
    lines.append("    const int64_t npts = *npts__p;")
    for p in pruned:
        if p.intent == "scalar":
            base = _c_scalar_type(p, ctype)
            if p.base_type == "fpdtype" and precision == "f32":
                lines.append(f"    const float {p.name} = (float)*{p.name}__p;")
            else:
                lines.append(f"    const {base} {p.name} = *{p.name}__p;")
    if uses_pi:
        if precision == "f32":
            lines.append("    const float pi = (float)3.141592653589793;")
        else:
            lines.append("    const double pi = 3.141592653589793;")
    lines.append("    #pragma omp parallel for")
    lines.append("    for (int64_t pt = 0; pt < npts; ++pt) {")
    for p in pruned:
        if p.intent == "scalar":
            continue
        base = _c_scalar_type(p, ctype)
        if p.per_point_extent == 1:
            if p.intent == "out":
                lines.append(f"        {base} {p.name};")
            else:
                const = "const " if p.intent == "in" else ""
                lines.append(f"        {const}{base} {p.name} = {p.name}__p[pt];")
        else:
            for k in range(p.per_point_extent):
                if p.intent == "out":
                    lines.append(f"        {base} {p.name}_{k};")
                else:
                    const = "const " if p.intent == "in" else ""
                    lines.append(
                        f"        {const}{base} {p.name}_{k} = "
                        f"{p.name}__p[{k} * npts + pt];"
                    )
    for stmt in statements:
        lines.append(f"        {body_text(stmt)}")
    for p in pruned:
        if p.intent not in ("out", "inout"):
            continue
        if p.per_point_extent == 1:
            lines.append(f"        {p.name}__p[pt] = {p.name};")
        else:
            for k in range(p.per_point_extent):
                lines.append(f"        {p.name}__p[{k} * npts + pt] = {p.name}_{k};")
    lines.append("    }")
    lines.append("}")
    text = "\n".join(lines) + "\n"

    # scalar-typed fpdtype parameters always arrive as 8-byte doubles; the
    # f32 kernel casts on load, so the f32 scalar precision matches the twin
    return GeneratedSource(text=text, pruned_params=tuple(pruned), entry_symbol=spec.name)


# -- in-process twin -------------------------------------------------------------


@dataclass(frozen=True)
class PointwiseKernel:
    """A generated kernel: native source plus its in-process twin.

    ``argument_names`` lists the invoke arguments in order (the leading
    point count, then the surviving parameters).
    """

    spec: KernelSpec
    source: GeneratedSource
    intrinsic: Callable
    pruned_params: tuple[KernelParam, ...]

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def argument_names(self) -> tuple[str, ...]:
        return ("npts",) + tuple(p.name for p in self.pruned_params)


def build_pointwise_kernel(spec: KernelSpec) -> PointwiseKernel:
    """Expand, prune, and emit ``spec``; also build the in-process twin."""
    source = generate_pointwise_source(spec)
    expanded = expand_body(spec)
    pruned = source.pruned_params
    statements = _parse_statements(spec, expanded, pruned)
    precision = spec.context.precision
    np_fp = np.dtype(np.float32 if precision == "f32" else np.float64)

    globalns = {"__builtins__": {}}
    base_ns = dict(DSL_FUNCTIONS)
    base_ns["pi"] = np_fp.type(3.141592653589793)

    def intrinsic(buffers):
        npts = int(np.frombuffer(buffers[0], dtype="<i8", count=1)[0])
        ns = dict(base_ns)
        for i, p in enumerate(pruned, start=1):
            buf = buffers[i]
            if p.intent == "scalar":
                if p.base_type == "i64":
                    ns[p.name] = int(np.frombuffer(buf, "<i8", count=1)[0])
                else:
                    ns[p.name] = np_fp.type(np.frombuffer(buf, "<f8", count=1)[0])
            else:
                dt = np.dtype(np.int64) if p.base_type == "i64" else np_fp
                arr = np.frombuffer(buf, dtype=dt, count=p.per_point_extent * npts)
                if p.per_point_extent > 1:
                    arr = arr.reshape(p.per_point_extent, npts)
                ns[p.name] = arr
        for stmt in statements:
            value = eval(stmt.code, globalns, ns)  # restricted namespace
            target = ns[stmt.target]
            if stmt.index is None:
                target[...] = value
            else:
                target[stmt.index][...] = value

    return PointwiseKernel(spec, source, intrinsic, pruned)


# -- runtime compilation -----------------------------------------------------------

_compile_lock = threading.Lock()
compilations_run = 0  # incremented only on actual compiler invocations


def compiler_command() -> list[str]:
    """The configured native compiler command (``STREAMFORGE_CC`` overrides)."""
    return shlex.split(os.environ.get("STREAMFORGE_CC", DEFAULT_COMPILER_COMMAND))


def compile_to_library(
    source: GeneratedSource,
    workdir: str | os.PathLike | None = None,
    compiler_command_override: Sequence[str] | str | None = None,
) -> str:
    """Compile generated source into a loadable shared module.

    Outputs are cached under ``<workdir>/`` (default ``.streamforge-cache``
    in the working directory) keyed by the SHA-256 of the source text;
    recompiling identical source is a cache hit with no compiler
    invocation. Compiler failures raise ``CompileError`` carrying the
    captured diagnostics.
    """
    global compilations_run
    cache_dir = Path(workdir) if workdir is not None else Path(CACHE_DIR_NAME)
    digest = hashlib.sha256(source.text.encode("utf-8")).hexdigest()
    stem = f"{source.entry_symbol}-{digest[:8]}"
    c_path = cache_dir / f"{stem}.c"
    module_path = cache_dir / f"{stem}{MODULE_SUFFIX}"
    if module_path.exists():
        return str(module_path)
    with _compile_lock:
        if module_path.exists():
            return str(module_path)
        cache_dir.mkdir(parents=True, exist_ok=True)
        c_path.write_text(source.text, encoding="utf-8")
        if compiler_command_override is None:
            argv = compiler_command()
        elif isinstance(compiler_command_override, str):
            argv = shlex.split(compiler_command_override)
        else:
            argv = list(compiler_command_override)
        tmp_path = cache_dir / f"{stem}.tmp{MODULE_SUFFIX}"
        argv = argv + [str(c_path), "-o", str(tmp_path), "-lm"]
        proc = subprocess.run(argv, capture_output=True, text=True)
        compilations_run += 1
        if proc.returncode != 0:
            raise CompileError(
                f"compiler exited with status {proc.returncode}: {' '.join(argv)}",
                diagnostics=proc.stdout + proc.stderr,
            )
        os.replace(tmp_path, module_path)
    return str(module_path)
