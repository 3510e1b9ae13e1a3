"""Built-in example systems and the plain-text system-definition format.

Definition files are line-oriented ``key = value`` text.  Vector-valued
keys take bracketed comma-separated entries.  Recognized keys:

    name, n, m, T, x0, f0, f1..fm, guard_radius, K, oversample,
    shoot_tol, dedup_tol

``f0`` and each ``fj`` hold n coordinate expressions in the grammar of
:mod:`endmap.vfexpr`.  Unknown keys are rejected with the line number.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AffineSystem
from .vfexpr import ExprVectorField, contains_div, parse_field


class AnalyticityWarning(UserWarning):
    """A field definition uses division, which can break analyticity."""


class SystemFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def make_system(
    f0_texts,
    f_texts,
    n: int,
    T: float = 1.0,
    x0=None,
    guard_radius: float = 1e6,
    K: int = 16,
    oversample: int = 32,
    name: str = "",
    warn_division: bool = True,
) -> AffineSystem:
    """Build an AffineSystem from coordinate expression strings."""
    f0 = ExprVectorField(parse_field(list(f0_texts), n))
    fs = [ExprVectorField(parse_field(list(t), n)) for t in f_texts]
    if warn_division:
        for label, fld in [("f0", f0)] + [(f"f{j + 1}", fj) for j, fj in enumerate(fs)]:
            if any(contains_div(c.root) for c in fld.components):
                warnings.warn(
                    f"field {label} uses division; the system may not be analytic "
                    "on all of state space",
                    AnalyticityWarning,
                    stacklevel=2,
                )
    return AffineSystem(
        f0, fs, T=T, x0=x0, guard_radius=guard_radius, K=K, oversample=oversample, name=name
    )


_BUILTINS = {
    # the planar drift system with one vertical control channel; its only
    # abnormal trajectory is the x-axis line under u = 0
    "working": dict(n=2, f0=["1 + y^2", "0"], f=[["0", "1"]]),
    "heisenberg": dict(
        n=3,
        f0=["0", "0", "0"],
        f=[["1", "0", "-0.5*y"], ["0", "1", "0.5*x"]],
    ),
    "martinet-flat": dict(
        n=3,
        f0=["0", "0", "0"],
        f=[["1", "0", "0.5*y^2"], ["0", "1", "0"]],
    ),
    "double-integrator": dict(n=2, f0=["y", "0"], f=[["0", "1"]]),
}

BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin(name: str, **overrides) -> AffineSystem:
    """Construct one of the named example systems."""
    try:
        recipe = _BUILTINS[name]
    except KeyError:
        known = ", ".join(BUILTIN_NAMES)
        raise KeyError(f"unknown builtin system {name!r} (known: {known})") from None
    kw = dict(T=1.0, name=name)
    kw.update(overrides)
    return make_system(recipe["f0"], recipe["f"], recipe["n"], **kw)


@dataclass
class SystemDefinition:
    """Parsed contents of a system-definition file."""

    name: str
    n: int
    m: int
    f0: list[str]
    f: list[list[str]]
    T: float = 1.0
    x0: "np.ndarray | None" = None
    guard_radius: float = 1e6
    K: int = 16
    oversample: int = 32
    solver_overrides: dict = field(default_factory=dict)

    def to_system(self) -> AffineSystem:
        return make_system(
            self.f0,
            self.f,
            self.n,
            T=self.T,
            x0=self.x0,
            guard_radius=self.guard_radius,
            K=self.K,
            oversample=self.oversample,
            name=self.name,
        )


def _split_vector(raw: str, line: int) -> list[str]:
    raw = raw.strip()
    if not (raw.startswith("[") and raw.endswith("]")):
        raise SystemFormatError("vector values must be bracketed, like [a, b]", line)
    inner = raw[1:-1].strip()
    if not inner:
        raise SystemFormatError("empty vector value", line)
    # the expression grammar has no commas, so a flat split is unambiguous
    return [part.strip() for part in inner.split(",")]


_SCALAR_INT = {"n", "m", "K", "oversample"}
_SCALAR_FLOAT = {"T", "guard_radius", "shoot_tol", "dedup_tol"}


def load_definition(path: str) -> SystemDefinition:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    entries: dict[str, tuple[str, int]] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemFormatError("expected 'key = value'", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise SystemFormatError("missing key before '='", lineno)
        if key in entries:
            raise SystemFormatError(f"duplicate key {key!r}", lineno)
        entries[key] = (value, lineno)

    def take(key):
        item = entries.pop(key, None)
        return item

    def need(key):
        item = take(key)
        if item is None:
            raise SystemFormatError(f"missing required key {key!r}")
        return item

    def parse_int(key, item):
        value, lineno = item
        try:
            return int(value)
        except ValueError:
            raise SystemFormatError(f"{key} must be an integer, got {value!r}", lineno) from None

    def parse_float(key, item):
        value, lineno = item
        try:
            return float(value)
        except ValueError:
            raise SystemFormatError(f"{key} must be a number, got {value!r}", lineno) from None

    n = parse_int("n", need("n"))
    m = parse_int("m", need("m"))
    if n < 1 or m < 1:
        raise SystemFormatError("n and m must be >= 1")

    f0_item = need("f0")
    f0 = _split_vector(f0_item[0], f0_item[1])
    if len(f0) != n:
        raise SystemFormatError(f"f0 has {len(f0)} components, expected n = {n}", f0_item[1])
    fs = []
    for j in range(1, m + 1):
        item = need(f"f{j}")
        comps = _split_vector(item[0], item[1])
        if len(comps) != n:
            raise SystemFormatError(
                f"f{j} has {len(comps)} components, expected n = {n}", item[1]
            )
        fs.append(comps)

    kw: dict = {}
    item = take("name")
    name = item[0] if item else ""
    item = take("T")
    T = parse_float("T", item) if item else 1.0
    item = take("x0")
    x0 = None
    if item:
        parts = _split_vector(item[0], item[1])
        try:
            x0 = np.array([float(p) for p in parts])
        except ValueError:
            raise SystemFormatError("x0 entries must be numbers", item[1]) from None
        if x0.shape != (n,):
            raise SystemFormatError(f"x0 has {len(x0)} entries, expected n = {n}", item[1])
    item = take("guard_radius")
    guard = parse_float("guard_radius", item) if item else 1e6
    item = take("K")
    K = parse_int("K", item) if item else 16
    item = take("oversample")
    oversample = parse_int("oversample", item) if item else 32
    overrides = {}
    for key in ("shoot_tol", "dedup_tol"):
        item = take(key)
        if item:
            overrides[key] = parse_float(key, item)

    if entries:
        key, (_, lineno) = next(iter(entries.items()))
        raise SystemFormatError(f"unknown key {key!r}", lineno)

    return SystemDefinition(
        name=name,
        n=n,
        m=m,
        f0=f0,
        f=fs,
        T=T,
        x0=x0,
        guard_radius=guard,
        K=K,
        oversample=oversample,
        solver_overrides=overrides,
    )


def load_system(path: str) -> AffineSystem:
    """Load a definition file and build the system it describes."""
    return load_definition(path).to_system()
