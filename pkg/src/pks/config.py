"""Run configuration: a line-oriented ``key = value`` file with ``[section]`` headers.

Grammar
-------
* ``#`` starts a comment anywhere on a line; blank lines are ignored.
* ``[name]`` opens a section.  Every key lives in a section.
* ``key = value``; lists are comma-separated; matrices are given row by row.
* booleans are ``true`` / ``false``.  Repeated keys or sections are errors.

Sections and keys (defaults in brackets; starred entries are required)::

    [grid]        L*  N*
    [species]     beta*  (or chi* and beta_tilde* for two species; see below)
    [interaction] row1, row2, ...        [identity]
    [initial.K]   kind [gaussian]  center_x [0]  center_y [0]  size [1]
                  weight [equal]          (one list entry per mixture component;
                                           kind in gaussian | disk | liouville,
                                           size is sigma, radius or scale)
    [run]         horizon*  snapshot_every [0, time units; 0 = none]
                  sample_dt [0 = every step]  heatmaps [true]  raw [false]
    [jko]         tau [0.001]  epsilon [0 = c_eps h^2]  c_eps [4]  inner_tol [1e-9]
                  inner_max [2000]  outer_max [0]  outer_tol [1e-6]
                  mass_projection [true]  blur_compensation [true]
    [fv]          dt_safety [0.4]  max_dt [inf]  flux [exponential]
    [diagnostics] second_moment_law [true]  telescoping [true]  concentration [true]
                  fisher [true]  weak_residual [false]  holder [false]
    [ot_test]     instances [50]  max_support [36]  eps_fraction [0.01]  shift [4]
    [output]      dir [out]  seed [0]

The two-species form ``chi = c1, c2`` with ``beta_tilde = b1, b2`` sets
``A = chi chi^T`` and ``beta_i = b_i / chi_i``; it excludes ``beta`` and the
``[interaction]`` section.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .criticality import two_species_map
from .errors import ConfigurationError
from .grid import Disk, Gaussian, Liouville, Mixture, make_density, make_grid

_SECTION = re.compile(r"^\[([a-z_]+(?:\.[0-9]+)?)\]$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.*)$")
PROFILE_KINDS = ("gaussian", "disk", "liouville")


@dataclass(frozen=True)
class ProfileConfig:
    kind: tuple = ("gaussian",)
    center_x: tuple = (0.0,)
    center_y: tuple = (0.0,)
    size: tuple = (1.0,)
    weight: tuple = ()

    def build(self):
        k = len(self.kind)
        w = self.weight if self.weight else (1.0 / k,) * k
        parts = []
        for kind, cx, cy, s in zip(self.kind, self.center_x, self.center_y, self.size):
            if kind == "gaussian":
                parts.append(Gaussian((cx, cy), s))
            elif kind == "disk":
                parts.append(Disk((cx, cy), s, subsamples=4))
            else:
                parts.append(Liouville((cx, cy), s))
        return parts[0] if k == 1 and not self.weight else Mixture(tuple(parts), tuple(w))


@dataclass(frozen=True)
class JkoSection:
    tau: float = 1e-3
    epsilon: float = 0.0
    c_eps: float = 4.0
    inner_tol: float = 1e-9
    inner_max: int = 2000
    outer_max: int = 0
    outer_tol: float = 1e-6
    mass_projection: bool = True
    blur_compensation: bool = True


@dataclass(frozen=True)
class FvSection:
    dt_safety: float = 0.4
    max_dt: float = math.inf
    flux: str = "exponential"


@dataclass(frozen=True)
class DiagnosticsSection:
    second_moment_law: bool = True
    telescoping: bool = True
    concentration: bool = True
    fisher: bool = True
    weak_residual: bool = False
    holder: bool = False


@dataclass(frozen=True)
class OtTestSection:
    instances: int = 50
    max_support: int = 36
    eps_fraction: float = 0.01
    shift: float = 4.0


@dataclass(frozen=True)
class RunConfig:
    L: float
    N: int
    beta: tuple
    A: tuple
    horizon: float
    chi: tuple = ()
    beta_tilde: tuple = ()
    explicit_interaction: bool = False
    profiles: tuple = ()
    snapshot_every: float = 0.0
    sample_dt: float = 0.0
    heatmaps: bool = True
    raw: bool = False
    jko: JkoSection = field(default_factory=JkoSection)
    fv: FvSection = field(default_factory=FvSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    ot_test: OtTestSection = field(default_factory=OtTestSection)
    out: str = "out"
    seed: int = 0

    @property
    def n(self) -> int:
        return len(self.beta)

    @property
    def A_matrix(self) -> np.ndarray:
        return np.array(self.A, dtype=float)

    def grid(self):
        return make_grid(self.L, self.N)

    def initial(self):
        return make_density(self.grid(), [p.build() for p in self.profiles], self.beta)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def _lex(text: str, source: str):
    """``{section: {key: (value, line)}}`` plus section header lines."""
    out, lines = {}, {}
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if current in out:
                raise ConfigurationError(f"{source}:{no}: repeated section [{current}]")
            out[current], lines[current] = {}, no
            continue
        m = _KEY.match(line)
        if not m:
            raise ConfigurationError(f"{source}:{no}: expected 'key = value' or '[section]', got {raw.strip()!r}")
        if current is None:
            raise ConfigurationError(f"{source}:{no}: key {m.group(1)!r} outside any section")
        key, value = m.group(1), m.group(2).strip()
        if key in out[current]:
            raise ConfigurationError(f"{source}:{no}: repeated key {key!r} in [{current}]")
        if not value:
            raise ConfigurationError(f"{source}:{no}: empty value for {key!r}")
        out[current][key] = (value, no)
    return out, lines


class _Reader:
    def __init__(self, sections, source):
        self.s = sections
        self.source = source
        self.used = set()

    def _get(self, sec, key):
        entry = self.s.get(sec, {}).get(key)
        if entry is not None:
            self.used.add((sec, key))
        return entry

    def fail(self, sec, key, msg):
        entry = self.s.get(sec, {}).get(key)
        where = f"{self.source}:{entry[1]}" if entry else self.source
        raise ConfigurationError(f"{where}: [{sec}] {key}: {msg}")

    def has(self, sec, key):
        return key in self.s.get(sec, {})

    def _conv(self, sec, key, text, kind):
        try:
            if kind is bool:
                if text not in ("true", "false"):
                    raise ValueError
                return text == "true"
            if kind is int:
                return int(text)
            if kind is float:
                return float(text)
            return text
        except ValueError:
            self.fail(sec, key, f"cannot read {text!r} as {kind.__name__}")

    def scalar(self, sec, key, kind, default=None, required=False):
        entry = self._get(sec, key)
        if entry is None:
            if required:
                raise ConfigurationError(f"{self.source}: missing required [{sec}] {key}")
            return default
        return self._conv(sec, key, entry[0], kind)

    def vector(self, sec, key, kind=float, default=None, required=False):
        entry = self._get(sec, key)
        if entry is None:
            if required:
                raise ConfigurationError(f"{self.source}: missing required [{sec}] {key}")
            return default
        return tuple(self._conv(sec, key, x.strip(), kind) for x in entry[0].split(","))


def _section(reader, sec, cls):
    kw = {}
    for f in fields(cls):
        kind = type(f.default)
        v = reader.scalar(sec, f.name, kind)
        if v is not None:
            kw[f.name] = v
    return cls(**kw)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config_text(text, str(path))


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    sections, heads = _lex(text, source)
    r = _Reader(sections, source)
    known = {"grid", "species", "interaction", "run", "jko", "fv", "diagnostics", "ot_test", "output"}
    for sec in sections:
        if sec not in known and not sec.startswith("initial."):
            raise ConfigurationError(f"{source}:{heads[sec]}: unknown section [{sec}]")

    L = r.scalar("grid", "L", float, required=True)
    N = r.scalar("grid", "N", int, required=True)
    if not L > 0:
        r.fail("grid", "L", "must be positive")
    if N < 8:
        r.fail("grid", "N", "must be at least 8")

    chi, beta_tilde = (), ()
    if r.has("species", "chi") or r.has("species", "beta_tilde"):
        if r.has("species", "beta") or "interaction" in sections:
            r.fail("species", "chi", "the chi form excludes beta and [interaction]")
        chi = r.vector("species", "chi", required=True)
        beta_tilde = r.vector("species", "beta_tilde", required=True)
        if len(chi) != 2 or len(beta_tilde) != 2:
            r.fail("species", "chi", "the chi form needs exactly two species")
        try:
            A_arr, b_arr = two_species_map(chi[0], chi[1], beta_tilde)
        except ConfigurationError as exc:
            r.fail("species", "chi", str(exc))
        beta = tuple(float(x) for x in b_arr)
        A = tuple(tuple(float(x) for x in row) for row in A_arr)
        explicit = False
    else:
        beta = r.vector("species", "beta", required=True)
        if any(not b > 0 for b in beta):
            r.fail("species", "beta", "masses must be positive")
        n = len(beta)
        explicit = "interaction" in sections
        if explicit:
            rows = []
            for i in range(n):
                row = r.vector("interaction", f"row{i + 1}", required=True)
                if len(row) != n:
                    r.fail("interaction", f"row{i + 1}", f"expected {n} entries, got {len(row)}")
                rows.append(row)
            A = tuple(rows)
            Aa = np.array(A)
            if not np.array_equal(Aa, Aa.T):
                r.fail("interaction", "row1", "matrix must be symmetric")
            if np.any(Aa < 0):
                r.fail("interaction", "row1", "entries must be nonnegative")
        else:
            A = tuple(tuple(1.0 if i == j else 0.0 for j in range(n)) for i in range(n))
    n = len(beta)
    if "species" in sections and r.has("species", "n"):
        declared = r.scalar("species", "n", int)
        if declared != n:
            r.fail("species", "n", f"declares {declared} species but {n} masses are given")

    profiles = []
    for i in range(n):
        sec = f"initial.{i + 1}"
        kind = r.vector(sec, "kind", str, ("gaussian",))
        k = len(kind)
        for name in kind:
            if name not in PROFILE_KINDS:
                r.fail(sec, "kind", f"unknown profile {name!r}")
        cx = r.vector(sec, "center_x", float, (0.0,) * k)
        cy = r.vector(sec, "center_y", float, (0.0,) * k)
        size = r.vector(sec, "size", float, (1.0,) * k)
        weight = r.vector(sec, "weight", float, ())
        for key, v in (("center_x", cx), ("center_y", cy), ("size", size)):
            if len(v) != k:
                r.fail(sec, key, f"expected {k} entries (one per component), got {len(v)}")
        if any(not s > 0 for s in size):
            r.fail(sec, "size", "must be positive")
        if weight and (len(weight) != k or any(w < 0 for w in weight) or abs(sum(weight) - 1) > 1e-12):
            r.fail(sec, "weight", "need one nonnegative weight per component, summing to 1")
        profiles.append(ProfileConfig(kind, cx, cy, size, weight))
    for sec in sections:
        if sec.startswith("initial.") and not 1 <= int(sec.split(".")[1]) <= n:
            raise ConfigurationError(f"{source}:{heads[sec]}: [{sec}] but only {n} species")

    horizon = r.scalar("run", "horizon", float, required=True)
    if not horizon > 0:
        r.fail("run", "horizon", "must be positive")
    snapshot_every = r.scalar("run", "snapshot_every", float, 0.0)
    sample_dt = r.scalar("run", "sample_dt", float, 0.0)
    if snapshot_every < 0:
        r.fail("run", "snapshot_every", "must be nonnegative")
    if sample_dt < 0:
        r.fail("run", "sample_dt", "must be nonnegative")

    jko = _section(r, "jko", JkoSection)
    if not jko.tau > 0:
        r.fail("jko", "tau", "must be positive")
    fv = _section(r, "fv", FvSection)
    if not 0 < fv.dt_safety <= 1:
        r.fail("fv", "dt_safety", "must lie in (0, 1]")
    if fv.flux not in ("exponential", "upwind"):
        r.fail("fv", "flux", "must be exponential or upwind")
    seed = r.scalar("output", "seed", int, 0)
    if not 0 <= seed < 2 ** 64:
        r.fail("output", "seed", "must be an unsigned 64-bit integer")

    cfg = RunConfig(
        L=L, N=N, beta=beta, A=A, horizon=horizon, chi=chi, beta_tilde=beta_tilde,
        explicit_interaction=explicit, profiles=tuple(profiles),
        snapshot_every=snapshot_every, sample_dt=sample_dt,
        heatmaps=r.scalar("run", "heatmaps", bool, True), raw=r.scalar("run", "raw", bool, False),
        jko=jko, fv=fv, diagnostics=_section(r, "diagnostics", DiagnosticsSection),
        ot_test=_section(r, "ot_test", OtTestSection),
        out=r.scalar("output", "dir", str, "out"), seed=seed)

    for sec, keys in sections.items():
        for key, (_, no) in keys.items():
            if (sec, key) not in r.used and not (sec == "species" and key == "n"):
                raise ConfigurationError(f"{source}:{no}: unknown key {key!r} in [{sec}]")
    return cfg


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------

def _v(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (tuple, list)):
        return ", ".join(_v(e) for e in x)
    return str(x)


def emit_config(cfg: RunConfig) -> str:
    """Text that parses back to ``cfg``."""
    out = ["[grid]", f"L = {_v(float(cfg.L))}", f"N = {cfg.N}", "", "[species]"]
    if cfg.chi:
        out += [f"chi = {_v(cfg.chi)}", f"beta_tilde = {_v(cfg.beta_tilde)}"]
    else:
        out.append(f"beta = {_v(tuple(float(b) for b in cfg.beta))}")
        if cfg.explicit_interaction:
            out += ["", "[interaction]"]
            out += [f"row{i + 1} = {_v(tuple(float(a) for a in row))}" for i, row in enumerate(cfg.A)]
    for i, p in enumerate(cfg.profiles):
        out += ["", f"[initial.{i + 1}]", f"kind = {_v(p.kind)}", f"center_x = {_v(p.center_x)}",
                f"center_y = {_v(p.center_y)}", f"size = {_v(p.size)}"]
        if p.weight:
            out.append(f"weight = {_v(p.weight)}")
    out += ["", "[run]", f"horizon = {_v(float(cfg.horizon))}",
            f"snapshot_every = {_v(float(cfg.snapshot_every))}",
            f"sample_dt = {_v(float(cfg.sample_dt))}",
            f"heatmaps = {_v(cfg.heatmaps)}", f"raw = {_v(cfg.raw)}"]
    for name in ("jko", "fv", "diagnostics", "ot_test"):
        sec = getattr(cfg, name)
        out += ["", f"[{name}]"]
        out += [f"{f.name} = {_v(getattr(sec, f.name))}" for f in fields(sec)]
    out += ["", "[output]", f"dir = {cfg.out}", f"seed = {cfg.seed}"]
    return "\n".join(out) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(emit_config(cfg), encoding="utf-8")


def with_overrides(cfg: RunConfig, out: str | None = None, seed: int | None = None) -> RunConfig:
    kw = {}
    if out is not None:
        kw["out"] = out
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        kw["seed"] = seed
    return replace(cfg, **kw)
