"""Command-line entry point: verify | norm | expect | sample."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import gaussian as gs
from . import norms as nm
from . import regulators as rg
from . import verify as vf
from .algebra import FieldIndex, Layout, NElement, Species, complex_field, from_records, to_records
from .lattice import Torus

MODES = {"exact": "exact", "lp": "lp", "grid": "complex"}


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TorusConfig:
    d: int = 1
    R: int = 2
    m: int = 1


@dataclass
class NormConfig:
    p_N: int = 6
    p_phi: int = 0
    h: float = 1.0
    ell: float = 1.0
    mode: str = "exact"


@dataclass
class CovarianceConfig:
    source: str = "identity"  # identity | exp_decay | inline
    kappa: float = 0.5
    scale: float = 1.0
    matrix: list | None = None
    fermion_matrix: list | None = None


@dataclass
class RegulatorConfig:
    ell: float = 1.0
    h: float = 1.0
    d_poly: int = 0
    alpha_G: float = 1.1
    t: float = 1.0
    samples: int = 100_000
    X: list | None = None
    large_field: bool = False


@dataclass
class RunConfig:
    torus: TorusConfig = field(default_factory=TorusConfig)
    species: list = field(default_factory=lambda: ["phi:boson", "psi:fermion"])
    norm: NormConfig = field(default_factory=NormConfig)
    covariance: CovarianceConfig = field(default_factory=CovarianceConfig)
    regulator: RegulatorConfig = field(default_factory=RegulatorConfig)
    suites: list = field(default_factory=list)
    seed: int = 0
    trials: int | None = None
    workers: int = 1
    out: str = "out"

    # derived objects ---------------------------------------------------------
    def make_torus(self) -> Torus:
        return Torus(self.torus.d, self.torus.R, self.torus.m)

    def make_layout(self) -> Layout:
        return Layout.on_torus(parse_species(self.species), self.make_torus())

    def norm_params(self, mode: str | None = None) -> nm.NormParams:
        lay = self.make_layout()
        w = nm.Weight({s.name: self.norm.h for s in lay.species}, self.norm.p_phi, self.torus.R)
        mode = MODES[mode or self.norm.mode]
        _check(not (mode == "exact" and self.norm.p_phi > 0), "norm.mode", "exact mode needs norm.p_phi = 0")
        return nm.NormParams(self.norm.p_N, w, mode)

    def boson_matrix(self):
        n = self.make_torus().volume
        c = self.covariance
        if c.source == "identity":
            M = gs.identity_covariance(n)
        elif c.source == "exp_decay":
            M = gs.exp_decay_covariance(n, _exact(c.kappa), self.make_torus())
        else:
            M = [[_exact(x) for x in row] for row in c.matrix]
        s = _exact(c.scale)
        return [[x * s for x in row] for row in M]

    def covariance_pair(self) -> gs.CovariancePair:
        lay = self.make_layout()
        Mb = self.boson_matrix()
        Mf = Mb if self.covariance.fermion_matrix is None else [[_exact(x) for x in r] for r in self.covariance.fermion_matrix]
        return gs.CovariancePair({s.name: Mb for s in lay.species if not s.fermion and s.complex},
                                 {s.name: Mf for s in lay.species if s.fermion})

    def regulator_params(self) -> rg.RegulatorParams:
        r = self.regulator
        return rg.RegulatorParams(r.ell, r.h, r.d_poly, r.alpha_G, r.t, self.norm.p_phi)


def _exact(x):
    if isinstance(x, (int, Fraction)):
        return x
    if isinstance(x, str):
        return Fraction(x)  # "1/3" stays exact
    return int(x) if float(x).is_integer() else x


def parse_species(items) -> tuple[Species, ...]:
    out = []
    for item in items:
        name, _, kind = str(item).partition(":")
        kind = kind or "boson"
        if kind == "boson":
            out.append(Species(name))
        elif kind == "fermion":
            out.append(Species(name, fermion=True))
        elif kind.startswith("real"):
            comps = int(kind[4:] or 1)
            out.append(Species(name, complex=False, components=comps))
        else:
            raise ConfigError(f"species: unknown kind {kind!r} for {name!r}")
    return tuple(out)


def _fill(obj, table: dict, prefix: str):
    for key, val in table.items():
        if not hasattr(obj, key) or key.startswith("_"):
            raise ConfigError(f"{prefix}{key}: unknown field")
        cur = getattr(obj, key)
        if hasattr(cur, "__dataclass_fields__"):
            if not isinstance(val, dict):
                raise ConfigError(f"{prefix}{key}: expected a table")
            _fill(cur, val, f"{prefix}{key}.")
        else:
            setattr(obj, key, val)


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: {exc}") from None
        _fill(cfg, data, "")
    validate(cfg)
    return cfg


def _check(cond, name, msg):
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    if isinstance(x, str):
        try:
            Fraction(x)
        except ValueError:
            return False
        return True
    return isinstance(x, (int, float, Fraction)) and not isinstance(x, bool)


def validate(cfg: RunConfig) -> None:
    t = cfg.torus
    _check(_is_int(t.d) and t.d >= 1, "torus.d", "must be an integer >= 1")
    _check(_is_int(t.R) and t.R >= 2, "torus.R", "must be an integer >= 2")
    _check(_is_int(t.m) and t.m >= 1, "torus.m", "must be an integer >= 1")
    _check(isinstance(cfg.species, list) and cfg.species, "species", "must be a nonempty list")
    try:
        cfg.make_layout()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"species: {exc}") from None
    n = cfg.norm
    _check(_is_int(n.p_N) and n.p_N >= 0, "norm.p_N", "must be a nonnegative integer")
    _check(_is_int(n.p_phi) and n.p_phi >= 0, "norm.p_phi", "must be a nonnegative integer")
    _check(_is_num(n.h) and float(_exact(n.h)) > 0, "norm.h", "must be positive")
    _check(_is_num(n.ell) and float(_exact(n.ell)) > 0, "norm.ell", "must be positive")
    _check(n.mode in MODES, "norm.mode", f"must be one of {sorted(MODES)}")
    c = cfg.covariance
    _check(c.source in ("identity", "exp_decay", "inline"), "covariance.source",
           "must be identity, exp_decay or inline")
    vol = cfg.make_torus().volume
    if c.source == "exp_decay":
        _check(_is_num(c.kappa) and 0 <= float(_exact(c.kappa)) < 1, "covariance.kappa", "must lie in [0, 1)")
    if c.source == "inline":
        _check(isinstance(c.matrix, list) and len(c.matrix) == vol and all(
            isinstance(r, list) and len(r) == vol for r in c.matrix), "covariance.matrix",
            f"must be a {vol} x {vol} list of lists")
    if c.fermion_matrix is not None:
        _check(isinstance(c.fermion_matrix, list) and len(c.fermion_matrix) == vol,
               "covariance.fermion_matrix", f"must be a {vol} x {vol} list of lists")
    _check(_is_num(c.scale) and float(_exact(c.scale)) > 0, "covariance.scale", "must be positive")
    try:
        cfg.covariance_pair()
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(f"covariance: {exc}") from None
    r = cfg.regulator
    _check(_is_num(r.ell) and float(_exact(r.ell)) > 0, "regulator.ell", "must be positive")
    _check(_is_num(r.h) and float(_exact(r.h)) > 0, "regulator.h", "must be positive")
    _check(_is_int(r.d_poly) and r.d_poly >= 0, "regulator.d_poly", "must be a nonnegative integer")
    _check(_is_num(r.alpha_G) and float(_exact(r.alpha_G)) > 1, "regulator.alpha_G", "must exceed 1")
    _check(_is_num(r.t) and float(_exact(r.t)) >= 0, "regulator.t", "must be nonnegative")
    _check(_is_int(r.samples) and r.samples >= 0, "regulator.samples", "must be a nonnegative integer")
    if r.X is not None:
        _check(isinstance(r.X, list) and all(_is_int(x) and 0 <= x < vol for x in r.X), "regulator.X",
               f"must list sites in [0, {vol})")
    if r.large_field:
        # the polynomial quotient needs every B^box to sit inside one period
        side = (2 ** (t.d + 1) - 1)
        _check(t.m > side, "regulator.large_field",
               f"guard diam(B^box) < mR violated: needs torus.m > {side} for d = {t.d}")
    _check(isinstance(cfg.suites, list), "suites", "must be a list of suite ids")
    unknown = [s for s in cfg.suites if s not in vf.SUITES]
    _check(not unknown, "suites", f"unknown suite ids {unknown}")
    _check(_is_int(cfg.seed), "seed", "must be an integer")
    _check(cfg.trials is None or (_is_int(cfg.trials) and cfg.trials >= 0), "trials", "must be >= 0")
    _check(_is_int(cfg.workers) and cfg.workers >= 1, "workers", "must be >= 1")


# ---------------------------------------------------------------------------
# files


def layout_header(layout: Layout) -> dict:
    kinds = []
    for s in layout.species:
        kind = "fermion" if s.fermion else ("boson" if s.complex else f"real{s.components}")
        kinds.append(f"{s.name}:{kind}")
    return {"species": kinds, "n_sites": layout.n_sites}


def write_element(F: NElement, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"layout": layout_header(F.layout), "truncation": F.truncation}) + "\n")
        for rec in to_records(F):
            fh.write(json.dumps(rec) + "\n")


def _read_jsonl(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None
    out = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append((i, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{i}: {exc.msg}") from None
    if not out:
        raise InputError(f"{path}: empty file")
    return out


def read_element(path, layout: Layout) -> NElement:
    rows = _read_jsonl(path)
    i, head = rows[0]
    if "layout" not in head:
        raise InputError(f"{path}:{i}: first line must be a layout header")
    if head["layout"] != layout_header(layout):
        raise InputError(f"{path}:{i}: layout {head['layout']} does not match the configured layout")
    terms = NElement.zero(layout)
    for i, rec in rows[1:]:
        try:
            terms = terms + from_records(layout, [rec])
        except (ValueError, TypeError, KeyError) as exc:
            raise InputError(f"{path}:{i}: {exc}") from None
    return NElement(layout, terms.terms, head.get("truncation"))


def read_field(path, layout: Layout) -> dict:
    """JSON object mapping boson species to per-site values (numbers or [re, im] pairs)."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from None
    out = {}
    for name, vals in data.items():
        if name not in layout.by_name or layout.by_name[name].fermion:
            raise InputError(f"{path}: {name!r} is not a boson species of the layout")
        if len(vals) != layout.n_sites:
            raise InputError(f"{path}: {name!r} needs {layout.n_sites} values")
        vs = [complex(*v) if isinstance(v, list) else v for v in vals]
        out.update(complex_field(layout, name, vs))
    return out


def write_test_function(g: nm.TestFunction, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"layout": layout_header(g.layout), "p_N": g.p_N}) + "\n")
        for z, v in sorted(g.items(), key=lambda t: [g.layout.key(u) for u in t[0]]):
            v = complex(v)
            fh.write(json.dumps({"z": [list(u) for u in z], "re": repr(v.real), "im": repr(v.imag)}) + "\n")


def read_test_function(path, layout: Layout) -> nm.TestFunction:
    rows = _read_jsonl(path)
    i, head = rows[0]
    if head.get("layout") != layout_header(layout):
        raise InputError(f"{path}:{i}: layout header missing or mismatched")
    vals = {}
    for i, rec in rows[1:]:
        try:
            z = tuple(layout.check(FieldIndex(str(s), int(c), int(x))) for s, c, x in rec["z"])
            vals[z] = complex(float(rec["re"]), float(rec["im"]))
        except (ValueError, TypeError, KeyError) as exc:
            raise InputError(f"{path}:{i}: {exc}") from None
    return nm.TestFunction(layout, vals, head.get("p_N"))


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg: RunConfig, args) -> int:
    suites = args.suite or cfg.suites or list(vf.SUITES)
    unknown = [s for s in suites if s not in vf.SUITES]
    if unknown:
        raise ConfigError(f"suite: unknown suite ids {unknown}")
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trials = args.trials if args.trials is not None else cfg.trials
    seed = args.seed if args.seed is not None else cfg.seed
    workers = args.workers or cfg.workers
    reports = []
    print(f"{'suite':30s} {'trials':>7s} {'violations':>10s} {'worst slack':>14s}")
    for sid in suites:
        rep = vf.run_suite(sid, trials=trials, seed=seed, workers=workers)
        reports.append(rep)
        slack = "n/a" if rep.worst_slack is None else f"{rep.worst_slack:.4g}"
        print(f"{sid:30s} {rep.trials:7d} {rep.violations:10d} {slack:>14s}")
    vf.write_reports(reports, out / "reports.jsonl")
    return 0 if all(r.passed for r in reports) else 1


def cmd_norm(cfg: RunConfig, args) -> int:
    lay = cfg.make_layout()
    F = read_element(args.element, lay)
    phi = read_field(args.field, lay) if args.field else None
    params = cfg.norm_params(args.mode)
    res = nm.tphi_norm(F, phi, params, certificate=True)
    if res.upper is not None and res.upper != res.value:
        print(f"{res.value!r} {res.upper!r}")
    else:
        print(repr(res.value))
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_test_function(res.certificate, out / "certificate.jsonl")
    again = read_test_function(out / "certificate.jsonl", lay)
    if not nm.verify_certificate(F, phi, dataclasses.replace(res, certificate=again), params):
        print(f"certificate does not reproduce {res.value!r}", file=sys.stderr)
        return 1
    return 0


def cmd_expect(cfg: RunConfig, args) -> int:
    lay = cfg.make_layout()
    F = read_element(args.element, lay)
    if F.truncation is not None:
        raise InputError(f"{args.element}: expectation needs a polynomial element, got a truncated jet")
    E = gs.combined_expectation(F, cfg.covariance_pair())
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_element(E, out / "expectation.jsonl")
    back = read_element(out / "expectation.jsonl", lay)
    if back != E:
        print("serialization round trip changed the element", file=sys.stderr)
        return 1
    print(json.dumps(to_records(E)))
    return 0


def cmd_sample(cfg: RunConfig, args) -> int:
    T = cfg.make_torus()
    params = cfg.regulator_params()
    X = cfg.regulator.X if cfg.regulator.X is not None else list(T.sites())
    C = np.array(cfg.boson_matrix(), dtype=float)
    seed = args.seed if args.seed is not None else cfg.seed
    samples = args.trials if args.trials is not None else cfg.regulator.samples
    rep = rg.regulator_expectation_mc(T, X, C, params, samples, seed, args.workers or cfg.workers)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rg.write_mc_csv([rep], out / "regulator.csv")
    with open(out / "regulator.jsonl", "w") as fh:
        fh.write(json.dumps(rep.record()) + "\n")
    flag = "" if rep.within_hypothesis else "  [" + "; ".join(rep.flags) + "]"
    print(f"E G^t = {rep.estimate!r} +- {rep.ci_halfwidth!r} (99%), bound {rep.bound!r}{flag}")
    return 0 if rep.estimate <= rep.bound + 3 * rep.ci_halfwidth or not rep.within_hypothesis else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grassnorm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=sorted(MODES))
    common.add_argument("--workers", type=int)
    v = sub.add_parser("verify", parents=[common], help="run property suites")
    v.add_argument("--suite", action="append", help="suite id (repeatable)")
    n = sub.add_parser("norm", parents=[common], help="T_phi norm of an element")
    n.add_argument("element")
    n.add_argument("field", nargs="?")
    e = sub.add_parser("expect", parents=[common], help="combined Gaussian expectation of an element")
    e.add_argument("element")
    sub.add_parser("sample", parents=[common], help="Monte-Carlo regulator expectation")
    return p


COMMANDS = {"verify": cmd_verify, "norm": cmd_norm, "expect": cmd_expect, "sample": cmd_sample}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("workers: must be >= 1")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
