"""Command-line pipeline: collect -> synthesize -> verify, plus recheck and a demo.

Exit codes: 0 success, 1 configuration error, 2 data not rich enough,
3 program infeasible, 4 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import Certificate, decay_lmi_max_eig
from .plant import (BatchPair, ExcitationSpec, PolySystem, collect_pair, load_bundle,
                    richness_check, save_bundle, spacecraft)
from .polyalg import MonomialDictionary, enumerate_monomials, format_monomial
from .sdpkernel import SolveOptions
from .synthesis import (DegreeTooLow, RankPreconditionViolated, SdpInfeasible, SynthesisConfig,
                        VerificationFailed, synthesize)
from .verify import MissingRhoBound, recheck_certificate, verify_pairs

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("deltaiss")

EXIT_OK, EXIT_CONFIG, EXIT_RICHNESS, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3, 4

# Values printed for the spacecraft case study: P, Sigma, and the feedback
# coefficients of x2 x3 in u1 and x1 x3 in u2.
REPORTED_P = np.array([[1.9087, -0.1404, -0.1441],
                    [-0.1404, 5.3907, 0.1229],
                    [-0.1441, 0.1229, 2.8604]])
REPORTED_SIGMA = np.array([[-0.7926, 0.0245, 0.0058],
                        [-0.0459, -0.6426, 0.0088],
                        [-0.0195, 0.0130, -0.6633]])
DEFAULT_EPSILON, DEFAULT_VARTHETA = 0.9, 0.44
SPACECRAFT_DICTIONARY = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 1, 1)]


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass
class DataSpec:
    T: int = 300
    tau: float = 0.1
    t0: float = 0.0
    derivative_source: str = "exact"
    substeps: int = 100
    seed: int = 0
    x0: list | None = None
    x0_tilde: list | None = None
    init_box: float = 1.0
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)


@dataclass
class VerifySpec:
    pairs: int = 20
    horizon: float = 20.0
    step: float = 0.005
    box: float = 10.0
    signal: str = "sincos"
    signal_tilde: str | None = None
    slack: float = 0.05
    terminal_ratio: float = 1e-3
    seed: int = 0
    paper_range: bool = False


@dataclass
class RunConfig:
    dictionary: MonomialDictionary
    data: DataSpec
    synthesis: dict
    verify: VerifySpec
    plant_path: Path | None = None
    builtin: str | None = None
    out: Path | None = None

    def synthesis_config(self, b_norm_bound: float | None = None) -> SynthesisConfig:
        s = dict(self.synthesis)
        opts = SolveOptions(**{k: s.pop(k) for k in list(s)
                               if k in SolveOptions.__dataclass_fields__})
        if b_norm_bound is not None:
            s["b_norm_bound"] = b_norm_bound
        try:
            return SynthesisConfig(dictionary=self.dictionary, solve_options=opts, **s)
        except TypeError as exc:
            raise ConfigError(f"[synthesis]: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"[synthesis]: {exc}") from None


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def parse_dictionary(sec: dict) -> MonomialDictionary:
    try:
        if "entries" in sec:
            entries = sec["entries"]
            if not entries:
                raise ConfigError("[dictionary] entries must be non-empty")
            return MonomialDictionary.from_list(len(entries[0]), entries)
        n = int(sec["n"])
        return enumerate_monomials(n, int(sec.get("d_min", 1)), int(sec["d_max"]))
    except KeyError as exc:
        raise ConfigError(f"[dictionary] missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[dictionary] {exc}") from None


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    known = {"system", "dictionary", "data", "synthesis", "verify", "output"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    system = _section(raw, "system")
    plant_path = None
    builtin = system.get("builtin")
    if "plant" in system:
        plant_path = (base / system["plant"]).resolve()
        if not plant_path.exists():
            raise ConfigError(f"plant file {plant_path} does not exist")
    if builtin is not None and builtin != "spacecraft":
        raise ConfigError(f"unknown builtin system {builtin!r}")

    dsec = _section(raw, "dictionary")
    if not dsec and builtin == "spacecraft":
        dictionary = MonomialDictionary.from_list(3, SPACECRAFT_DICTIONARY)
    elif not dsec:
        raise ConfigError("[dictionary] section is required")
    else:
        dictionary = parse_dictionary(dsec)

    data_sec = _section(raw, "data")
    exc_keys = {"excitation": "kind", "amplitude": "amplitude", "n_freqs": "n_freqs",
                "freq_range": "freq_range", "hold_period": "hold_period", "value": "value"}
    exc_args = {dst: data_sec.pop(src) for src, dst in exc_keys.items() if src in data_sec}
    for k in ("freq_range", "value", "amplitude"):
        if isinstance(exc_args.get(k), list):
            exc_args[k] = tuple(exc_args[k])
    try:
        data = DataSpec(**data_sec)
        data.excitation = ExcitationSpec(seed=data.seed, **exc_args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[data] {exc}") from None
    if data.T < 1:
        raise ConfigError("[data] T must be >= 1")
    if not data.tau > 0:
        raise ConfigError("[data] tau must be positive")
    if data.derivative_source not in ("exact", "forward-difference"):
        raise ConfigError("[data] derivative_source must be 'exact' or 'forward-difference'")

    syn = _section(raw, "synthesis")
    syn.setdefault("epsilon", DEFAULT_EPSILON)
    syn.setdefault("vartheta", DEFAULT_VARTHETA)
    for k in ("epsilon", "vartheta"):
        if not float(syn[k]) > 0:
            raise ConfigError(f"[synthesis] {k} must be positive")

    try:
        verify = VerifySpec(**_section(raw, "verify"))
    except TypeError as exc:
        raise ConfigError(f"[verify] {exc}") from None
    if verify.pairs < 1 or not verify.horizon > 0 or not verify.step > 0:
        raise ConfigError("[verify] pairs, horizon and step must be positive")

    out = _section(raw, "output").get("dir")
    cfg = RunConfig(dictionary, data, syn, verify, plant_path, builtin,
                    Path(out) if out else None)
    cfg.synthesis_config()  # validate field names early
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({"system": {"builtin": "spacecraft"}})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent)


def load_plant(path: Path | None, builtin: str | None) -> PolySystem:
    """Ground-truth plant; only collect, verify and the demo may call this."""
    if path is None:
        if builtin == "spacecraft":
            return spacecraft()
        raise ConfigError("no plant given: set [system] plant = FILE or builtin = 'spacecraft'")
    raw = tomllib.loads(Path(path).read_text())
    if raw.get("builtin") == "spacecraft":
        J = raw.get("inertia", [200.0, 200.0, 300.0])
        return spacecraft(*J)
    try:
        A = np.array(raw["A"], dtype=float)
        d = MonomialDictionary.from_list(A.shape[0], raw["dictionary"])
        return PolySystem(A, np.array(raw["B"], dtype=float), d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"plant file {path}: {exc}") from None


# -- manifest --------------------------------------------------------------------

def _versions() -> dict:
    import cvxpy
    import scipy
    return {"deltaiss": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "cvxpy": cvxpy.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out: Path, stage: str, seeds: dict, files: list[Path], extra: dict | None = None) -> None:
    mpath = out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {"stages": {}}
    manifest["versions"] = _versions()
    manifest["stages"][stage] = {
        "seeds": seeds,
        "files": {str(f.relative_to(out)): _sha256(f) for f in files if f.exists()},
        **(extra or {}),
    }
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))


# -- stages ----------------------------------------------------------------------

def run_collect(cfg: RunConfig, plant: PolySystem, out: Path, force: bool = False) -> BatchPair:
    data = cfg.data
    rng = np.random.default_rng(data.seed)
    x0 = data.x0 if data.x0 is not None else rng.uniform(-data.init_box, data.init_box, plant.n)
    xt0 = (data.x0_tilde if data.x0_tilde is not None
           else rng.uniform(-data.init_box, data.init_box, plant.n))
    pair = collect_pair(plant, data.excitation, x0, xt0, data.T, data.tau,
                        data.derivative_source, data.substeps, data.t0)
    out.mkdir(parents=True, exist_ok=True)
    bundle = out / "data"
    if bundle.exists() and (bundle / "meta.json").exists() and not force:
        raise FileExistsError(f"{bundle} already holds a data bundle (use --force)")
    save_bundle(pair, bundle, force=True)
    update_manifest(out, "collect", {"data": data.seed},
                    [bundle / "batch.csv", bundle / "sibling.csv", bundle / "meta.json"])
    return pair


def run_synthesize(cfg: RunConfig, pair: BatchPair, out: Path,
                   b_norm_bound: float | None = None) -> Certificate:
    scfg = cfg.synthesis_config(b_norm_bound)
    out.mkdir(parents=True, exist_ok=True)
    diag = richness_check(pair, cfg.dictionary, scfg.rank_rtol)
    (out / "richness.json").write_text(json.dumps(diag.to_dict(), indent=2))
    cert = synthesize(pair, scfg)
    cpath = out / "certificate.json"
    cert.save(cpath)
    (out / "residual_report.json").write_text(
        json.dumps(cert.residual_report.to_dict(), indent=2, sort_keys=True))
    update_manifest(out, "synthesize", {}, [cpath, out / "residual_report.json"],
                    {"epsilon": scfg.epsilon, "vartheta": scfg.vartheta})
    return cert


def run_verify(cfg: RunConfig, cert: Certificate, pair: BatchPair, plant: PolySystem, out: Path,
               paper_range: bool = False):
    report = recheck_certificate(cert, pair, cfg.dictionary, cert.residual_report.tol
                                 if cert.residual_report else 1e-6)
    vdir = out / "verify"
    vdir.mkdir(parents=True, exist_ok=True)
    (vdir / "recheck.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if not report.passed:
        return report, None
    v = cfg.verify
    summary = verify_pairs(plant, cert, v.pairs, v.box, v.horizon, v.step, v.signal,
                           v.signal_tilde, v.seed, paper_range or v.paper_range, v.slack,
                           v.terminal_ratio)
    files = [vdir / "recheck.json"]
    for tr in summary.traces:
        p = vdir / f"trace_{tr.seed:04d}.csv"
        tr.to_csv(p)
        files.append(p)
    summary.convergence.to_json()
    (vdir / "convergence.json").write_text(summary.convergence.to_json())
    summary.convergence.write_long_csv(vdir / "convergence_long.csv")
    (vdir / "verification.json").write_text(json.dumps(summary.to_dict(), indent=1, sort_keys=True))
    files += [vdir / "convergence.json", vdir / "convergence_long.csv", vdir / "verification.json"]
    update_manifest(out, "verify", {"verify": v.seed}, files)
    return report, summary


def demo_summary(cert: Certificate, summary) -> dict:
    """Compare achieved properties with the outcomes reported for the case study."""
    K = cert.K
    c23 = float(K.coefficient((0, 0, 1))[0, 1] + K.coefficient((0, 1, 0))[0, 2])
    c13 = float(K.coefficient((0, 0, 1))[1, 0] + K.coefficient((1, 0, 0))[1, 2])
    return {
        "feasible": {"achieved": True, "reported": True},
        "residuals_pass": cert.residual_report.passed,
        "decay_lmi_max_eig": cert.residual_report.decay_lmi,
        "reported_P_Sigma_decay_lmi_max_eig": decay_lmi_max_eig(
            REPORTED_P, REPORTED_SIGMA, DEFAULT_EPSILON, DEFAULT_VARTHETA),
        "cancellation_x2x3_in_u1": {"achieved": c23, "reported": 100.0},
        "cancellation_x1x3_in_u2": {"achieved": c13, "reported": -100.0},
        "all_pairs_converge": {"achieved": bool(summary.passed), "reported": True},
        "max_terminal_ratio": max(summary.convergence.terminal_ratios),
        "P": cert.P.tolist(),
        "Sigma": cert.Sigma.tolist(),
        "controller": {f"u{i + 1}": {format_monomial(a): float(c[i].sum())
                                     for a, c in K.terms.items()} for i in range(K.rows)},
    }


# -- entry point -----------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deltaiss", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="run configuration (TOML)")
        sp.add_argument("--out", type=Path, help="run directory")
        sp.add_argument("--seed", type=int, help="override data/verification seeds")

    c = sub.add_parser("collect", help="simulate the plant and record a data bundle")
    common(c)
    c.add_argument("--plant", type=Path, help="ground-truth plant file (TOML)")
    c.add_argument("--T", type=int)
    c.add_argument("--force", action="store_true")

    s = sub.add_parser("synthesize", help="solve for a certificate from a data bundle")
    common(s)
    s.add_argument("--bundle", type=Path, required=True)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--vartheta", type=float)
    s.add_argument("--B-norm-bound", dest="b_norm_bound", type=float)

    v = sub.add_parser("verify", help="recheck a certificate and simulate closed-loop pairs")
    common(v)
    v.add_argument("--certificate", type=Path, required=True)
    v.add_argument("--bundle", type=Path, required=True)
    v.add_argument("--plant", type=Path)
    v.add_argument("--pairs", type=int)
    v.add_argument("--signal")
    v.add_argument("--signal-tilde")
    v.add_argument("--paper-range", action="store_true",
                   help="initial states in [0, 2e4] / [-2e4, 0); numerically fragile")
    v.add_argument("--B-norm-bound", dest="b_norm_bound", type=float)

    r = sub.add_parser("recheck", help="recompute certificate residuals from a data bundle")
    r.add_argument("--certificate", type=Path, required=True)
    r.add_argument("--bundle", type=Path, required=True)
    r.add_argument("--out", type=Path)

    d = sub.add_parser("demo-spacecraft", help="full pipeline on the rigid spacecraft")
    common(d, config=False)
    d.add_argument("--T", type=int, default=300)
    d.add_argument("--pairs", type=int, default=20)
    d.add_argument("--paper-range", action="store_true")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.data.seed = args.seed
        cfg.data.excitation = replace(cfg.data.excitation, seed=args.seed)
        cfg.verify.seed = args.seed
    if getattr(args, "T", None) is not None:
        if args.T < 1:
            raise ConfigError("T must be >= 1")
        cfg.data.T = args.T
    for k in ("epsilon", "vartheta"):
        val = getattr(args, k, None)
        if val is not None:
            if not val > 0:
                raise ConfigError(f"{k} must be positive")
            cfg.synthesis[k] = val
    if getattr(args, "pairs", None) is not None:
        cfg.verify.pairs = args.pairs
    if getattr(args, "signal", None):
        cfg.verify.signal = args.signal
    if getattr(args, "signal_tilde", None):
        cfg.verify.signal_tilde = args.signal_tilde
    return cfg


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out is not None:
        return args.out
    if cfg is not None and cfg.out is not None:
        return cfg.out
    return Path("run")


def _set_rho(cert: Certificate, b_norm_bound: float | None) -> None:
    if b_norm_bound is not None:
        cert.rho_bound = b_norm_bound ** 2 / cert.vartheta


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingRhoBound as exc:
        print(f"config error: {exc}. The input-to-state gain rho = ||B||^2/vartheta is only "
              "existential; pass --B-norm-bound R with R >= ||B|| to check different inputs.",
              file=sys.stderr)
        return EXIT_CONFIG
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RankPreconditionViolated as exc:
        print(f"data richness failure: {exc}", file=sys.stderr)
        return EXIT_RICHNESS
    except SdpInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (VerificationFailed, DegreeTooLow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY if isinstance(exc, VerificationFailed) else EXIT_CONFIG


def _dispatch(args) -> int:
    if args.command == "recheck":
        cert = Certificate.load(args.certificate)
        pair = load_bundle(args.bundle)
        report = recheck_certificate(cert, pair)
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "recheck.json").write_text(text)
        print(text)
        return EXIT_OK if report.passed else EXIT_VERIFY

    if args.command == "demo-spacecraft":
        cfg = _apply_overrides(load_config(None), args)
        out = _out_dir(args, None)
        plant = spacecraft()
        cfg.data.excitation = replace(cfg.data.excitation, amplitude=50.0)
        pair = run_collect(cfg, plant, out, force=True)
        cert = run_synthesize(cfg, pair, out)
        report, summary = run_verify(cfg, cert, pair, plant, out, args.paper_range)
        if summary is None:
            return EXIT_VERIFY
        result = demo_summary(cert, summary)
        (out / "summary.json").write_text(json.dumps(result, indent=1, sort_keys=True))
        print(json.dumps({k: result[k] for k in ("feasible", "residuals_pass",
                                                 "cancellation_x2x3_in_u1",
                                                 "cancellation_x1x3_in_u2",
                                                 "all_pairs_converge", "max_terminal_ratio")},
                         indent=1))
        return EXIT_OK if summary.passed else EXIT_VERIFY

    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)

    if args.command == "collect":
        plant = load_plant(args.plant or cfg.plant_path, cfg.builtin)
        pair = run_collect(cfg, plant, out, force=args.force)
        diag = richness_check(pair, cfg.dictionary)
        print(json.dumps({"bundle": str(out / "data"), "T": pair.batch.T,
                          "richness": diag.to_dict()}, indent=1))
        return EXIT_OK

    if args.command == "synthesize":
        # the plant description is deliberately never loaded here
        pair = load_bundle(args.bundle)
        cert = run_synthesize(cfg, pair, out, args.b_norm_bound)
        print(json.dumps(cert.residual_report.to_dict(), indent=1, sort_keys=True))
        return EXIT_OK

    if args.command == "verify":
        cert = Certificate.load(args.certificate)
        _set_rho(cert, args.b_norm_bound)
        if (cfg.verify.signal_tilde or cfg.verify.signal) != cfg.verify.signal \
                and cert.rho_bound is None:
            raise MissingRhoBound("different external inputs need a bound on rho")
        plant = load_plant(args.plant or cfg.plant_path, cfg.builtin)
        pair = load_bundle(args.bundle)
        report, summary = run_verify(cfg, cert, pair, plant, out, args.paper_range)
        if summary is None:
            print(json.dumps(report.to_dict(), indent=1, sort_keys=True), file=sys.stderr)
            print("certificate recheck failed", file=sys.stderr)
            return EXIT_VERIFY
        print(json.dumps({"recheck": report.passed, "pairs": summary.passed,
                          "max_terminal_ratio": max(summary.convergence.terminal_ratios)}))
        return EXIT_OK if summary.passed else EXIT_VERIFY
    raise ConfigError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
