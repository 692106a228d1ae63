"""Command-line surface: dataset generation, certificate runs, curve dumps,
step-fraction sweeps, and parameterization probes.

Every command is deterministic for a fixed (seed, config): reruns produce
byte-identical files. Outputs land under an output root (flag --out, or the
STOPCERT_OUT environment variable, default ./stopcert_out) in the fixed
layout data/, reports/, curves/.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .certificate import (
    CERTIFIED,
    UNRELIABLE,
    UNVERIFIED,
    CertifyConfig,
    PoolSampler,
    certify,
    gap,
    next_gamma,
    phi,
)
from .errors import CertifyRefused
from .net import Dataset, check_target_bound, gd_step, init_weights, test_loss, training_error, weight_max_norm
from .ntk import ntk_matrix, spectrum_csv
from .vdp import MpcConfig, ReferenceMix, generate_dataset

EXIT_CERTIFIED = 0
EXIT_REFUSED = 2
EXIT_UNVERIFIED = 3
EXIT_UNRELIABLE = 4

OUT_ENV = "STOPCERT_OUT"


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; file values are overridden by CLI flags."""

    seed: int = 0
    n: int = 800
    n_test: int = 5000
    m: int = 10
    mu_mode: str = "equal_m"  # equal_m | sqrt_m | a number
    activation: str = "tanh"
    t0_mode: str = "auto"  # zero | warmup | auto
    beta_mode: str = "star"  # star | a number in (0, 1)
    m1_mode: str = "monte-carlo"  # monte-carlo | conservative
    delta: float = 0.05
    mc_trials: int = 500
    probe_steps: int = 6
    probe_margin: float = 0.05
    # benchmark generator
    dt: float = 0.05
    horizon: int = 20
    q_track: float = 1.0
    r_ctrl: float = 0.02
    u_max: float = 3.0
    opt_iters: int = 60
    opt_step: float = 0.05
    episode_steps: int = 128
    burn_in: int = 88
    y_cap_frac: float = 0.62
    p_const: float = 0.8
    # curves
    t_max: float = 0.0  # 0 -> 5 * t1
    grid: int = 20

    def mu(self) -> float:
        if self.mu_mode == "equal_m":
            return float(self.m)
        if self.mu_mode == "sqrt_m":
            return math.sqrt(self.m)
        try:
            value = float(self.mu_mode)
        except ValueError:
            raise ValueError(f"mu_mode must be equal_m, sqrt_m or a number, got {self.mu_mode!r}")
        if value <= 0.0:
            raise ValueError("explicit mu must be positive")
        return value

    def beta(self) -> float | None:
        if self.beta_mode == "star":
            return None
        value = float(self.beta_mode)
        if not 0.0 < value < 1.0:
            raise ValueError("explicit beta must be in (0, 1)")
        return value

    def mpc(self) -> MpcConfig:
        return MpcConfig(
            horizon=self.horizon,
            dt=self.dt,
            q_track=self.q_track,
            r_ctrl=self.r_ctrl,
            u_max=self.u_max,
            opt_iters=self.opt_iters,
            opt_step=self.opt_step,
        )

    def mix(self) -> ReferenceMix:
        return ReferenceMix(p_const=self.p_const)

    def certify_config(self) -> CertifyConfig:
        return CertifyConfig(
            probe_steps=self.probe_steps,
            margin=self.probe_margin,
            mc_trials=self.mc_trials,
            mc_seed=self.seed,
            delta=self.delta,
            beta=self.beta(),
            m1_mode=self.m1_mode,
            t0_mode=self.t0_mode,
        )


def load_config_file(path: str | Path) -> dict:
    """Parse a flat key=value config file (blank lines and # comments allowed)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file and explicit CLI flags (flags win)."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        overrides = {}
        for key, value in load_config_file(args.config).items():
            name = key.replace("-", "_")
            if name not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(cfg, name)
            overrides[name] = type(current)(value) if not isinstance(current, str) else value
        cfg = replace(cfg, **overrides)
    flag_overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            flag_overrides[f.name] = value
    return replace(cfg, **flag_overrides)


def out_root(args: argparse.Namespace) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "stopcert_out"))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if cfg.n < 1 or cfg.n_test < 1:
        print("error: n and n_test must be >= 1", file=sys.stderr)
        return 2
    train, test, scaling = generate_dataset(
        cfg.n,
        cfg.n_test,
        cfg.seed,
        cfg.mpc(),
        cfg.m,
        cfg.mu(),
        episode_steps=cfg.episode_steps,
        burn_in=cfg.burn_in,
        y_cap_frac=cfg.y_cap_frac,
        mix=cfg.mix(),
    )
    root = out_root(args)
    train.save_csv(root / "data" / "train.csv")
    test.save_csv(root / "data" / "test.csv")
    scaling["config"] = asdict(cfg)
    _write(root / "data" / "meta.json", _json_text(scaling))
    print(f"wrote {cfg.n} train and {cfg.n_test} test samples under {root / 'data'}")
    return 0


def _load_data(args: argparse.Namespace, cfg: RunConfig) -> tuple[Dataset, Dataset]:
    root = out_root(args)
    train_path = Path(args.train) if getattr(args, "train", None) else root / "data" / "train.csv"
    test_path = Path(args.test) if getattr(args, "test", None) else root / "data" / "test.csv"
    train = Dataset.load_csv(train_path)
    test = Dataset.load_csv(test_path)
    if train.d != test.d:
        raise ValueError(f"train/test dimension mismatch: {train.d} vs {test.d}")
    return train, test


def _network_for(cfg: RunConfig, d: int):
    return init_weights(d, cfg.m, seed=cfg.seed, mu=cfg.mu(), act=cfg.activation)


def cmd_certify(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    root = out_root(args)
    train, test = _load_data(args, cfg)
    s0 = _network_for(cfg, train.d)
    check_target_bound(s0, train)
    sampler = PoolSampler(test)
    try:
        cert, s1 = certify(s0, train, sampler, cfg.certify_config())
    except CertifyRefused as exc:
        payload = {"status": "REFUSED", "reason": exc.reason}
        payload.update({k: v for k, v in sorted(exc.details.items())})
        _write(root / "reports" / "certificate.json", _json_text(payload))
        _write(
            root / "reports" / "certificate.txt",
            "status=REFUSED\n" + f"reason={exc.reason}\n",
        )
        print(f"refused: {exc.reason}", file=sys.stderr)
        return EXIT_REFUSED
    _write(root / "reports" / "certificate.json", cert.to_json())
    _write(root / "reports" / "certificate.txt", cert.to_text())
    _write(root / "reports" / "spectrum.csv", spectrum_csv(ntk_matrix(s0, train)))
    print(
        f"{cert.reliability}: gamma1={cert.gamma1:.6g} beta={cert.beta:.6g} "
        f"t1={cert.t1:.6g} Omega1={cert.Omega1:.6g} pop_bound={cert.pop_bound:.6g}"
    )
    return {CERTIFIED: EXIT_CERTIFIED, UNVERIFIED: EXIT_UNVERIFIED, UNRELIABLE: EXIT_UNRELIABLE}[
        cert.reliability
    ]


def cmd_curves(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if cfg.grid < 2:
        print("error: grid must be >= 2", file=sys.stderr)
        return 2
    root = out_root(args)
    train, test = _load_data(args, cfg)
    s0 = _network_for(cfg, train.d)
    sampler = PoolSampler(test)
    try:
        cert, _ = certify(s0, train, sampler, cfg.certify_config())
    except CertifyRefused as exc:
        print(f"refused: {exc.reason}", file=sys.stderr)
        return EXIT_REFUSED

    t_max = cfg.t_max if cfg.t_max > 0.0 else 5.0 * cert.t1
    eta_sub = cert.eta1 / cfg.grid
    n_steps = int(math.ceil(t_max / eta_sub))
    Phi = cert.phi

    lines = ["t,train_loss,lg_measured,nu,omega,Omega,test_loss"]
    state = s0
    c_run = cert.w_max_t0
    for k in range(n_steps + 1):
        t = k * eta_sub
        v = training_error(state, train)
        ls = float(v @ v) / train.n
        c_run = max(c_run, weight_max_norm(state))
        lg = 4.0 * cert.M1 * c_run * Phi
        lt = test_loss(state, test)
        if t <= cert.eta1 + 1e-15:
            tau = t
            nu_t = cert.nu0 + 4.0 * cert.M1 * (Phi / cert.mu) * tau * cert.v0_norm1
            contraction = 1.0 - cert.lambda1_lo * tau
            omega_t = (contraction**2 * cert.A1**2 + cert.B1**2) / train.n + nu_t
            omega_cap_t = cert.omega0 + (tau / cert.eta1) * cert.Delta1
            bounds = [_fmt(nu_t), _fmt(omega_t), _fmt(omega_cap_t)]
        else:
            bounds = ["", "", ""]
        lines.append(",".join([_fmt(t), _fmt(ls), _fmt(lg)] + bounds + [_fmt(lt)]))
        if k < n_steps:
            state = gd_step(state, train, eta_sub)
    _write(root / "curves" / "curves.csv", "\n".join(lines) + "\n")
    print(f"wrote {n_steps + 1} grid points up to t={t_max:.6g} under {root / 'curves'}")
    return 0


def cmd_sweep_beta(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    root = out_root(args)
    train, test = _load_data(args, cfg)
    s0 = _network_for(cfg, train.d)
    sampler = PoolSampler(test)
    try:
        cert, _ = certify(s0, train, sampler, cfg.certify_config())
    except CertifyRefused as exc:
        print(f"refused: {exc.reason}", file=sys.stderr)
        return EXIT_REFUSED

    # beta-independent ingredients (sampled M1, alpha = sigma = 0)
    g1 = cert.gamma1
    lines = ["beta,Delta1,Omega1,admissible,argmax"]
    best_beta, best_drop = None, -math.inf
    rows = []
    for k in range(1, 1000):
        beta = k / 1000.0
        admissible = g1 < 1.0 - beta / 2.0
        if admissible:
            Delta1, _ = gap(cert.A1, cert.B1, 0.0, 0.0, beta, g1, cert.n)
            Omega1 = cert.omega0 + Delta1
            if -Delta1 > best_drop:
                best_drop, best_beta = -Delta1, beta
            rows.append((beta, Delta1, Omega1, True))
        else:
            rows.append((beta, math.nan, math.nan, False))
    for beta, Delta1, Omega1, admissible in rows:
        mark = "1" if admissible and beta == best_beta else "0"
        if admissible:
            lines.append(f"{_fmt(beta)},{_fmt(Delta1)},{_fmt(Omega1)},1,{mark}")
        else:
            lines.append(f"{_fmt(beta)},,,0,0")
    _write(root / "curves" / "beta_sweep.csv", "\n".join(lines) + "\n")
    print(f"argmax |Delta1| at beta={best_beta:.3f} (1 - gamma1 = {1.0 - g1:.3f})")
    return 0


def cmd_param_probe(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    root = out_root(args)
    train, test = _load_data(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    lines = ["regime,m,mu,n,gamma1,beta,gamma2,status"]

    def run_case(regime: str, data: Dataset, pool: Dataset, m: int, mu: float) -> None:
        s0 = init_weights(data.d, m, seed=cfg.seed, mu=mu, act=cfg.activation)
        cc = replace(cfg.certify_config(), mc_seed=cfg.seed + 1)
        try:
            cert, s1 = certify(s0, data, PoolSampler(pool), cc)
            g2 = next_gamma(s1, data, cert.M1, margin=cfg.probe_margin)
            lines.append(
                f"{regime},{m},{_fmt(mu)},{data.n},{_fmt(cert.gamma1)},{_fmt(cert.beta)},"
                f"{_fmt(g2)},{cert.reliability}"
            )
        except CertifyRefused as exc:
            g1 = exc.details.get("gamma1", math.nan)
            lines.append(f"{regime},{m},{_fmt(mu)},{data.n},{_fmt(g1)},,,REFUSED")

    run_case("under", train, test, cfg.m, cfg.mu())
    n_over = min(64, train.n)
    idx = rng.choice(train.n, size=n_over, replace=False)
    small = train.select(idx)
    for m in (64, 256, 1024):
        run_case("over", small, test, m, float(m))
    _write(root / "reports" / "param_probe.csv", "\n".join(lines) + "\n")
    print("\n".join(lines[1:]))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stopcert",
        description="One-step early-stopping certificates for shallow-network gradient descent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, data_flags: bool = True) -> None:
        p.add_argument("--seed", type=int, required=True, help="master seed (required for reproducibility)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help=f"output root (default $%s or ./stopcert_out)" % OUT_ENV)
        if data_flags:
            p.add_argument("--train", help="training CSV (default <out>/data/train.csv)")
            p.add_argument("--test", help="test CSV (default <out>/data/test.csv)")
        for f in fields(RunConfig):
            if f.name == "seed":
                continue
            flag = "--" + f.name.replace("_", "-")
            kind = type(getattr(RunConfig(), f.name))
            p.add_argument(flag, type=kind if kind is not bool else str, default=None, help=argparse.SUPPRESS)

    p_gen = sub.add_parser("gen-data", help="simulate the tracking benchmark and write train/test CSVs")
    add_common(p_gen, data_flags=False)
    p_gen.set_defaults(func=cmd_gen_data)

    p_cert = sub.add_parser("certify", help="issue a one-step stopping certificate")
    add_common(p_cert)
    p_cert.set_defaults(func=cmd_certify)

    p_curves = sub.add_parser("curves", help="dump loss/bound curves on a sub-step grid")
    add_common(p_curves)
    p_curves.set_defaults(func=cmd_curves)

    p_sweep = sub.add_parser("sweep-beta", help="tabulate the certified decrease over step fractions")
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep_beta)

    p_probe = sub.add_parser("param-probe", help="compare under- and overparameterized decrease factors")
    add_common(p_probe)
    p_probe.set_defaults(func=cmd_param_probe)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
