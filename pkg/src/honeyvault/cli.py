"""Command-line entry point: ``honeyvault <command> [options]``.

Every option can also be given in a ``--config`` file of ``key = value``
lines (keys use underscores or dashes; ``#`` starts a comment). Flags win
over the file. Stochastic commands need a seed from ``--seed``, the config
file or the ``HONEYVAULT_SEED`` environment variable.

Exit status: 0 on success, 1 on a domain error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from honeyvault import audit, authn, facespace, honeycheck, synth, vault
from honeyvault.errors import HoneyVaultError
from honeyvault.streams import seed_from_env, substream


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    required: bool = False


def flag(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


SEED = Opt("seed", int, None, "random seed (falls back to HONEYVAULT_SEED)")
MODEL = Opt("model", str, None, "HFM1 model file", True)
VAULT = Opt("vault", str, None, "HFV1 vault file", True)
CORPUS = Opt("corpus", str, None, "toy corpus (.npz from toy-corpus)", True)
D_OPT = Opt("d", int, 80, "appearance-model dimension")

COMMANDS: dict[str, tuple[str, list[Opt], bool]] = {
    "toy-corpus": (
        "draw a toy face corpus from a planted appearance model",
        [
            Opt("output", str, None, "output .npz path", True),
            Opt("subjects", int, 500, "number of faces"),
            Opt("landmarks", int, 50, "landmarks per shape (L)"),
            Opt("pixels", int, 200, "texture samples per face (P)"),
            Opt("planted_dim", int, 80, "dimension of the planted model"),
            Opt("noise", float, 0.0, "isotropic noise scale"),
            Opt("draw", str, "subjects", "name of the subject draw; other names give fresh faces"),
            SEED,
        ],
        True,
    ),
    "fit": (
        "fit shape, texture and combined models and write an HFM1 file",
        [
            CORPUS,
            Opt("output", str, None, "output HFM1 path", True),
            Opt("m", int, 80, "shape components"),
            Opt("t", int, 80, "texture components"),
            D_OPT,
            Opt("w", float, None, "shape weight (default: balance shape and texture variance)"),
            Opt("k", float, facespace.DEFAULT_SHELL_FACTOR, "shell factor"),
        ],
        False,
    ),
    "enroll": (
        "enroll the corpus faces as real users into a new vault",
        [
            MODEL,
            CORPUS,
            Opt("output", str, None, "output HFV1 path", True),
            Opt("checker_db", str, None, "write the honeychecker's real-username list here"),
            Opt("users", int, None, "enroll only the first N faces"),
        ],
        False,
    ),
    "inflate": (
        "pad a vault with separated synthetic records",
        [
            MODEL,
            VAULT,
            Opt("output", str, None, "output HFV1 path", True),
            Opt("target", int, None, "final record count", True),
            Opt("min_dist", float, synth.REFERENCE_MIN_DIST, "minimum separation"),
            Opt("max_attempts", int, synth.DEFAULT_MAX_ATTEMPTS, "attempts per face before giving up"),
            SEED,
        ],
        True,
    ),
    "verify": (
        "verify one probe from a corpus against an account",
        [
            MODEL,
            VAULT,
            Opt("username", str, None, "claimed account", True),
            Opt("probe", str, None, "corpus .npz holding the probe", True),
            Opt("index", int, 0, "probe row in the corpus"),
            Opt("threshold", float, authn.REFERENCE_THRESHOLD, "acceptance threshold"),
        ],
        False,
    ),
    "serve-sim": (
        "simulate logins against a front server and honeychecker",
        [
            MODEL,
            VAULT,
            CORPUS,
            Opt("checker_db", str, None, "real-username list", True),
            Opt("attempts", int, 10_000, "number of login attempts"),
            Opt("threshold", float, authn.REFERENCE_THRESHOLD, "acceptance threshold"),
            Opt("noise", float, 0.0, "genuine re-capture noise norm"),
            Opt("alarm_log", str, None, "append alarms here as JSON lines"),
            Opt("fail_mode", honeycheck.FailMode, honeycheck.FailMode.REJECT, "reject or backlog when the checker is down"),
            SEED,
        ],
        True,
    ),
    "audit ks": (
        "per-dimension KS battery of real against synthetic templates",
        [
            MODEL,
            CORPUS,
            Opt("runs", int, 50, "battery repetitions"),
            Opt("alpha", float, 0.05, "significance level"),
            Opt("pool", int, 25_000, "synthetic pool size"),
            SEED,
        ],
        True,
    ),
    "audit distances": (
        "mutual-distance histograms for real, synthetic and mixed templates",
        [
            MODEL,
            CORPUS,
            Opt("pairs", int, 10_000, "sampled pairs per set"),
            Opt("disjoint", flag, True, "use every template in at most one pair"),
            Opt("bins", int, 100, "histogram bins"),
            Opt("csv", str, None, "write histograms to <csv>-<set>-<metric>.csv"),
            SEED,
        ],
        True,
    ),
    "audit ranking": (
        "last-user ranking attack",
        [
            MODEL,
            CORPUS,
            Opt("users", int, None, "enrolled users: the first N corpus faces (all if unset)"),
            Opt("trials", int, 100, "random splits"),
            Opt("candidates", int, 100, "candidates per trial"),
            Opt("bins", int, 10, "percentile bins"),
            SEED,
        ],
        True,
    ),
    "audit partial-leak": (
        "membership inference from leading coefficients",
        [
            MODEL,
            VAULT,
            CORPUS,
            Opt("outsiders", str, None, "corpus .npz of faces not enrolled", True),
            Opt("num_coeffs", int, 10, "leaked leading coefficients"),
            Opt("percentile", float, 0.01, "threshold percentile of mutual distances, in percent"),
            Opt("sample_size", int, 30_000, "records sampled for the threshold"),
            Opt("max_pairs", int, 1_000_000, "mutual distances sampled for the threshold"),
            Opt("noise", float, 0.0, "insider re-capture noise norm"),
            SEED,
        ],
        True,
    ),
    "exfil": (
        "time to exfiltrate a file over a bandwidth-limited channel",
        [
            Opt("bytes", float, None, "file size in bytes (or use --file)"),
            Opt("file", str, None, "measure this file instead"),
            Opt("bps", float, 1000.0, "channel bandwidth in bits per second"),
        ],
        False,
    ),
}


def parse_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _coerce(opt: Opt, value):
    try:
        return opt.type(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid value for {opt.name}: {value!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="honeyvault", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    audit_parser = None
    audit_sub = None
    for name, (help_text, opts, _) in COMMANDS.items():
        if name.startswith("audit "):
            if audit_parser is None:
                audit_parser = sub.add_parser("audit", help="privacy and security analyses")
                audit_sub = audit_parser.add_subparsers(dest="audit_command", required=True)
            p = audit_sub.add_parser(name.split()[1], help=help_text, description=help_text)
        else:
            p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--out", help="write a JSON report (with the effective configuration) here")
        for opt in opts:
            note = "required" if opt.required else f"default: {opt.default}"
            p.add_argument(
                "--" + opt.name.replace("_", "-"),
                dest=opt.name,
                default=None,
                help=f"{opt.help} ({note})",
            )
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    _, opts, stochastic = COMMANDS[command]
    config = parse_config(args.config) if args.config else {}
    known = {o.name for o in opts}
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for opt in opts:
        raw = getattr(args, opt.name)
        if raw is None:
            raw = config.get(opt.name)
        value = opt.default if raw is None else _coerce(opt, raw)
        if opt.name == "seed" and value is None:
            value = seed_from_env()
        if opt.required and value is None:
            raise UsageError(f"--{opt.name.replace('_', '-')} is required")
        out[opt.name] = value
    if stochastic and out.get("seed") is None:
        raise UsageError("a seed is required (--seed, config file or HONEYVAULT_SEED)")
    return out


def load_corpus(path):
    with np.load(path, allow_pickle=False) as z:
        return z["shapes"], z["textures"], [str(u) for u in z["usernames"]]


def _enrolled_templates(space, shapes, textures) -> np.ndarray:
    return np.array([authn.enrollment_template(space, x, g) for x, g in zip(shapes, textures)])


# -- commands --------------------------------------------------------------


def cmd_toy_corpus(cfg):
    pairs, truth = synth.make_toy_corpus(
        cfg["seed"], cfg["subjects"], cfg["landmarks"], cfg["pixels"], cfg["planted_dim"],
        cfg["noise"], draw=cfg["draw"],
    )
    names = vault.fabricate_usernames(len(pairs), seed=cfg["seed"], stream="subject-usernames")
    np.savez(
        cfg["output"],
        shapes=np.array([p[0] for p in pairs]),
        textures=np.array([p[1] for p in pairs]),
        usernames=np.array(names),
        planted_sigma=truth.sigma,
    )
    return f"wrote {len(pairs)} faces to {cfg['output']}", {"faces": len(pairs)}


def cmd_fit(cfg):
    shapes, textures, _ = load_corpus(cfg["corpus"])
    space = facespace.fit_face_space(list(zip(shapes, textures)), cfg["m"], cfg["t"], cfg["d"], cfg["w"], cfg["k"])
    facespace.save_face_space(space, cfg["output"])
    result = {
        "digest": space.digest().hex(),
        "shape_weight": space.shape_weight,
        "sigma_max": float(space.sigma[0]),
        "sigma_min": float(space.sigma[-1]),
    }
    return f"fitted d={space.dim} model, sigma {space.sigma[0]:.6g} .. {space.sigma[-1]:.6g}", result


def cmd_enroll(cfg):
    space = facespace.load_face_space(cfg["model"])
    shapes, textures, names = load_corpus(cfg["corpus"])
    n = len(names) if cfg["users"] is None else cfg["users"]
    v = vault.create_vault(space, zip(names[:n], shapes[:n], textures[:n]))
    vault.save_vault(v, cfg["output"])
    if cfg["checker_db"]:
        honeycheck.save_checker_db(names[:n], cfg["checker_db"])
    return f"enrolled {len(v)} users into {cfg['output']}", {"records": len(v), "payload_bytes": v.payload_bytes()}


def cmd_inflate(cfg):
    space = facespace.load_face_space(cfg["model"])
    v = vault.load_vault(cfg["vault"])
    if cfg["target"] < len(v):
        raise UsageError("--target is below the current record count")
    batch = vault.generate_honey_records(
        v, space, cfg["target"] - len(v), cfg["min_dist"], cfg["seed"],
        max_attempts_per_face=cfg["max_attempts"],
    )
    out = vault.merge_records(v, batch.usernames, batch.templates)
    vault.save_vault(out, cfg["output"])
    st = batch.stats
    result = {"records": len(out), "accepted": st.accepted, "rejected": st.rejected, "rejection_rate": st.rejection_rate}
    summary = (
        f"inflated {len(v)} -> {len(out)} records; rejection rate {st.rejection_rate:.4%}; "
        f"{st.seconds_per_template:.3g} s per template"
    )
    return summary, result


def cmd_verify(cfg):
    space = facespace.load_face_space(cfg["model"])
    v = vault.load_vault(cfg["vault"])
    shapes, textures, _ = load_corpus(cfg["probe"])
    i = cfg["index"]
    if not 0 <= i < len(shapes):
        raise UsageError(f"--index {i} outside the probe corpus")
    decision = authn.verify(v, space, cfg["username"], shapes[i], textures[i], cfg["threshold"])
    verdict = "accept" if decision.accepted else "reject"
    distance = round(decision.distance, 6) + 0.0
    return f"{verdict}, distance {distance}", {"accepted": decision.accepted, "distance": decision.distance}


def cmd_serve_sim(cfg):
    space = facespace.load_face_space(cfg["model"])
    v = vault.load_vault(cfg["vault"])
    db = honeycheck.load_checker_db(cfg["checker_db"])
    # ground truth for scoring only; the front server never sees it
    with open(cfg["checker_db"], encoding="utf-8") as fh:
        real_names = {line.strip() for line in fh if line.strip()}
    shapes, textures, names = load_corpus(cfg["corpus"])
    real = [(u, s, g) for u, s, g in zip(names, shapes, textures) if u in real_names and u in v]
    honey_names = [u for u in v.usernames if u not in real_names]
    rng = substream(cfg["seed"], "serve-sim")
    attempts = []
    for _ in range(cfg["attempts"]):
        kind = rng.integers(3)
        if kind == 0 and real:
            u, s, g = real[rng.integers(len(real))]
            if cfg["noise"] > 0:
                s, g = authn.genuine_probe(space, v.get_template(u), cfg["noise"], rng)
        elif kind == 1 and honey_names:
            u = honey_names[rng.integers(len(honey_names))]
            s, g = facespace.decode(v.get_template(u), space)
        else:
            u = v.usernames[rng.integers(len(v))]
            s, g = facespace.decode(authn.sample_shell(space, 1, rng)[0], space)
        attempts.append((u, s, g))
    sink = open(cfg["alarm_log"], "a", encoding="utf-8") if cfg["alarm_log"] else None
    try:
        front = honeycheck.FrontServer(
            v, space, honeycheck.LocalChannel(honeycheck.Honeychecker(db)), cfg["threshold"],
            fail_mode=cfg["fail_mode"], alarm_sink=sink,
        )
        report = honeycheck.simulate_logins(front, attempts, real_names)
    finally:
        if sink is not None:
            sink.close()
    summary = (
        f"{report.attempts} attempts: {report.outcomes}; alarms {report.alarms}, "
        f"false alarms {report.false_alarms}, missed {report.missed_alarms}"
    )
    return summary, report.to_record()


def _real_and_space(cfg):
    space = facespace.load_face_space(cfg["model"])
    shapes, textures, _ = load_corpus(cfg["corpus"])
    return space, _enrolled_templates(space, shapes, textures)


def cmd_audit_ks(cfg):
    space, real = _real_and_space(cfg)
    pool = authn.sample_shell(space, cfg["pool"], substream(cfg["seed"], "ks-pool"))
    res = audit.ks_battery(real, pool, cfg["runs"], cfg["alpha"], cfg["seed"])
    summary = f"{res.tests} tests: acceptance {res.acceptance_rate:.2%}, mean p {res.mean_p:.3f}"
    return summary, res.to_record()


def cmd_audit_distances(cfg):
    space, real = _real_and_space(cfg)
    fake = authn.sample_shell(space, len(real), substream(cfg["seed"], "distance-synth"))
    half = len(real) // 2
    sets = {"real": real, "synthetic": fake, "mixed": np.vstack([real[:half], fake[: len(real) - half]])}
    result = {}
    lines = []
    for metric in audit.METRICS:
        dists = {k: audit.pair_distances(x, metric, cfg["pairs"], cfg["seed"], disjoint=cfg["disjoint"]) for k, x in sets.items()}
        ks = audit.ks_two_sample(dists["real"], dists["synthetic"], 0.01)
        result[metric] = {"ks_statistic": ks.statistic, "ks_p": ks.p_value, "reject": ks.reject}
        lines.append(f"{metric}: real vs synthetic KS D={ks.statistic:.4f} p={ks.p_value:.3g}")
        if cfg["csv"]:
            lo = min(d.min() for d in dists.values())
            hi = max(d.max() for d in dists.values())
            edges = np.linspace(lo, hi, cfg["bins"] + 1)
            for k, d in dists.items():
                counts, _ = np.histogram(d, bins=edges)
                audit.DistanceHistogram(metric, edges, counts, d.size).to_csv(f"{cfg['csv']}-{k}-{metric}.csv")
    return "\n".join(lines), result


def cmd_audit_ranking(cfg):
    space, real = _real_and_space(cfg)
    if cfg["users"] is not None:
        if not 2 <= cfg["users"] <= len(real):
            raise UsageError(f"--users must lie in [2, {len(real)}]")
        real = real[: cfg["users"]]
    fake = authn.sample_shell(space, cfg["candidates"] - 1, substream(cfg["seed"], "ranking-synth"))
    reference = space.shell_radii / np.sqrt(space.dim)
    hist = audit.last_user_ranking(real, fake, reference, cfg["trials"], cfg["candidates"], cfg["seed"], cfg["bins"])
    p = hist.uniformity_pvalue()
    return f"ranking histogram {hist.counts.tolist()}, chi-square p={p:.3g}", {"counts": hist.counts, "p_value": p}


def cmd_audit_partial_leak(cfg):
    space = facespace.load_face_space(cfg["model"])
    v = vault.load_vault(cfg["vault"])
    shapes, textures, names = load_corpus(cfg["corpus"])
    rng = substream(cfg["seed"], "partial-leak-noise")
    insiders = np.array([
        authn.probe_template(space, v.get_template(u), *authn.genuine_probe(space, v.get_template(u), cfg["noise"], rng))
        for u in names if u in v
    ])
    if insiders.size == 0:
        raise UsageError("no corpus user is enrolled in the vault")
    o_shapes, o_textures, _ = load_corpus(cfg["outsiders"])
    outsiders = _enrolled_templates(space, o_shapes, o_textures)
    rep = audit.partial_leak_experiment(
        v.templates, insiders, outsiders, cfg["num_coeffs"], cfg["percentile"], cfg["sample_size"], cfg["seed"],
        max_pairs=cfg["max_pairs"],
    )
    summary = (
        f"{rep.num_coeffs} coefficients, threshold {rep.threshold:.6g}: insiders below {rep.insider_below_rate:.2%}, "
        f"outsiders below {rep.outsider_below_rate:.2%}"
    )
    return summary, rep.to_record()


def cmd_exfil(cfg):
    if (cfg["bytes"] is None) == (cfg["file"] is None):
        raise UsageError("give exactly one of --bytes or --file")
    size = cfg["bytes"]
    if cfg["file"] is not None:
        size = os.path.getsize(cfg["file"])
    seconds = audit.exfil_time(size, cfg["bps"])
    return audit.describe_duration(seconds), {"bytes": size, "seconds": seconds}


HANDLERS = {
    "toy-corpus": cmd_toy_corpus,
    "fit": cmd_fit,
    "enroll": cmd_enroll,
    "inflate": cmd_inflate,
    "verify": cmd_verify,
    "serve-sim": cmd_serve_sim,
    "audit ks": cmd_audit_ks,
    "audit distances": cmd_audit_distances,
    "audit ranking": cmd_audit_ranking,
    "audit partial-leak": cmd_audit_partial_leak,
    "exfil": cmd_exfil,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command if args.command != "audit" else f"audit {args.audit_command}"
    try:
        cfg = resolve(command, args)
        start = time.perf_counter()
        summary, result = HANDLERS[command](cfg)
        elapsed = time.perf_counter() - start
    except UsageError as exc:
        print(f"honeyvault {command}: error: {exc}", file=sys.stderr)
        return 2
    except (HoneyVaultError, OSError, KeyError, ValueError) as exc:
        print(f"honeyvault {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary)
    print(f"({elapsed:.2f} s)", file=sys.stderr)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(audit.report_record(command, cfg, result, "ok") + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
