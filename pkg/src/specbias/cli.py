"""Command-line interface.

Every subcommand reads an optional JSON config (``--config``), honors
``--seed`` and ``--out-dir`` and writes manifested artifacts. Failures print a
single JSON line to stderr and exit with a code from :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "usage": 2,
    "config": 3,
    "missing_input": 4,
    "artifact": 5,
    "data": 6,
    "diverged": 7,
}
ENV_OUT_DIR = "SPECBIAS_OUT_DIR"
ENV_THREADS = "SPECBIAS_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EPILOG = """\
exit codes:
  0  success
  1  internal error
  2  usage error (unknown flag, missing argument)
  3  invalid configuration
  4  missing input file
  5  corrupted or malformed artifact
  6  data error (e.g. undefined R^2, class absent from train split)
  7  training diverged (non-finite loss)

errors are printed to stderr as one JSON line: {"error": ..., "exit": ..., "message": ...}

environment:
  SPECBIAS_OUT_DIR  default for --out-dir (otherwise the current directory)
  SPECBIAS_THREADS  thread count for numerical libraries

--config accepts a file path or the name of a bundled config
(e.g. table1_beta.json, bias_demo.json, subject_task.json).
"""


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _fail(kind: str, message: str) -> int:
    code = EXIT_CODES[kind]
    line = json.dumps({"error": kind, "exit": code, "message": " ".join(str(message).split())},
                      sort_keys=True)
    print(line, file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------

def bundled_configs() -> list[str]:
    return sorted(p.name for p in resources.files("specbias.configs").iterdir()
                  if p.name.endswith(".json"))


def load_config(ref: str | None) -> dict:
    if ref is None:
        return {}
    path = Path(ref)
    if not path.exists():
        name = path.name if path.suffix == ".json" else f"{path.name}.json"
        bundled = resources.files("specbias.configs") / name
        if path.parent == Path(".") and bundled.is_file():
            text = bundled.read_text()
        else:
            raise CLIError("missing_input", f"config not found: {ref}")
    else:
        text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise CLIError("config", f"{ref}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise CLIError("config", f"{ref}: top level must be an object")
    return cfg


def _need(path: str | None, what: str) -> Path:
    if path is None:
        raise CLIError("usage", f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise CLIError("missing_input", f"{what} not found: {path}")
    return p


def _build(fn, *args, **kw):
    """Config-parsing phase: any ValueError/TypeError/KeyError is a config error."""
    try:
        return fn(*args, **kw)
    except (ValueError, TypeError, KeyError) as e:
        msg = f"missing key {e}" if isinstance(e, KeyError) else str(e)
        raise CLIError("config", msg) from None


def _seed(args, cfg: dict, default: int = 0) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", default))


def _labels_from(manifest: dict, key: str) -> list[str]:
    vals = [m.get(key) for m in manifest.get("meta", [])]
    if not vals or any(v is None for v in vals):
        raise CLIError("data", f"epochs manifest lacks per-epoch {key} labels")
    return [str(v) for v in vals]


def _print_written(paths):
    for p in paths:
        print(p)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, cfg, out: Path):
    from . import artifacts
    from .corpus import CorpusConfig, make_subject_task_corpus
    from .probe import split_csv
    from .recipes import _pick, signal_config
    from .spectrum import EpochMeta, EpochSet, SpectralParams, save_epochs, stream, synthesize

    seed = _seed(args, cfg)
    if "corpus" in cfg:
        d = dict(cfg["corpus"])
        sig = d.pop("signal", None)
        ccfg = _build(lambda: _pick(CorpusConfig, d, signal=signal_config(sig, seed)))
        c = make_subject_task_corpus(config=ccfg)
        return [save_epochs(c.epochs, out / "corpus", {"corpus": ccfg.to_dict()}),
                artifacts.atomic_write(out / "split.csv", split_csv(c.train, c.test))]

    def parse():
        params = SpectralParams.from_dict(cfg.get("params", {}))
        sig = signal_config(cfg.get("signal"), seed)
        sig.check_params(params)
        n = int(cfg.get("n_epochs", 1))
        if n < 1:
            raise ValueError("n_epochs must be >= 1")
        return params, sig, n, float(cfg.get("df", 0.5)), cfg.get("compose", "linear")

    params, sig, n, df, compose = _build(parse)
    rows = [synthesize(params, sig, stream(sig.seed, i), df, compose) for i in range(n)]
    es = EpochSet(rows, sig.fs, [EpochMeta(seed_used=sig.seed) for _ in range(n)])
    return [save_epochs(es, out / "synth", {"params": params.to_dict(), "compose": compose})]


def cmd_sweep(args, cfg, out: Path):
    from .recipes import sweep_spec
    from .spectrum import save_epochs, sweep

    spec = _build(sweep_spec, {k: v for k, v in cfg.items() if k != "seed"}, _seed(args, cfg))
    es, _ = sweep(spec)
    return [save_epochs(es, out / "sweep", {"sweep": {
        "param_name": spec.param_name, "theta_min": spec.theta_min, "theta_max": spec.theta_max,
        "n_samples": spec.n_samples, "base": spec.base.to_dict(), "df": spec.df,
        "compose": spec.compose}})]


def cmd_forward(args, cfg, out: Path):
    from . import artifacts
    from .forward import ForwardSpec, covariance_check, default_spec, simulate
    from .spectrum import save_epochs

    seed = _seed(args, cfg)
    spec_d = {k: v for k, v in cfg.items() if k != "seed"}

    def parse():
        spec = ForwardSpec.from_dict(spec_d) if spec_d else default_spec()
        spec.config = type(spec.config)(spec.config.fs, spec.config.duration, seed)
        return spec

    spec = _build(parse)
    es = simulate(spec)
    rep = covariance_check(es, spec)
    return [save_epochs(es, out / "forward", {"forward": spec.to_dict()}),
            artifacts.emit_report(rep.to_dict(), out / "covariance.json")]


def cmd_train_ae(args, cfg, out: Path):
    from . import artifacts
    from .corpus import make_pretrain_corpus
    from .embedders import train_masked_ae
    from .recipes import ae_configs
    from .spectrum import load_epochs

    seed = _seed(args, cfg)
    pretrain, mask, arch, train = _build(ae_configs, cfg, seed)
    if args.epochs:
        epochs, _ = load_epochs(_need(args.epochs, "epochs"))
    else:
        epochs = make_pretrain_corpus(pretrain)
    if epochs.n_samples % mask.patch_len:
        raise CLIError("config", f"patch_len={mask.patch_len} does not divide L={epochs.n_samples}")
    model = train_masked_ae(epochs, mask, arch, train)
    model.save(out / "model.npz")
    rep = {**model.config(), "train_log": model.train_log, "n_train_epochs": len(epochs)}
    return [out / "model.npz", artifacts.emit_report(rep, out / "train_report.json")]


def cmd_embed(args, cfg, out: Path):
    from .embedders import MaskedAEModel, WelchParams, export_embeddings
    from .recipes import Embedder, _pick
    from .spectrum import load_epochs

    epochs, _ = load_epochs(_need(args.epochs, "epochs"))
    kind = args.embedder or cfg.get("kind", "logpsd")
    if kind not in ("logpsd", "bandpower", "masked_ae"):
        raise CLIError("config", f"unknown embedder kind {kind!r}")
    welch = _build(_pick, WelchParams, cfg.get("welch"))
    model = None
    if kind == "masked_ae":
        model = MaskedAEModel.load(_need(args.model, "model"))
    bands = tuple(tuple(b) for b in cfg["bands"]) if "bands" in cfg else None
    emb = Embedder(kind, welch, bands, model)(epochs)
    return [export_embeddings(emb, out / "embeddings")]


def cmd_import_emb(args, cfg, out: Path):
    import hashlib

    import numpy as np

    from . import artifacts
    from .embedders import EmbeddingSet, export_embeddings, import_embeddings

    src = _need(args.input, "input")
    name = src.name
    if name.endswith(".emb.f32") or name.endswith(".emb.json"):
        emb = import_embeddings(src)
    else:
        if name.endswith(".npy"):
            data = np.load(src, allow_pickle=False)
        elif name.endswith(".csv"):
            data = np.loadtxt(src, delimiter=",", ndmin=2)
        else:
            raise CLIError("usage", f"unsupported embedding file {name}; use .emb.f32, .npy or .csv")
        ident = args.embedder_id or cfg.get("embedder_id", "external")
        emb = EmbeddingSet(data, ident, artifacts.digest(
            {"source": name, "embedder_id": ident, "sha256": hashlib.sha256(
                np.ascontiguousarray(data, dtype="<f8").tobytes()).hexdigest()}))
    return [export_embeddings(emb, out / "imported")]


def _targets(args, n: int):
    import numpy as np

    from .spectrum import load_epochs

    if args.targets:
        path = _need(args.targets, "targets")
        y = np.loadtxt(path, delimiter=",", ndmin=1) if path.suffix == ".csv" else \
            np.asarray(json.loads(path.read_text()), dtype=float)
    else:
        _, manifest = load_epochs(_need(args.epochs, "epochs"))
        y = np.array([np.nan if m.get("theta") is None else m["theta"]
                      for m in manifest.get("meta", [])])
        if np.isnan(y).any():
            raise CLIError("data", "epochs manifest lacks theta for every epoch; pass --targets")
    if y.shape != (n,):
        raise CLIError("data", f"{y.size} targets for {n} embeddings")
    return y


def cmd_decode(args, cfg, out: Path):
    from . import artifacts
    from .decode import CVConfig, linear_decodability
    from .embedders import import_embeddings
    from .recipes import _pick, decode_csv

    emb = import_embeddings(_need(args.emb, "emb"))
    y = _targets(args, len(emb))
    cv = _build(_pick, CVConfig, {k: v for k, v in cfg.items() if k != "seed"},
                shuffle_seed=_seed(args, cfg))
    rep = linear_decodability(emb, y, cv, target_name=args.target_name)
    body = rep.to_dict()
    body.pop("predictions")
    body.pop("targets")
    return [artifacts.emit_report({**body, "cv": cv.__dict__}, out / "decode.json"),
            artifacts.atomic_write(out / "decode.csv", decode_csv(rep.targets, rep.predictions))]


def _probe_inputs(args):
    from .embedders import import_embeddings
    from .probe import read_split_csv
    from .spectrum import load_epochs

    emb = import_embeddings(_need(args.emb, "emb"))
    _, manifest = load_epochs(_need(args.epochs, "epochs"))
    if len(manifest.get("meta", [])) != len(emb):
        raise CLIError("data", f"{len(manifest.get('meta', []))} epochs but {len(emb)} embeddings")
    split = read_split_csv(_need(args.split, "split"), len(emb))
    return emb, manifest, split


def _probe_cfg(args, cfg):
    from .probe import ProbeTrainConfig
    from .recipes import _pick

    return _build(_pick, ProbeTrainConfig, {k: v for k, v in cfg.items() if k != "seed"},
                  seed=_seed(args, cfg))


def cmd_probe(args, cfg, out: Path):
    from . import artifacts
    from .probe import LabelSet, confusion_csv, train_linear_probe

    emb, manifest, split = _probe_inputs(args)
    pcfg = _probe_cfg(args, cfg)
    labels = LabelSet.from_values(_labels_from(manifest, f"{args.label}_id"), args.label)
    _, rep = train_linear_probe(emb, labels, split, pcfg)
    return [artifacts.emit_report(rep.to_dict(), out / f"probe_{args.label}.json"),
            artifacts.atomic_write(out / f"confusion_{args.label}.csv", confusion_csv(rep))]


def cmd_battery(args, cfg, out: Path):
    from . import artifacts
    from .probe import LabelSet, subject_task_battery

    emb, manifest, split = _probe_inputs(args)
    pcfg = _probe_cfg(args, cfg)
    subjects = LabelSet.from_values(_labels_from(manifest, "subject_id"), "subject")
    tasks = LabelSet.from_values(_labels_from(manifest, "task_id"), "task")
    rep = subject_task_battery(emb, subjects, tasks, split, pcfg)
    return [artifacts.emit_report(rep.to_dict(), out / "battery.json")]


def cmd_geometry(args, cfg, out: Path):
    from . import artifacts
    from .embedders import import_embeddings
    from .geometry import centroids, cluster_distances, pca2d, pca_csv
    from .spectrum import load_epochs

    emb = import_embeddings(_need(args.emb, "emb"))
    _, manifest = load_epochs(_need(args.epochs, "epochs"))
    s = _labels_from(manifest, "subject_id")
    t = _labels_from(manifest, "task_id")
    rep = cluster_distances(centroids(emb, s, t), strict=bool(cfg.get("strict", False)))
    return [artifacts.emit_report(rep.to_dict(), out / "geometry.json"),
            artifacts.atomic_write(out / "pca.csv", pca_csv(pca2d(emb), s, t))]


def cmd_recipe(args, cfg, out: Path):
    from .recipes import RECIPES, run_recipe

    if cfg.get("recipe") not in RECIPES:
        raise CLIError("config", f"recipe must be one of {sorted(RECIPES)}, got {cfg.get('recipe')!r}")
    run_recipe(cfg, out, _seed(args, cfg))
    return [out / "report.json"]


def cmd_verify(args, cfg, out: Path):
    from . import artifacts

    if not args.paths:
        raise CLIError("usage", "verify needs at least one artifact path")
    for p in args.paths:
        _need(p, "artifact")
        artifacts.verify(p)
        print(f"ok {p}")
    return []


COMMANDS = {
    "synth": (cmd_synth, "synthesize epochs from spectral params, or a subject/task corpus"),
    "sweep": (cmd_sweep, "linear sweep of one spectral parameter"),
    "forward": (cmd_forward, "multi-channel forward model plus covariance check"),
    "train-ae": (cmd_train_ae, "train the masked-reconstruction autoencoder"),
    "embed": (cmd_embed, "embed epochs with logpsd, bandpower or a trained AE"),
    "import-emb": (cmd_import_emb, "validate external embeddings (.emb.f32, .npy, .csv)"),
    "decode": (cmd_decode, "nested-CV ridge decodability of targets from embeddings"),
    "probe": (cmd_probe, "linear probe for subject or task labels"),
    "battery": (cmd_battery, "subject and task probes on one shared split"),
    "geometry": (cmd_geometry, "subject/task centroid distances and a 2-D PCA export"),
    "recipe": (cmd_recipe, "run an end-to-end pipeline from one config"),
    "verify": (cmd_verify, "re-check manifests and payload digests"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specbias", description="Spectral-bias diagnostics: synthesis, embedding, decoding, probing, geometry.",
                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config path or bundled config name")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out-dir", help=f"output directory (default ${ENV_OUT_DIR} or .)")
        if name in ("train-ae", "embed", "decode", "probe", "battery", "geometry"):
            p.add_argument("--epochs", help="input .epochs.f32")
        if name in ("decode", "probe", "battery", "geometry"):
            p.add_argument("--emb", help="input .emb.f32")
        if name in ("probe", "battery"):
            p.add_argument("--split", help="CSV of epoch_index,split")
        if name == "probe":
            p.add_argument("--label", choices=("subject", "task"), default="task")
        if name == "embed":
            p.add_argument("--embedder", choices=("logpsd", "bandpower", "masked_ae"))
            p.add_argument("--model", help="trained model .npz (masked_ae)")
        if name == "import-emb":
            p.add_argument("--input", help="embedding file")
            p.add_argument("--embedder-id", help="provenance label for raw arrays")
        if name == "decode":
            p.add_argument("--targets", help=".csv or .json targets (default: theta from --epochs)")
            p.add_argument("--target-name", default="theta")
        if name == "verify":
            p.add_argument("paths", nargs="*", help="artifact files")
    return parser


def _configure_threads():
    n = os.environ.get(ENV_THREADS)
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = n


def main(argv=None) -> int:
    _configure_threads()
    try:
        args = build_parser().parse_args(argv)
    except CLIError as e:
        return _fail(e.kind, e)
    if not args.command:
        build_parser().print_help()
        return EXIT_CODES["usage"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    from numpy.linalg import LinAlgError

    from .artifacts import ArtifactError
    from .embedders import TrainingDiverged

    try:
        cfg = load_config(args.config)
        out = Path(args.out_dir or os.environ.get(ENV_OUT_DIR) or ".")
        out.mkdir(parents=True, exist_ok=True)
        _print_written(COMMANDS[args.command][0](args, cfg, out))
    except CLIError as e:
        return _fail(e.kind, e)
    except ArtifactError as e:
        return _fail("artifact", e)
    except TrainingDiverged as e:
        return _fail("diverged", e)
    except FileNotFoundError as e:
        return _fail("missing_input", e)
    except (ValueError, LinAlgError) as e:
        return _fail("data", e)
    except Exception as e:  # noqa: BLE001 - last-resort single-line report
        return _fail("internal", f"{type(e).__name__}: {e}")
    return EXIT_CODES["ok"]


if __name__ == "__main__":
    sys.exit(main())
