"""Command-line driver: features, select, generate, evaluate, bench, synth.

Every command writes into the ``--out`` directory and echoes its resolved
run configuration (``run_config.json``, or inside the sidecar for
``generate``).  Exit codes: 0 success, 1 usage error, 2 runtime or data
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from affectmotion import dataset as ds_mod
from affectmotion import evaluation, hmm, rmlr
from affectmotion.filters import FilterParams
from affectmotion.generation import GenerationConfig, GenerationError, generate
from affectmotion.lma import COMPONENTS, FeatureError, feature_matrix

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class CLIError(RuntimeError):
    """Runtime or data error reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _num(x: float) -> str:
    return repr(float(x))


def _load(manifest: str) -> ds_mod.LabeledDataset:
    """Load a manifest and scale-normalize every movement."""
    try:
        data = ds_mod.load_dataset(manifest)
        movements = [ds_mod.normalize_scale(m, data.marker_set) for m in data.movements]
    except (ds_mod.LoadError, ds_mod.DegeneratePoseError) as exc:
        raise CLIError(str(exc)) from None
    return ds_mod.LabeledDataset(data.marker_set, movements, data.label_set)


def _features(data: ds_mod.LabeledDataset) -> np.ndarray:
    try:
        return feature_matrix(data.movements, data.marker_set)
    except FeatureError as exc:
        raise CLIError(f"feature extraction failed: {exc}") from None


def _load_model(path: str) -> rmlr.RMLRModel:
    try:
        return rmlr.RMLRModel.loads(Path(path).read_text())
    except OSError as exc:
        raise CLIError(f"cannot read model {path}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise CLIError(f"invalid model {path}: {exc}") from None


def _gen_config(args) -> GenerationConfig:
    try:
        return GenerationConfig(
            n_states=args.states,
            n_d=args.n_d,
            epsilon_fraction=args.epsilon,
            smoothing=FilterParams.lowpass(args.cutoff_hz),
            seed=args.seed,
        )
    except ValueError as exc:
        raise CLIError(f"invalid generation settings: {exc}") from None


def _run_config(args, **extra) -> dict:
    """Resolved configuration echoed into every output."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    if hasattr(args, "n_d"):
        cfg["generation"] = _gen_config(args).to_dict()
    cfg.update(extra)
    return cfg


def features_csv(data: ds_mod.LabeledDataset, F: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", *COMPONENTS])
    for mv, row in zip(data.movements, F):
        w.writerow([mv.source_id, mv.label or "", *map(_num, row)])
    return buf.getvalue()


def read_features_csv(path: str) -> tuple[list[str], list[str], np.ndarray]:
    """(ids, labels, N x 27 matrix) from a feature CSV."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CLIError(f"cannot read features {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise CLIError(f"{path}: empty feature file")
    header = rows[0]
    for col in ("id", "label", *COMPONENTS):
        if col not in header:
            raise CLIError(f"{path}: missing feature column {col!r}")
    pos = [header.index(c) for c in COMPONENTS]
    ids, labels, X = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            X.append([float(row[j]) for j in pos])
        except (ValueError, IndexError):
            raise CLIError(f"{path}: line {lineno}: malformed row") from None
        ids.append(row[header.index("id")])
        labels.append(row[header.index("label")])
    return ids, labels, np.array(X).reshape(len(X), len(COMPONENTS))


# ---------------------------------------------------------------------------
# commands


def cmd_features(args) -> int:
    data = _load(args.manifest)
    F = _features(data)
    out = Path(args.out)
    _write(out / "features.csv", features_csv(data, F))
    _write(out / "run_config.json", _dump_json(_run_config(args)))
    return EXIT_OK


def cmd_select(args) -> int:
    ids, labels, X = read_features_csv(args.features)
    if len(set(labels)) < 2:
        raise CLIError("feature selection needs at least two classes")
    out = Path(args.out)
    alphas = [args.alpha] if args.alpha is not None else list(rmlr.DEFAULT_ALPHAS)
    path = None
    try:
        if args.alpha is not None and args.lam is not None:
            alpha, lam = args.alpha, args.lam
        else:
            path = rmlr.cross_validate(X, labels, alphas, args.n_lambda, args.folds, args.seed)
            alpha, lam = path.best
        model = rmlr.fit(X, labels, alpha, lam, feature_names=COMPONENTS)
    except ValueError as exc:
        raise CLIError(f"feature selection failed: {exc}") from None
    _write(out / "model.json", model.dumps())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "lambda", "cv_error"])
    if path is not None:
        for a, l, e in path.rows():
            w.writerow([_num(a), _num(l), _num(e)])
    _write(out / "regpath.csv", buf.getvalue())
    sets = {lab: sorted(rmlr.salient_components(model, lab)) for lab in model.label_order}
    extra = {"selected": {"alpha": alpha, "lambda": lam}, "salient": sets}
    _write(out / "run_config.json", _dump_json(_run_config(args, **extra)))
    return EXIT_OK


def _find(data: ds_mod.LabeledDataset, source_id: str) -> int:
    try:
        return data.find(source_id)
    except KeyError:
        raise CLIError(f"unknown source id {source_id!r}") from None


def cmd_generate(args) -> int:
    data = _load(args.manifest)
    model = _load_model(args.model)
    cfg = _gen_config(args)
    i = _find(data, args.source_id)
    if args.target not in data.label_set:
        raise CLIError(f"unknown target emotion {args.target!r}")
    F = _features(data)
    try:
        res = generate(
            data.movements[i], args.target, data, model, cfg, features=F, desired_features=F[i]
        )
    except GenerationError as exc:
        raise CLIError(f"generation failed at stage {exc.stage}: {exc}") from None
    # back to the recording's units
    output = res.output.denormalized()
    scale = float(np.prod(res.output.scale_factors))
    stem = f"{args.source_id}_to_{args.target}"
    out = Path(args.out)
    _write(out / f"{stem}.csv", ds_mod.format_trajectory(output, data.marker_set))
    side = res.sidecar(cfg)
    side["units_scale"] = scale
    side["run_config"] = _run_config(args)
    _write(out / f"{stem}.json", _dump_json(side))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from affectmotion.protocol import evaluate_conversions

    data = _load(args.manifest)
    model = _load_model(args.model)
    cfg = _gen_config(args)
    try:
        res = evaluate_conversions(
            data, model, cfg, args.folds, args.seed, include_self=args.self_conversion,
            features=_features(data),
        )
    except ValueError as exc:
        raise CLIError(f"evaluation failed: {exc}") from None
    out = Path(args.out)
    _write(out / "confusion.csv", res.confusion(False).to_csv())
    if args.self_conversion:
        _write(out / "confusion_self.csv", res.confusion(True).to_csv())
    _write(out / "conversions.csv", res.log_csv())
    _write(out / "summary.csv", res.summary_csv())
    _write(out / "exemplars.json", _dump_json(res.exemplars(args.seed)))
    _write(out / "run_config.json", _dump_json(_run_config(args, warnings=res.warnings)))
    return EXIT_OK


def cmd_bench(args) -> int:
    data = _load(args.manifest)
    F = _features(data)
    labels = data.labels
    methods = [m.strip() for m in args.bench_methods.split(",") if m.strip()]
    n = len(data.movements)
    rng = np.random.default_rng(args.seed)
    queries = sorted(rng.choice(n, size=min(args.queries, n), replace=False).tolist())

    subspaces = None
    if args.model is not None:
        model = _load_model(args.model)
        subspaces = {}
        for lab in data.label_set:
            keep = set(COMPONENTS) - rmlr.salient_components(model, lab)
            subspaces[lab] = [c for c in COMPONENTS if c in keep]

    cache, hmm_model = None, None
    if any(m in ("hmm_kl", "hmm_rmlr") for m in methods):
        cache = []
        for mv in data.movements:
            seq = mv.flat()
            try:
                init = hmm.init_segmental([seq], args.states, 1e-2)
                cache.append(hmm.baum_welch([seq], init, 200, 1e-4, 1e-2)[0])
            except (ValueError, hmm.NumericalFailure) as exc:
                raise CLIError(f"{mv.source_id}: HMM training failed: {exc}") from None
    if "hmm_rmlr" in methods:
        P = np.array([evaluation.flatten_hmm(m) for m in cache])
        alpha = 0.5 if args.alpha is None else args.alpha
        lam = 0.1 * rmlr.lambda_max(P, labels, alpha) if args.lam is None else args.lam
        hmm_model = rmlr.fit(P, labels, alpha, lam)
    try:
        results = evaluation.benchmark_nn_search(
            F, labels, queries, methods, subspaces, cache, hmm_model, seed=args.seed
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    out = Path(args.out)
    _write(out / "benchmark.csv", evaluation.benchmark_csv(results))
    _write(out / "run_config.json", _dump_json(_run_config(args, queries=queries)))
    return EXIT_OK


def cmd_synth(args) -> int:
    from affectmotion.synthetic import synthetic_dataset

    data = synthetic_dataset(args.per_class, args.seed)
    ds_mod.write_dataset(args.out, data)
    _write(Path(args.out) / "run_config.json", _dump_json(_run_config(args)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_generation_flags(p):
    p.add_argument("--states", type=int, default=12, help="HMM hidden states")
    p.add_argument("--n-d", type=int, default=0, help="copies of the desired path in HMM training")
    p.add_argument("--epsilon", type=float, default=0.10, help="neighbourhood radius fraction")
    p.add_argument("--cutoff-hz", type=float, default=6.0, help="output low-pass cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affectmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("features", help="LMA feature CSV of every movement")
    common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("select", help="elastic-net RMLR feature selection")
    common(p, manifest=False)
    p.add_argument("--features", required=True, help="feature CSV from 'features'")
    p.add_argument("--alpha", type=float, default=None, help="fix the mixing value")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fix lambda (needs --alpha)")
    p.add_argument("--n-lambda", type=int, default=100)
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("generate", help="re-generate one movement in a target emotion")
    common(p)
    p.add_argument("--model", required=True, help="RMLR model JSON from 'select'")
    p.add_argument("--source-id", required=True)
    p.add_argument("--target", required=True, help="target emotion")
    _add_generation_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="fold-wise conversion and recognition")
    common(p)
    p.add_argument("--model", required=True, help="RMLR model JSON from 'select'")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument(
        "--self", dest="self_conversion", action="store_true",
        help="also convert every test movement to its own emotion",
    )
    _add_generation_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="nearest-neighbour search timing")
    common(p)
    p.add_argument("--model", default=None, help="RMLR model JSON for LMA subspaces")
    p.add_argument("--bench-methods", default="lma_subspace,hmm_kl")
    p.add_argument("--queries", type=int, default=10)
    p.add_argument("--states", type=int, default=12)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write the synthetic four-class suite")
    common(p, manifest=False)
    p.add_argument("--per-class", type=int, default=20)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "select" and args.lam is not None and args.alpha is None:
        parser.error("--lambda needs --alpha")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
