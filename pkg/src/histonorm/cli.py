"""Command-line entry point.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines whose
keys are the subcommand's long option names (dashes or underscores);
options given on the command line win over the file. Exit codes: 0 on
success, 1 on usage errors, 2 on data or model errors. Output files are
written under a temporary name and renamed once complete.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import shutil
import sys
import tempfile
from pathlib import Path

from .errors import DataError, MalformedLine, UnknownKey, UsageError

DEFAULT_SEED = 42
THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so usage problems map to exit code 1."""

    def error(self, message):
        raise UsageError(message)


# --- config files -----------------------------------------------------------


def load_config_file(path: str | os.PathLike, allowed: set[str] | None = None) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped.

    Keys are normalized to underscores. With ``allowed``, any other key
    raises :class:`UnknownKey`.
    """
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise MalformedLine(f"{path}:{lineno}: expected key=value, got {line!r}")
            if allowed is not None and key not in allowed:
                raise UnknownKey(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _widths(text: str) -> tuple[int, ...]:
    try:
        w = tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected six comma-separated integers, got {text!r}") from None
    if len(w) != 6 or min(w) < 1:
        raise argparse.ArgumentTypeError(f"expected six positive integers, got {text!r}")
    return w


# --- atomic outputs ---------------------------------------------------------


@contextlib.contextmanager
def atomic_path(path: str | os.PathLike):
    """Yield a temporary sibling of ``path``; it replaces ``path`` only if the
    block finishes without raising."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def atomic_dir(path: str | os.PathLike):
    """Directory counterpart of :func:`atomic_path`; an existing directory is replaced."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        yield tmp
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        Path(tmp).write_text(text, encoding="utf-8")


# --- argument groups --------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key=value option defaults")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, reproducible reductions")
    p.add_argument("--threads", type=int, help="cap on worker threads")


def _add_estimation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, default=0.15, help="OD threshold for tissue pixels")
    p.add_argument("--alpha", type=float, default=1.0, help="angle percentile")
    p.add_argument("--cpct", type=float, default=99.0, help="concentration percentile")
    p.add_argument("--i0", type=float, default=255.0, help="illuminant white level")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--learning-rate", type=float, default=0.0003)
    p.add_argument("--validation-interval", type=int, default=100)
    p.add_argument("--validation-per-class", type=int, default=0, help="held-out patches per class")
    p.add_argument("--no-augment", action="store_true", help="disable rotation augmentation")
    p.add_argument("--widths", type=_widths, default=None, help="six hidden widths, e.g. 32,64,128,256,1024,512")


# required flags per subcommand, checked after config files are merged
REQUIRED = {
    "fit-template": ("input", "out"),
    "normalize": ("input", "template", "out"),
    "bake-lut": ("source", "target", "out"),
    "apply-lut": ("input", "lut", "out"),
    "train": ("data", "out"),
    "classify": ("model", "input", "out"),
    "evaluate": ("model", "data"),
    "grid": ("train", "test", "template"),
    "synth": ("out",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histonorm", description="Stain normalization and tissue classification.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit-template", help="estimate a stain template from an image")
    p.add_argument("--input")
    p.add_argument("--out")
    _add_estimation(p)

    p = sub.add_parser("normalize", help="map an image onto a template's stain appearance")
    p.add_argument("--input")
    p.add_argument("--template")
    p.add_argument("--out")

    p = sub.add_parser("bake-lut", help="bake the transfer between two templates into a LUT")
    p.add_argument("--source", help="template of the images to be normalized")
    p.add_argument("--target", help="template to normalize towards")
    p.add_argument("--out")

    p = sub.add_parser("apply-lut", help="apply a LUT to an image")
    p.add_argument("--input")
    p.add_argument("--lut")
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--data", help="dataset directory, one subdirectory per class")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="training log path (default: stdout)")
    _add_training(p)

    p = sub.add_parser("classify", help="dense classification of a tile")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--out", help="class map image")
    p.add_argument("--probs", help="probability dump (CLM1)")
    p.add_argument("--template", help="normalize the tile towards this template first")
    p.add_argument("--lut", help="normalize the tile with this LUT first")
    p.add_argument("--blend", action="store_true", help="blend the class map over the tile")

    p = sub.add_parser("evaluate", help="score a model on a patch dataset")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--mapping", help="class grouping file")
    p.add_argument("--out", help="metrics file (default: stdout)")

    p = sub.add_parser("grid", help="train/test grid with and without normalization")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--template")
    p.add_argument("--out", help="table file (default: stdout)")
    _add_training(p)

    p = sub.add_parser("synth", help="write a synthetic two-stain dataset")
    p.add_argument("--out")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--patches-per-class", type=int, default=64)
    p.add_argument("--textures", help="comma-separated texture names")
    p.add_argument("--noise-sd", type=float, default=2.0)
    p.add_argument("--slides", type=int, default=1)
    p.add_argument("--basis-jitter", type=float, default=0.0, help="max per-slide stain tilt in degrees")
    p.add_argument("--intensity-jitter", type=float, default=1.0)
    p.add_argument("--concentration-scale", type=float, default=1.0)
    p.add_argument("--palette", choices=("reference", "shifted"), default="reference")

    for name, sp in sub.choices.items():
        _add_common(sp)
        sp.set_defaults(command=name)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        values = load_config_file(args.config, set(actions))
        defaults = {}
        for key, text in values.items():
            action = actions[key]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[key] = _parse_bool(text)
            else:
                defaults[key] = text
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    for name in REQUIRED[args.command]:
        if getattr(args, name) is None:
            raise UsageError(f"{args.command}: missing required option --{name.replace('_', '-')}")
    return args


def _limit_threads(args) -> None:
    n = 1 if args.deterministic else args.threads
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    for var in THREAD_VARIABLES:
        os.environ[var] = str(n)


# --- subcommands ------------------------------------------------------------


def _estimation(args):
    from .color_math import OpticsConfig
    from .stain_norm import EstimationConfig

    try:
        return EstimationConfig(args.beta, args.alpha, args.cpct), OpticsConfig(i0=args.i0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args):
    from .convnet.network import CANONICAL_WIDTHS
    from .pipeline.training import TrainConfig

    try:
        return TrainConfig(
            iterations=args.iterations,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            seed=args.seed,
            augment_rotations=not args.no_augment,
            validation_interval=args.validation_interval,
            validation_per_class=args.validation_per_class,
            widths=args.widths or CANONICAL_WIDTHS,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_fit_template(args) -> None:
    from .color_math import load_rgb
    from .stain_norm import fit_template, save_template

    cfg, optics = _estimation(args)
    template = fit_template(load_rgb(args.input), cfg, optics)
    with atomic_path(args.out) as tmp:
        save_template(template, tmp)


def cmd_normalize(args) -> None:
    from .color_math import load_rgb, save_rgb
    from .stain_norm import load_template, normalize

    out = normalize(load_rgb(args.input), load_template(args.template))
    with atomic_path(args.out) as tmp:
        save_rgb(out, tmp)


def cmd_bake_lut(args) -> None:
    from .lut import bake_lut, write_lut
    from .stain_norm import load_template

    lut = bake_lut(load_template(args.source), load_template(args.target))
    with atomic_path(args.out) as tmp:
        write_lut(lut, tmp)


def cmd_apply_lut(args) -> None:
    from .color_math import load_rgb, save_rgb
    from .lut import apply_lut, read_lut

    out = apply_lut(load_rgb(args.input), read_lut(args.lut))
    with atomic_path(args.out) as tmp:
        save_rgb(out, tmp)


def cmd_train(args) -> None:
    from .convnet.checkpoint import save_checkpoint
    from .pipeline.data import load_dataset
    from .pipeline.training import train

    config = _train_config(args)
    dataset = load_dataset(args.data)
    echo = None if args.log else (lambda line: print(line, flush=True))
    result = train(dataset, config, on_log=echo)
    with atomic_path(args.out) as tmp:
        save_checkpoint(result.spec, result.params, tmp)
    if args.log:
        _write_text(args.log, "\n".join(result.log) + "\n")


def cmd_classify(args) -> None:
    from .color_math import load_rgb, save_rgb
    from .convnet.checkpoint import load_checkpoint
    from .lut import apply_lut, read_lut
    from .pipeline.inference import classify_tile, render_class_map, write_probability_dump
    from .stain_norm import load_template, normalize

    if args.template and args.lut:
        raise UsageError("classify: --template and --lut are mutually exclusive")
    spec, params = load_checkpoint(args.model)
    tile = load_rgb(args.input)
    normalizer = None
    if args.template:
        template = load_template(args.template)
        normalizer = lambda img: normalize(img, template)  # noqa: E731
    elif args.lut:
        lut = read_lut(args.lut)
        normalizer = lambda img: apply_lut(img, lut)  # noqa: E731
    class_map = classify_tile(spec, params, tile, normalizer)
    image = render_class_map(class_map, source=tile if args.blend else None)
    with atomic_path(args.out) as tmp:
        save_rgb(image, tmp)
    if args.probs:
        with atomic_path(args.probs) as tmp:
            write_probability_dump(class_map.probabilities, tmp)


def load_mapping_file(path, model_classes: int, truth_names: list[str]):
    """Parse a class grouping file.

    Each line is ``group name = model indices ; truth class names`` with
    comma-separated members. A line whose group name is ``-`` lists the
    unmatched classes of either side.
    """
    from .errors import UnmappedClass
    from .pipeline.evaluation import ClassMapping

    groups, un_pred, un_truth = [], set(), set()
    tidx = {n: i for i, n in enumerate(truth_names)}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, rest = line.partition("=")
            preds, sep2, truths = rest.partition(";")
            if not sep or not sep2 or not name.strip():
                raise MalformedLine(f"{path}:{lineno}: expected 'name = indices ; names', got {line!r}")
            try:
                pset = {int(v) for v in preds.split(",") if v.strip()}
            except ValueError:
                raise MalformedLine(f"{path}:{lineno}: model classes must be integers") from None
            tset = set()
            for t in (v.strip() for v in truths.split(",")):
                if not t:
                    continue
                if t not in tidx:
                    raise UnmappedClass(f"{path}:{lineno}: unknown truth class {t!r}")
                tset.add(tidx[t])
            if any(not 0 <= p < model_classes for p in pset):
                raise UnmappedClass(f"{path}:{lineno}: model class outside 0..{model_classes - 1}")
            if name.strip() == "-":
                un_pred |= pset
                un_truth |= tset
            else:
                groups.append((name.strip(), pset, tset))
    ptable = {p: g for g, (_, ps, _) in enumerate(groups) for p in ps}
    ttable = {t: g for g, (_, _, ts) in enumerate(groups) for t in ts}
    try:
        return ClassMapping(tuple(g[0] for g in groups), ptable, ttable, frozenset(un_pred), frozenset(un_truth))
    except ValueError as exc:
        raise MalformedLine(f"{path}: {exc}") from exc


def cmd_evaluate(args) -> None:
    from .convnet.checkpoint import load_checkpoint
    from .errors import ShapeMismatch
    from .pipeline.data import load_dataset
    from .pipeline.evaluation import evaluate, group_classes
    from .pipeline.training import predict_patches

    spec, params = load_checkpoint(args.model)
    data = load_dataset(args.data)
    probs = predict_patches(spec, params, data.images)
    if args.mapping:
        mapping = load_mapping_file(args.mapping, spec.num_classes, data.class_names)
        probs, labels = group_classes(probs, data.labels, mapping)
        names = list(mapping.groups)
    else:
        if spec.num_classes != data.num_classes:
            raise ShapeMismatch(
                f"model has {spec.num_classes} classes, dataset {data.num_classes}; supply --mapping"
            )
        labels, names = data.labels, data.class_names
    metrics = evaluate(probs.argmax(axis=1), labels, len(names))
    text = metrics.to_text(names)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_grid(args) -> None:
    from .pipeline.data import load_dataset
    from .pipeline.experiment import run_experiment_grid
    from .stain_norm import load_template

    config = _train_config(args)
    grid = run_experiment_grid(
        load_dataset(args.train), load_dataset(args.test), load_template(args.template), config
    )
    if args.out:
        _write_text(args.out, grid.to_text())
    else:
        sys.stdout.write(grid.to_text())


def cmd_synth(args) -> None:
    from .pipeline.data import save_dataset
    from .pipeline.synthetic import REFERENCE_BASIS, SHIFTED_BASIS, SyntheticConfig, generate_synthetic_dataset

    textures = tuple(t.strip() for t in args.textures.split(",")) if args.textures else None
    try:
        cfg = SyntheticConfig(
            classes=args.classes,
            patches_per_class=args.patches_per_class,
            stain_basis=SHIFTED_BASIS if args.palette == "shifted" else REFERENCE_BASIS,
            textures=textures,
            noise_sd=args.noise_sd,
            seed=args.seed,
            slides=args.slides,
            basis_jitter_deg=args.basis_jitter,
            intensity_jitter=args.intensity_jitter,
            concentration_scale=args.concentration_scale,
        )
        cfg.texture_names()
        dataset = generate_synthetic_dataset(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with atomic_dir(args.out) as tmp:
        save_dataset(dataset, tmp)


COMMANDS = {
    "fit-template": cmd_fit_template,
    "normalize": cmd_normalize,
    "bake-lut": cmd_bake_lut,
    "apply-lut": cmd_apply_lut,
    "train": cmd_train,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        _limit_threads(args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"histonorm: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"histonorm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
