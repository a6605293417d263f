"""Command-line harness: dataset generation, training, sweeps, ablations.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
CSV goes to stdout unless --out is given.
"""

from __future__ import annotations

import argparse
import sys

from .errors import DataError, NumericError, ShapeError, UsageError

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sram", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset file")
    gen.add_argument("--classes", type=int, default=6, help="number of behavior classes (1-6)")
    gen.add_argument("--agents", type=int, default=6)
    gen.add_argument("--frames", type=int, default=20)
    gen.add_argument("--feat-dim", type=int, default=16)
    gen.add_argument("--clips", type=int, default=2400, help="training clips")
    gen.add_argument("--test-clips", type=int, default=0, help="test clips (needs --test-out)")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--arena", type=float, default=10.0)
    gen.add_argument("--ambiguity", type=float, default=0.2)
    gen.add_argument("--speed", type=float, default=0.4)
    gen.add_argument("--pos-noise", type=float, default=0.05)
    gen.add_argument("--feat-noise", type=float, default=0.1)
    gen.add_argument("--out", required=True)
    gen.add_argument("--test-out", default=None)

    train = sub.add_parser("train", help="train a model on generated data")
    train.add_argument("--train", required=True, dest="train_path")
    train.add_argument("--test", required=True, dest="test_path")
    train.add_argument("--model-out", required=True)
    train.add_argument("--history-out", default=None)
    _add_train_flags(train)

    ev = sub.add_parser("eval", help="accuracy sweep over observation ratios")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--ratios", default=None, help="comma list, default 0.1..1.0")
    ev.add_argument("--out", default=None)

    ab = sub.add_parser("ablate", help="train and compare ablation variants")
    ab.add_argument("--train", required=True, dest="train_path")
    ab.add_argument("--test", required=True, dest="test_path")
    ab.add_argument("--variants", default="full,no-reg,no-gan,no-rec",
                    help="comma list of full,no-reg,no-gan,no-rec,K=<n>")
    ab.add_argument("--out", default=None)
    _add_train_flags(ab)

    pm = sub.add_parser("posmetrics", help="displacement errors vs the persistence baseline")
    pm.add_argument("--model", required=True)
    pm.add_argument("--data", required=True)
    pm.add_argument("--ratio", type=float, default=0.3)
    pm.add_argument("--out", default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the training objective")
    gc.add_argument("--seed", type=int, default=3)
    gc.add_argument("--h", type=float, default=1e-5)

    return parser


def _add_train_flags(parser) -> None:
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--rec-epochs", type=int, default=10)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--pos-hidden", type=int, default=64)
    parser.add_argument("--k-stages", type=int, default=5)
    parser.add_argument("--d2-hidden", type=int, default=128)


def _write(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as fh:
            fh.write(text)


def sweep_csv(result) -> str:
    lines = ["ratio,accuracy"]
    for ratio, acc in result.rows:
        lines.append(f"{ratio:.1f},{acc:.6f}")
    lines.append(f"mean,{result.mean:.6f}")
    return "\n".join(lines) + "\n"


def ablate_csv(results) -> str:
    from .evaluation import ABLATION_REPORT_RATIOS

    lines = ["variant," + ",".join(f"acc@{r:.1f}" for r in ABLATION_REPORT_RATIOS) + ",mean"]
    for variant, sweep in results:
        cells = [f"{sweep.accuracy_at(r):.6f}" for r in ABLATION_REPORT_RATIOS]
        lines.append(f"{variant}," + ",".join(cells) + f",{sweep.mean:.6f}")
    return "\n".join(lines) + "\n"


def posmetrics_csv(rows) -> str:
    lines = ["method,fde,ade"]
    for method, metrics in rows:
        lines.append(f"{method},{metrics.fde:.6f},{metrics.ade:.6f}")
    return "\n".join(lines) + "\n"


def history_csv(history) -> str:
    from .training import RATIO_GRID

    header = "epoch,l_rec,l_gan,l_cls,l_reg,d2_loss," + ",".join(
        f"acc@{r:.1f}" for r in RATIO_GRID)
    lines = [header]
    for rec in history.epochs:
        b = rec.losses
        accs = ",".join(
            f"{rec.accuracy[r]:.6f}" if r in rec.accuracy else "" for r in RATIO_GRID)
        lines.append(
            f"{rec.epoch},{b.l_rec:.6f},{b.l_gan:.6f},{b.l_cls:.6f},{b.l_reg:.6f},"
            f"{b.d2_loss:.6f},{accs}")
    return "\n".join(lines) + "\n"


def _cmd_gen(args) -> int:
    from .synthetic import CLASS_NAMES, DatasetSpec, generate_dataset

    if not 1 <= args.classes <= len(CLASS_NAMES):
        raise DataError(f"--classes must be in [1, {len(CLASS_NAMES)}]")
    if args.test_clips and not args.test_out:
        raise UsageError("--test-clips requires --test-out")
    spec = DatasetSpec(
        classes=CLASS_NAMES[:args.classes],
        n_train=args.clips,
        n_test=args.test_clips,
        n_agents=args.agents,
        n_frames=args.frames,
        feat_dim=args.feat_dim,
        arena=args.arena,
        ambiguity=args.ambiguity,
        speed=args.speed,
        position_noise=args.pos_noise,
        feature_noise=args.feat_noise,
        seed=args.seed,
    )
    generate_dataset(spec, args.out, args.test_out if args.test_clips else None)
    return 0


def _configs_from_args(args, dataset):
    from .model import ModelConfig
    from .training import TrainConfig

    model_cfg = ModelConfig(
        n_classes=dataset.n_classes,
        feat_dim=dataset.feat_dim,
        hidden=args.hidden,
        pos_hidden=args.pos_hidden,
        k_stages=args.k_stages,
        d2_hidden=args.d2_hidden,
        seed=args.seed,
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        recognition_epochs=args.rec_epochs,
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch,
        seed=args.seed,
    )
    return model_cfg, train_cfg


def _cmd_train(args) -> int:
    from .model import SramModel
    from .synthetic import load_dataset
    from .training import fit, train_recognition

    train_ds = load_dataset(args.train_path)
    test_ds = load_dataset(args.test_path)
    model_cfg, train_cfg = _configs_from_args(args, train_ds)
    model = SramModel(model_cfg)
    model.recognition = train_recognition(train_ds, model_cfg, train_cfg)
    history = fit(model, train_ds, test_ds, train_cfg)
    model.save(args.model_out)
    if args.history_out:
        _write(history_csv(history), args.history_out)
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .model import SramModel
    from .synthetic import load_dataset
    from .training import RATIO_GRID

    model = SramModel.load(args.model)
    dataset = load_dataset(args.data)
    if args.ratios is None:
        ratios = RATIO_GRID
    else:
        try:
            ratios = tuple(float(r) for r in args.ratios.split(","))
        except ValueError as exc:
            raise UsageError(f"bad --ratios value: {exc}") from exc
    _write(sweep_csv(evaluate(model, dataset, ratios)), args.out)
    return 0


def _cmd_ablate(args) -> int:
    from .evaluation import ablate
    from .synthetic import load_dataset

    train_ds = load_dataset(args.train_path)
    test_ds = load_dataset(args.test_path)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise UsageError("no ablation variants given")
    model_cfg, train_cfg = _configs_from_args(args, train_ds)
    results = ablate(train_ds, test_ds, variants, model_cfg, train_cfg)
    _write(ablate_csv(results), args.out)
    return 0


def _cmd_posmetrics(args) -> int:
    from .evaluation import position_metrics
    from .model import SramModel
    from .synthetic import load_dataset

    model = SramModel.load(args.model)
    dataset = load_dataset(args.data)
    rows = [
        ("model", position_metrics(model, dataset, args.ratio, "model")),
        ("persistence", position_metrics(model, dataset, args.ratio, "persistence")),
    ]
    _write(posmetrics_csv(rows), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    from .training import full_objective_gradcheck

    err = full_objective_gradcheck(seed=args.seed, h=args.h)
    print(f"max relative error: {err:.3e}")
    if err >= GRADCHECK_TOLERANCE:
        raise NumericError(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOLERANCE:.0e}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "posmetrics": _cmd_posmetrics,
    "gradcheck": _cmd_gradcheck,
}


def run_cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return 1
    except (DataError, ShapeError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return 2
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 3


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
