"""Command-line argument parser for the massl scripts."""

import argparse

from massl import config
from massl import defaults


def int_list(value):
    """Parse "10,20,100" into a tuple of ints."""
    try:
        items = tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {value!r}")
    if not items:
        raise argparse.ArgumentTypeError("expected at least one value")
    return items


def _logging_args():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "--verbose",
        "-v",
        action="count",
        default=0,
        help="Increase the debugging output.",
    )
    parser.add_argument(
        "--quiet", "-q", action="count", default=0, help="Decrease the debugging output"
    )
    parser.add_argument(
        "--log-level",
        choices=["ERROR", "WARNING", "INFO", "DEBUG"],
        default=None,
        help="Set the debugging output level. This will override -q and -v",
    )
    parser.add_argument(
        "--log-file",
        metavar="FILE",
        default=None,
        help="Log file. Default: %s" % defaults.MASSL_LOG_FILE,
    )
    return parser


def _eval_view_args(parser):
    parser.add_argument(
        "--encoder",
        choices=config.ENCODERS,
        default=None,
        help="Encoder to embed with. Default: [eval] eval_encoder of the "
        "checkpoint config (teacher).",
    )
    parser.add_argument(
        "--features",
        choices=["projection", "backbone"],
        default=defaults.DEF_EVAL_FEATURES,
        help="Unit-norm head projections or L2-normalized backbone features. "
        "Default: %s" % defaults.DEF_EVAL_FEATURES,
    )


def get_parser(doc):
    """Parse command-line arguments for the train, eval, ablate and export
    commands.
    """
    rawformatter = argparse.RawDescriptionHelpFormatter
    common = _logging_args()

    parser = argparse.ArgumentParser(description=doc, formatter_class=rawformatter)
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    train = commands.add_parser(
        "train", parents=[common], help="Train an encoder from a config file."
    )
    train.add_argument(
        "-c", "--config", metavar="PATH", required=True, help="INI configuration file."
    )
    train.add_argument("--seed", type=int, default=None, help="Override [train] seed.")
    train.add_argument(
        "--out", metavar="DIR", default=None, help="Override [output] out_dir."
    )
    train.add_argument(
        "--resume",
        metavar="CHECKPOINT",
        default=None,
        help="Continue training from a checkpoint written by an earlier run.",
    )
    train.add_argument(
        "--max-steps",
        type=int,
        default=None,
        help="Stop after this global step (the schedules still span all epochs).",
    )
    train.add_argument(
        "--compact",
        action="store_true",
        help="Write single-precision checkpoints (resume is then not bit-exact).",
    )

    evaluate = commands.add_parser(
        "eval", parents=[common], help="Evaluate frozen features of a checkpoint."
    )
    evaluate.add_argument("--checkpoint", metavar="PATH", required=True)
    evaluate.add_argument(
        "--data",
        metavar="SPEC",
        default=None,
        help="blobs:C=..,per_class=..,d=..,separation=..,noise=..,seed=.. or "
        "csv:PATH. Default: the dataset of the checkpoint config.",
    )
    evaluate.add_argument(
        "--knn-k",
        metavar="LIST",
        type=int_list,
        default=defaults.DEF_KNN_KS,
        help="Comma-separated k values. Default: %s"
        % ",".join(str(k) for k in defaults.DEF_KNN_KS),
    )
    evaluate.add_argument(
        "--knn-temperature",
        type=float,
        default=defaults.DEF_KNN_TEMPERATURE,
        help="Temperature of the k-NN vote weights. Default: %s"
        % defaults.DEF_KNN_TEMPERATURE,
    )
    evaluate.add_argument(
        "--linear", action="store_true", help="Run the linear probe learning-rate sweep."
    )
    evaluate.add_argument(
        "--cluster", action="store_true", help="Report k-means NMI, AMI and ARI."
    )
    evaluate.add_argument(
        "--low-shot",
        metavar="LIST",
        type=int_list,
        default=None,
        help="Shots per class for low-shot linear probes, e.g. 1,2,4.",
    )
    evaluate.add_argument(
        "--self",
        dest="self_reference",
        action="store_true",
        help="Use the same rows as reference set and queries.",
    )
    evaluate.add_argument(
        "--out",
        metavar="FILE",
        default=None,
        help="Result CSV. Default: eval.csv next to the checkpoint.",
    )
    _eval_view_args(evaluate)

    ablate = commands.add_parser(
        "ablate", parents=[common], help="Run a memory ablation sweep."
    )
    ablate.add_argument("-c", "--config", metavar="PATH", required=True)
    ablate.add_argument("--sweep", choices=defaults.SWEEPS, required=True)
    ablate.add_argument(
        "--seeds",
        type=int,
        default=defaults.DEF_ABLATION_SEEDS,
        help="Number of seeds per setting. Default: %s" % defaults.DEF_ABLATION_SEEDS,
    )
    ablate.add_argument(
        "--values",
        metavar="LIST",
        type=int_list,
        default=None,
        help="Sweep values (memory or block sizes) replacing the defaults.",
    )
    ablate.add_argument("--epochs", type=int, default=None, help="Override [train] epochs.")
    ablate.add_argument(
        "--out", metavar="DIR", default=None, help="Override [output] out_dir."
    )

    export = commands.add_parser(
        "export", parents=[common], help="Write embeddings of a dataset to CSV."
    )
    export.add_argument("--checkpoint", metavar="PATH", required=True)
    export.add_argument(
        "--data",
        metavar="SPEC",
        default=None,
        help="Dataset spec as for eval. Default: the full checkpoint dataset.",
    )
    export.add_argument("--out", metavar="FILE", required=True)
    export.add_argument(
        "--no-header", action="store_true", help="Omit the column header row."
    )
    _eval_view_args(export)

    return parser
