#!/usr/bin/env python
"""Memory-augmented self-supervised training on vector data.

    python -m massl.cli train --config etc/desk.ini
    python -m massl.cli eval --checkpoint runs/final.mssl --knn-k 10,20,100,200
    python -m massl.cli ablate --config etc/desk.ini --sweep sampling
    python -m massl.cli export --checkpoint runs/final.mssl --out emb.csv

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from massl import checkpoint
from massl import config
from massl import data
from massl import defaults
from massl import errors
from massl import evalkit
from massl import loggingconfig
from massl import memory
from massl import model
from massl import numkernel
from massl import runsdb
from massl import trainer
from massl.masslargs import get_parser

LOGGER = logging.getLogger("massl")

ABLATION_FIELDS = (
    "sweep",
    "setting",
    "seed",
    "knn",
    "collapsed",
    "feature_std",
    "entropy_ratio",
)
# Queries scored against the memory for the eval-time diagnostics.
DIAGNOSTIC_ROWS = 256


def worker_threads():
    """Worker thread cap from MASSL_THREADS (default 1)."""
    raw = os.environ.get(defaults.THREADS_ENV_VAR, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise errors.ConfigError(f"{defaults.THREADS_ENV_VAR} must be an integer, got {raw!r}")
    if threads < 1:
        raise errors.ConfigError(f"{defaults.THREADS_ENV_VAR} must be >= 1, got {threads}")
    return threads


def write_rows(path, rows, fieldnames):
    with open(path, "w", newline="") as csv_output:
        writer = csv.DictWriter(csv_output, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def embed(ckpt, dataset, encoder="teacher", features="projection"):
    """Frozen features of ``dataset`` from one of the checkpoint encoders."""
    if dataset.dim != ckpt.input_dim:
        raise errors.DimMismatch(
            f"checkpoint expects {ckpt.input_dim}-d inputs, data has {dataset.dim}"
        )
    params = ckpt.teacher if encoder == "teacher" else ckpt.student
    return model.encode(params, dataset.features, features=features)


def memory_diagnostics(ckpt, projections):
    """Collapse diagnostics of ``projections`` scored against the memory."""
    cfg = ckpt.config
    plan = memory.sample_blocks(
        cfg.memory_size, cfg.block_size, cfg.strategy, np.random.default_rng(cfg.seed)
    )
    rows = memory.gather_plan(ckpt.memory, plan)
    sample = projections[:DIAGNOSTIC_ROWS]
    logits = np.einsum("nd,bkd->nbk", sample, rows)
    dists = numkernel.tempered_softmax(logits, cfg.tau_t_end)
    return evalkit.collapse_diagnostics(dists, projections)


def evaluation_sets(ckpt, data_spec=None, self_reference=False):
    """(reference, queries) for evaluation.

    Without ``data_spec`` the checkpoint config dataset is rebuilt and its
    train split is the reference set. ``self_reference`` uses the reference
    rows as queries.
    """
    cfg = ckpt.config
    if data_spec is None:
        dataset = trainer.load_dataset(cfg)
    else:
        dataset = data.parse_data_spec(data_spec)
    if self_reference:
        if data_spec is None:
            dataset, _ = data.split(dataset, cfg.test_fraction, cfg.data_seed)
        return dataset, dataset
    return data.split(dataset, cfg.test_fraction, cfg.data_seed)


def evaluate(
    ckpt,
    reference,
    queries,
    ks=defaults.DEF_KNN_KS,
    knn_temperature=defaults.DEF_KNN_TEMPERATURE,
    linear=False,
    cluster=False,
    low_shot=None,
    encoder=None,
    features=defaults.DEF_EVAL_FEATURES,
):
    """Run the requested probes and return one result row (a dict)."""
    encoder = encoder or ckpt.config.eval_encoder
    ref_feats = embed(ckpt, reference, encoder, features)
    query_feats = embed(ckpt, queries, encoder, features)
    row = {
        "step": ckpt.step,
        "encoder": encoder,
        "features": features,
        "n_reference": len(reference),
        "n_query": len(queries),
    }
    knn = evalkit.knn_sweep(
        ref_feats, reference.labels, query_feats, queries.labels, ks, knn_temperature
    )
    for k in ks:
        row[f"knn_k{k}"] = knn[k]
        LOGGER.info("k-NN (k=%s): %.4f", k, knn[k])
    if linear:
        best_lr, acc, _ = evalkit.linear_probe_sweep(
            ref_feats, reference.labels, query_feats, queries.labels
        )
        row["linear_acc"] = acc
        row["linear_lr"] = best_lr
        LOGGER.info("Linear probe: %.4f (lr %s)", acc, best_lr)
    if cluster:
        nmi, ami, ari = evalkit.clustering_metrics(
            query_feats, queries.labels, queries.num_classes, ckpt.config.seed
        )
        row.update({"nmi": nmi, "ami": ami, "ari": ari})
        LOGGER.info("Clustering: NMI %.4f, AMI %.4f, ARI %.4f", nmi, ami, ari)
    for shots in low_shot or ():
        mean, std = evalkit.low_shot_probe(
            ref_feats, reference.labels, query_feats, queries.labels, shots
        )
        row[f"low_shot_{shots}_mean"] = mean
        row[f"low_shot_{shots}_std"] = std
    projections = (
        query_feats
        if features == "projection"
        else embed(ckpt, queries, encoder, "projection")
    )
    diag = memory_diagnostics(ckpt, projections)
    row.update(
        {
            "feature_std": diag.feature_std,
            "target_entropy": diag.target_entropy,
            "entropy_ratio": diag.entropy_ratio,
            "effective_rank": diag.effective_rank,
            "collapsed": diag.collapsed,
        }
    )
    return row


def train_main(config_file, seed=None, out_dir=None, resume=None, max_steps=None, compact=False):
    cfg = config.load_config(config_file, seed=seed, out_dir=out_dir)
    train_set, _ = trainer.build_dataset(cfg)
    state = checkpoint.load_checkpoint(resume) if resume else None
    state = trainer.train(
        cfg,
        train_set,
        state=state,
        max_steps=max_steps,
        precision="f4" if compact else "f8",
    )
    LOGGER.info("Training finished at step %s, output in %s", state.step, cfg.out_dir)
    return errors.EXIT_OK


def eval_main(
    checkpoint_file,
    data_spec=None,
    ks=defaults.DEF_KNN_KS,
    knn_temperature=defaults.DEF_KNN_TEMPERATURE,
    linear=False,
    cluster=False,
    low_shot=None,
    self_reference=False,
    encoder=None,
    features=defaults.DEF_EVAL_FEATURES,
    out_file=None,
):
    ckpt = checkpoint.load_checkpoint(checkpoint_file)
    reference, queries = evaluation_sets(ckpt, data_spec, self_reference)
    row = evaluate(
        ckpt,
        reference,
        queries,
        ks=ks,
        knn_temperature=knn_temperature,
        linear=linear,
        cluster=cluster,
        low_shot=low_shot,
        encoder=encoder,
        features=features,
    )
    out_file = out_file or os.path.join(os.path.dirname(checkpoint_file), "eval.csv")
    write_rows(out_file, [row], list(row))
    LOGGER.info("Evaluation written to %s", out_file)
    return errors.EXIT_OK


def sweep_runs(cfg, sweep, values=None):
    """(setting, TrainConfig without seed) for every point of a sweep."""
    if sweep == "memory-size":
        return [
            (
                str(k),
                cfg.replace(
                    memory_size=k,
                    block_size=defaults.MEMORY_SWEEP_BLOCK_SIZE,
                    batch_size=defaults.MEMORY_SWEEP_BATCH_SIZE,
                ),
            )
            for k in values or defaults.MEMORY_SWEEP_VALUES
        ]
    if sweep == "block-size":
        return [
            (str(n), cfg.replace(block_size=n))
            for n in values or defaults.BLOCK_SWEEP_VALUES
        ]
    if sweep == "sampling":
        return [
            (f"{strategy.value}/{n}", cfg.replace(block_size=n, sampling=strategy.value))
            for n in values or defaults.SAMPLING_SWEEP_VALUES
            for strategy in memory.SamplingStrategy
        ]
    raise errors.ConfigError(f"unknown sweep {sweep!r}")


def run_one(run_cfg, run_dir):
    """Train one ablation run and return its k-NN and collapse results."""
    reference, queries = trainer.build_dataset(run_cfg)
    state = trainer.train(run_cfg, reference, out_dir=run_dir)
    row = evaluate(
        state,
        reference,
        queries,
        ks=(defaults.ABLATION_KNN_K,),
        encoder=run_cfg.eval_encoder,
    )
    return {
        "knn": row[f"knn_k{defaults.ABLATION_KNN_K}"],
        "collapsed": row["collapsed"],
        "feature_std": row["feature_std"],
        "entropy_ratio": row["entropy_ratio"],
    }


def ablate_main(config_file, sweep, seeds=defaults.DEF_ABLATION_SEEDS, values=None, epochs=None, out_dir=None):
    cfg = config.load_config(config_file, epochs=epochs, out_dir=out_dir)
    if seeds < 1:
        raise errors.ConfigError(f"--seeds must be >= 1, got {seeds}")
    runs = sweep_runs(cfg, sweep, values)
    for _, run_cfg in runs:
        run_cfg.validate()
    seed_list = [cfg.seed + s for s in range(seeds)]
    configs = dict(runs)
    sweep_dir = os.path.join(cfg.out_dir, f"ablation-{sweep}")
    os.makedirs(sweep_dir, exist_ok=True)
    session = runsdb.init(os.path.join(sweep_dir, runsdb.RUNS_DB_FILE))
    todo = runsdb.pending(session, sweep, list(configs), seed_list)
    LOGGER.info("Ablation %s: %s runs to do, %s threads", sweep, len(todo), worker_threads())

    failures = 0
    with ThreadPoolExecutor(max_workers=worker_threads()) as executor:
        futures = []
        for setting, seed in todo:
            run_cfg = configs[setting].replace(seed=seed)
            run_dir = os.path.join(sweep_dir, setting.replace("/", "-"), f"seed-{seed}")
            runsdb.set_status_in_progress(session, sweep, setting, seed)
            futures.append((setting, seed, executor.submit(run_one, run_cfg, run_dir)))
        # Results are recorded in submission order.
        for setting, seed, future in futures:
            try:
                result = future.result()
            except Exception as err:
                LOGGER.exception("Ablation run %s=%s seed %s failed: %s", sweep, setting, seed, err)
                runsdb.set_status_error(session, sweep, setting, seed, err)
                failures += 1
                continue
            runsdb.set_status_complete(session, sweep, setting, seed, result)

    rows = []
    for setting in configs:
        for seed in seed_list:
            run = runsdb.get_run(session, sweep, setting, seed)
            if run.status == runsdb.StatusEnum.STATUS_COMPLETE:
                rows.append(run.result_row())
    out_file = write_rows(os.path.join(sweep_dir, f"ablation-{sweep}.csv"), rows, ABLATION_FIELDS)
    LOGGER.info("Ablation results written to %s", out_file)
    if failures:
        return errors.ERR_RUNTIME
    return errors.EXIT_OK


def export_main(checkpoint_file, out_file, data_spec=None, encoder=None, features=defaults.DEF_EVAL_FEATURES, header=True):
    ckpt = checkpoint.load_checkpoint(checkpoint_file)
    if data_spec is None:
        dataset = trainer.load_dataset(ckpt.config)
    else:
        dataset = data.parse_data_spec(data_spec)
    feats = embed(ckpt, dataset, encoder or ckpt.config.eval_encoder, features)
    data.write_csv(
        data.Dataset(feats, dataset.labels, dataset.num_classes), out_file, header=header
    )
    LOGGER.info("Wrote %s embeddings of dimension %s to %s", feats.shape[0], feats.shape[1], out_file)
    return errors.EXIT_OK


def run_command(args):
    if args.command == "train":
        return train_main(
            args.config,
            seed=args.seed,
            out_dir=args.out,
            resume=args.resume,
            max_steps=args.max_steps,
            compact=args.compact,
        )
    if args.command == "eval":
        return eval_main(
            args.checkpoint,
            data_spec=args.data,
            ks=args.knn_k,
            knn_temperature=args.knn_temperature,
            linear=args.linear,
            cluster=args.cluster,
            low_shot=args.low_shot,
            self_reference=args.self_reference,
            encoder=args.encoder,
            features=args.features,
            out_file=args.out,
        )
    if args.command == "ablate":
        return ablate_main(
            args.config,
            args.sweep,
            seeds=args.seeds,
            values=args.values,
            epochs=args.epochs,
            out_dir=args.out,
        )
    return export_main(
        args.checkpoint,
        args.out,
        data_spec=args.data,
        encoder=args.encoder,
        features=args.features,
        header=not args.no_header,
    )


def main(argv=None):
    """Primary entry point: parse ``argv``, run the command, return an exit code."""
    args = get_parser(__doc__).parse_args(argv)
    log_level = loggingconfig.set_log_level(args.log_level, args.quiet, args.verbose)
    loggingconfig.setup(log_level, args.log_file or defaults.MASSL_LOG_FILE)
    try:
        with threadpool_limits(limits=worker_threads()):
            return run_command(args)
    except errors.ConfigError as err:
        LOGGER.error("%s: %s", errors.error_lookup(errors.ERR_CONFIG), err)
        return errors.ERR_CONFIG
    except (errors.MasslError, OSError) as err:
        LOGGER.error("%s: %s", errors.error_lookup(errors.ERR_RUNTIME), err)
        return errors.ERR_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
