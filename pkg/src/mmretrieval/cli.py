"""Operator surface: one executable, subcommands for every pipeline stage.

    mmretrieval synth-data --out data/ --n 320 --seed 7
    mmretrieval train --data data/manifest.jsonl --out runs/base
    mmretrieval encode --checkpoint runs/base/checkpoint --data ... --modality text --out enc/
    mmretrieval index build --checkpoint ... --data ... --out gallery.mmri
    mmretrieval retrieve --index gallery.mmri --query q.mmrt --k 5
    mmretrieval eval --checkpoint ... --data ... --pair text,motion --protocol all
    mmretrieval serve --index gallery.mmri --port 8080
    mmretrieval gradcheck
    mmretrieval ablate --out runs/ablation

Every subcommand echoes its resolved configuration into its output directory
so runs are reproducible from the echo alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, echo_config, resolve_config, train_config_from
from .data import (
    MODALITIES,
    ManifestError,
    SyntheticConfig,
    generate_synthetic_dataset,
    load_manifest,
)
from .engine import EngineError, GalleryIndex, build_index
from .evaluation import (
    EvaluationError,
    ProtocolConfig,
    evaluate,
    format_report_table,
    reports_to_json,
)
from .gradcheck import run_suite, standard_checks
from .pipeline import encode_split, evaluate_pair
from .tensorfile import TensorFormatError, read_tensor, write_tensor
from .trainer import TrainingError, load_checkpoint, train

_ERRORS = (ConfigError, ManifestError, TensorFormatError, TrainingError,
           EngineError, EvaluationError, ValueError)

PROTOCOL_FLAGS = {"all": "all", "all-threshold": "all_threshold",
                  "small-batches": "small_batches"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmretrieval",
        description="Fine-grained multi-modal motion retrieval toolkit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-data", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--modalities", default=",".join(MODALITIES))
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the joint embedding model")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (layered under env and flags)")
    p.add_argument("--profile", choices=("full", "desk"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--lambda-recon", type=float)
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--modalities")
    p.add_argument("--aggregation", choices=("max", "mean"))
    p.add_argument("--alignment-mode", choices=("sequence", "global", "global+sequence"))
    p.add_argument("--no-body-partition", action="store_true")
    p.add_argument("--partition-file",
                   help="JSON file mapping body-part name -> raw column index list")
    p.add_argument("--audio-method", choices=("memory", "avgpool2", "avgpool4", "conv1d"))
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="batch-encode one modality of a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modality", required=True, choices=MODALITIES)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", help="gallery index operations")
    index_sub = p.add_subparsers(dest="index_command")
    pb = index_sub.add_parser("build", help="encode motions and persist a gallery index")
    pb.add_argument("--checkpoint", required=True)
    pb.add_argument("--data", required=True)
    pb.add_argument("--split", default="test", choices=("train", "test"))
    pb.add_argument("--out", required=True, help="index file path (.mmri)")
    pb.set_defaults(func=cmd_index_build)

    p = sub.add_parser("retrieve", help="one-shot query against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True, help="TensorFile of encoded query tokens")
    p.add_argument("--weights", help="TensorFile of query token weights (uniform if omitted)")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="run the retrieval evaluation protocols")
    p.add_argument("--protocol", default="all", choices=tuple(PROTOCOL_FLAGS))
    p.add_argument("--batch", type=int, default=32, help="small-batches batch size")
    p.add_argument("--threshold", type=float, default=0.80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-values", default="1,3,5,10")
    p.add_argument("--scores", help="evaluate a precomputed (Q,N) score-matrix TensorFile")
    p.add_argument("--gallery-sim", help="(N,N) gallery similarity TensorFile (threshold protocol)")
    p.add_argument("--checkpoint", help="evaluate a trained model on a manifest")
    p.add_argument("--data")
    p.add_argument("--pair", default="text,motion", help="query,gallery modalities")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="directory for the JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve retrieval over JSON/HTTP")
    p.add_argument("--index", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run the ablation grid and emit a comparison table")
    p.add_argument("--data", help="4-modal manifest; a synthetic set is generated when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--n", type=int, default=160, help="synthetic dataset size when generating")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    return parser


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_synth_data(args) -> int:
    modalities = tuple(m.strip() for m in args.modalities.split(",") if m.strip())
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise ConfigError(f"unknown modalities: {sorted(unknown)}")
    cfg = SyntheticConfig(n=args.n, modalities=modalities, latent_dim=args.latent_dim,
                          noise=args.noise, seed=args.seed,
                          test_fraction=args.test_fraction)
    ds = generate_synthetic_dataset(args.out, cfg)
    echo_config({"synth": {"n": cfg.n, "modalities": list(modalities),
                           "latent_dim": cfg.latent_dim, "segments": cfg.segments,
                           "lengths": cfg.lengths, "feature_dims": cfg.feature_dims,
                           "noise": cfg.noise, "seed": cfg.seed,
                           "test_fraction": cfg.test_fraction}}, args.out)
    print(f"wrote {len(load_manifest(ds.manifest_path, validate=False).records)} records "
          f"to {ds.manifest_path}")
    return 0


def _train_overrides(args) -> dict:
    train_keys = {"epochs": args.epochs, "batch_size": args.batch_size, "dim": args.dim,
                  "lr_start": args.lr_start, "lr_end": args.lr_end,
                  "lambda_recon": args.lambda_recon, "mask_ratio": args.mask_ratio,
                  "seed": args.seed}
    overrides: dict = {"train": {k: v for k, v in train_keys.items() if v is not None}}
    if args.modalities:
        overrides["train"]["modalities"] = [m.strip() for m in args.modalities.split(",")]
    if args.profile:
        overrides["profile"] = args.profile
    model: dict = {}
    if args.aggregation:
        model["aggregation"] = args.aggregation
    if args.alignment_mode:
        model["alignment_mode"] = args.alignment_mode
    if args.no_body_partition:
        model["body_partition"] = False
    if args.partition_file:
        from .motion import BodyPartition
        model["partition_parts"] = BodyPartition.load(args.partition_file).parts
    if args.audio_method:
        model["audio_method"] = args.audio_method
    if model:
        overrides["model"] = model
    return overrides


def cmd_train(args) -> int:
    resolved = resolve_config(args.config, _train_overrides(args))
    cfg = train_config_from(resolved)
    echo_config(resolved, args.out)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    result = train(args.data, cfg, args.out, resume_from=args.resume,
                   model_overrides=resolved.get("model", {}), log=log)
    print(f"final loss {result.loss_history[-1]:.4f}; "
          f"checkpoint at {result.checkpoint_dir}")
    return 0


def cmd_encode(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    manifest = load_manifest(args.data)
    encoded = encode_split(model, manifest, args.split, (args.modality,))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, sample_id in enumerate(encoded.ids):
        tok_rel = f"{sample_id}_{args.modality}.tokens.mmrt"
        wgt_rel = f"{sample_id}_{args.modality}.weights.mmrt"
        write_tensor(out / tok_rel, encoded.tokens[args.modality][i])
        write_tensor(out / wgt_rel, encoded.weights[args.modality][i])
        records.append({"id": sample_id, "tokens": tok_rel, "weights": wgt_rel})
    (out / "encoded_manifest.json").write_text(json.dumps(
        {"modality": args.modality, "split": args.split,
         "checkpoint_config_hash": ckpt.config_hash, "records": records}, indent=2))
    echo_config({"encode": {"checkpoint": str(args.checkpoint), "data": str(args.data),
                            "modality": args.modality, "split": args.split}}, out)
    print(f"encoded {len(records)} {args.modality} sequences to {out}")
    return 0


def cmd_index_build(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    manifest = load_manifest(args.data)
    encoded = encode_split(model, manifest, args.split, ("motion",))
    index = build_index(encoded.entries("motion"), out_path=args.out,
                        config_hash=ckpt.config_hash,
                        aggregation=model.config.aggregation)
    print(f"indexed {len(index)} motions (C={index.dim}) -> {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    index = GalleryIndex.load(args.index)
    tokens = read_tensor(args.query)
    weights = read_tensor(args.weights) if args.weights else None
    result = index.retrieve(tokens, k=args.k, query_weights=weights,
                            query_id=Path(args.query).stem)
    print(json.dumps({"query_id": result.query_id,
                      "results": [{"id": i, "score": s} for i, s in result.ranked]},
                     indent=2))
    return 0


def cmd_eval(args) -> int:
    k_values = tuple(int(k) for k in args.k_values.split(","))
    cfg = ProtocolConfig(protocol=PROTOCOL_FLAGS[args.protocol],
                         threshold=args.threshold, batch_size=args.batch,
                         k_values=k_values, seed=args.seed)
    if args.scores:
        scores = read_tensor(args.scores)
        gallery_sim = read_tensor(args.gallery_sim) if args.gallery_sim else None
        gt = np.arange(scores.shape[0])
        reports = [evaluate(scores, gt, cfg, gallery_sim=gallery_sim,
                            direction="scores")]
    else:
        if not (args.checkpoint and args.data):
            raise ConfigError("eval needs either --scores or --checkpoint with --data")
        query_mod, gallery_mod = (m.strip() for m in args.pair.split(","))
        ckpt = load_checkpoint(args.checkpoint)
        model = ckpt.build_model()
        manifest = load_manifest(args.data)
        encoded = encode_split(model, manifest, args.split, (query_mod, gallery_mod))
        reports = evaluate_pair(encoded, query_mod, gallery_mod, [cfg],
                                aggregation=model.config.aggregation)
    print(format_report_table(reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(json.dumps(reports_to_json(reports), indent=2))
        echo_config({"eval": {"protocol": cfg.protocol, "threshold": cfg.threshold,
                              "batch_size": cfg.batch_size, "k_values": list(k_values),
                              "seed": cfg.seed, "scores": args.scores,
                              "checkpoint": args.checkpoint, "data": args.data,
                              "pair": args.pair, "split": args.split}}, out)
    return 0


def cmd_serve(args) -> int:
    from .service import RetrievalServer

    index = GalleryIndex.load(args.index)
    server = RetrievalServer(index, host=args.host, port=args.port, verbose=args.verbose)
    print(f"serving {len(index)} motions on http://{args.host}:{server.port} "
          f"(config hash {index.config_hash or 'n/a'})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(standard_checks(), verbose=True)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return 1 if failed else 0


ABLATION_GRID = [
    ("seq-max (ours)", {}),
    ("seq-mean", {"aggregation": "mean"}),
    ("global-only", {"alignment_mode": "global"}),
    ("global+seq-max", {"alignment_mode": "global+sequence"}),
    ("no-body-partition", {"body_partition": False}),
    ("audio-avgpool2", {"audio_method": "avgpool2"}),
    ("audio-avgpool4", {"audio_method": "avgpool4"}),
    ("audio-conv1d", {"audio_method": "conv1d"}),
]


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        manifest_path = Path(args.data)
    else:
        ds = generate_synthetic_dataset(out / "data", SyntheticConfig(
            n=args.n, noise=args.noise, seed=args.seed))
        manifest_path = ds.manifest_path
    manifest = load_manifest(manifest_path)
    echo_config({"ablate": {"data": str(manifest_path), "epochs": args.epochs,
                            "seed": args.seed}}, out)

    results = []
    for name, model_overrides in ABLATION_GRID:
        cfg = train_config_from(resolve_config(cli_overrides={
            "profile": "desk", "train": {"epochs": args.epochs, "seed": args.seed}}))
        run_dir = out / name.replace(" ", "_").replace("(", "").replace(")", "")
        result = train(manifest, cfg, run_dir, model_overrides=model_overrides)
        encoded = encode_split(result.model, manifest, "test",
                               ("motion", "text", "audio"))
        protocol = ProtocolConfig("all")
        t2m = evaluate_pair(encoded, "text", "motion", [protocol],
                            result.model.config.aggregation)[0]
        a2m = evaluate_pair(encoded, "audio", "motion", [protocol],
                            result.model.config.aggregation)[0]
        row = {"variant": name, "final_loss": result.loss_history[-1],
               "t2m_r1": t2m.recall[1], "t2m_r5": t2m.recall[5],
               "t2m_medr": t2m.median_rank,
               "a2m_r1": a2m.recall[1], "a2m_medr": a2m.median_rank}
        results.append(row)
        print(f"{name:<20s} loss {row['final_loss']:7.3f}  "
              f"T2M R@1 {row['t2m_r1']:6.2f} R@5 {row['t2m_r5']:6.2f} MedR {row['t2m_medr']:5.2f}  "
              f"A2M R@1 {row['a2m_r1']:6.2f} MedR {row['a2m_medr']:5.2f}", flush=True)

    (out / "ablation.json").write_text(json.dumps(results, indent=2))
    header = (f"{'variant':<20s} {'loss':>7s}  {'T2M R@1':>8s} {'T2M R@5':>8s} "
              f"{'T2M MedR':>9s}  {'A2M R@1':>8s} {'A2M MedR':>9s}")
    lines = [header, "-" * len(header)]
    for row in results:
        lines.append(f"{row['variant']:<20s} {row['final_loss']:7.3f}  "
                     f"{row['t2m_r1']:8.2f} {row['t2m_r5']:8.2f} {row['t2m_medr']:9.2f}  "
                     f"{row['a2m_r1']:8.2f} {row['a2m_medr']:9.2f}")
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")
    print(f"ablation table written to {out / 'ablation.txt'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
