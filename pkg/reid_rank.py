#!/usr/bin/env python3
"""
reid-rank command line
Runs the ranking stages one at a time or as a configured pipeline

Exit codes: 0 success, 1 IO/system failure, 2 validation or contract failure.
Errors print a single "❌" line to standard error.
"""

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from distance_engine import FusionWeights, joint_distances, negative_count
from evaluation import EvalOptions, evaluate, format_report, write_report
from feature_fusion import conservation_holds, fuse, load_feature_map, provenance_holds, save_feature_map
from gradcheck import run_loss_checks
from reid_dataset import (
    EMBEDDINGS_FILE,
    MANIFEST_FILE,
    load_dataset_dir,
    load_embeddings,
    load_manifest,
    save_embeddings,
    validate_dataset,
)
from reid_errors import ConfigInvalid, InvalidParameter, MissingFile, exit_code_for
from reid_pipeline import (
    DIST_JOINT,
    DIST_QG,
    FUSED_JOINT,
    FUSED_QG,
    IMPROVEMENT_RERANK,
    IMPROVEMENT_SYNTH,
    REPORT_JSON,
    REPORT_TXT,
    RERANK_QG,
    TRACKAVG_QG,
    ReidPipeline,
    claim_outputs,
    compute_distances,
    fuse_stage,
    improvement_run,
    load_config,
    resolve_workers,
)
from rerank import RerankParams, rerank, track_average
from run_manifest import utc_timestamp
from synth import SynthConfig, config_from_dict, generate, write_synth_dataset

GOLDEN_FILE = os.path.join("goldens", "synth_default.json")
GOLDEN_RUNS = 20


def _fail(message: str):
    print(f"❌ {message}", file=sys.stderr)


def cmd_validate(args) -> int:
    dataset = load_dataset_dir(args.dataset)
    report = validate_dataset(dataset.manifest, dataset.embeddings, dataset.meta)
    print(f"📋 {len(dataset.manifest)} items, embeddings {dataset.embeddings.shape}, "
          f"metadata families: {dataset.meta.names() or 'none'}")
    if report.ok:
        print("✅ Dataset is consistent")
        return 0
    for line in report.lines():
        _fail(line)
    return 2


def cmd_dist(args) -> int:
    workers = resolve_workers(args.workers)
    if args.query_emb or args.gallery_emb:
        if not (args.query_emb and args.gallery_emb):
            raise InvalidParameter("--query-emb and --gallery-emb must be given together")
        query = load_embeddings(args.query_emb)
        gallery = load_embeddings(args.gallery_emb)
        paths = claim_outputs(args.out, [DIST_QG, DIST_JOINT], args.force)
        qg, joint = joint_distances(query, gallery, workers)
    else:
        if not args.dataset:
            raise InvalidParameter("dist needs a dataset directory or --query-emb/--gallery-emb")
        names = args.emb or [EMBEDDINGS_FILE]
        dataset = load_dataset_dir(args.dataset, names[0])
        embeddings = [dataset.embeddings] + [load_embeddings(os.path.join(args.dataset, n)) for n in names[1:]]
        paths = claim_outputs(args.out, [DIST_QG, DIST_JOINT], args.force)
        if len(embeddings) > 1:
            print(f"🔍 Averaging distances over {len(embeddings)} embedding files")
        qg, joint = compute_distances(dataset, embeddings, workers)

    save_embeddings(qg, paths[DIST_QG])
    save_embeddings(joint, paths[DIST_JOINT])
    print(f"✅ Distances {qg.shape[0]}x{qg.shape[1]} and {joint.shape[0]}x{joint.shape[1]} written to {args.out}")
    return 0


def cmd_fuse_meta(args) -> int:
    dataset = load_dataset_dir(args.dataset)
    qg = load_embeddings(args.qg)
    joint = load_embeddings(args.joint)
    gamma = FusionWeights.from_pairs(args.gamma or []).gamma
    paths = claim_outputs(args.out, [FUSED_QG, FUSED_JOINT], args.force)

    fused_qg, fused_joint = fuse_stage(dataset, qg, joint, gamma, resolve_workers(args.workers))
    negatives = negative_count(fused_qg) + negative_count(fused_joint)
    if negatives:
        print(f"⚠️ {negatives} negative entries in the fused distances")
    save_embeddings(fused_qg, paths[FUSED_QG])
    save_embeddings(fused_joint, paths[FUSED_JOINT])
    print(f"✅ Fused {len(dataset.meta.names())} metadata families into {args.out}")
    return 0


def cmd_rerank(args) -> int:
    fused = load_embeddings(args.dist)
    joint = load_embeddings(args.joint)
    params = RerankParams(args.k1, args.k2, args.lambda_, args.query_expansion)
    paths = claim_outputs(args.out, [RERANK_QG], args.force)
    out = rerank(fused, joint, params, resolve_workers(args.workers))
    save_embeddings(out, paths[RERANK_QG])
    print(f"✅ Re-ranked {out.shape[0]} probes (k1={params.k1}, k2={params.k2}, lambda={params.lambda_})")
    return 0


def cmd_track_avg(args) -> int:
    manifest = load_manifest(os.path.join(args.dataset, MANIFEST_FILE))
    dist = load_embeddings(args.dist)
    paths = claim_outputs(args.out, [TRACKAVG_QG], args.force)
    save_embeddings(track_average(dist, manifest), paths[TRACKAVG_QG])
    print(f"✅ Track-averaged distances written to {paths[TRACKAVG_QG]}")
    return 0


def _eval_options(args) -> EvalOptions:
    if args.aicity:
        return EvalOptions.aicity()
    return EvalOptions(args.top_n, args.cross_camera)


def cmd_eval(args) -> int:
    manifest = load_manifest(os.path.join(args.dataset, MANIFEST_FILE))
    dist = load_embeddings(args.dist)
    options = _eval_options(args)
    paths = claim_outputs(args.out, [REPORT_TXT, REPORT_JSON], args.force) if args.out else None
    report = evaluate(dist, manifest, options)
    if paths:
        write_report(report, paths[REPORT_TXT], paths[REPORT_JSON])
    else:
        print(format_report(report), end="")
    print(f"📊 mAP {report.mean_ap:.4f}, "
          + ", ".join(f"Rank@{k} {v:.4f}" for k, v in sorted(report.cmc.items())))
    if report.excluded:
        print(f"⚠️ {len(report.excluded)} probes excluded (no relevant gallery item)")
    return 0


def cmd_synth(args) -> int:
    if args.config:
        if not os.path.isfile(args.config):
            raise MissingFile(args.config)
        try:
            with open(args.config, 'r') as f:
                config = config_from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{args.config} is not valid JSON: {e}") from e
    else:
        config = SynthConfig()
    for name in ("seed", "num_identities", "images_per_identity", "dim", "intra_sigma",
                 "inter_sep", "num_cameras", "track_len", "meta_fidelity"):
        value = getattr(args, name)
        if value is not None:
            setattr(config, name, value)
    config.validate()
    claim_outputs(args.out, [MANIFEST_FILE, EMBEDDINGS_FILE, "synth_config.json"], args.force)
    written = write_synth_dataset(config, args.out)
    print(f"🧪 Synthetic dataset: {config.num_identities} identities x {config.images_per_identity} images, "
          f"seed {config.seed}")
    print(f"✅ Wrote {len(written)} files to {args.out}")
    return 0


def cmd_loss_check(args) -> int:
    results = run_loss_checks(range(args.seed, args.seed + args.batches))
    for r in results:
        status = "✅" if r.passed else "❌"
        print(f"{status} {r.name} seed={r.seed} max_rel_err={r.max_relative_error:.2e} resamples={r.resamples}")
    failed = [r for r in results if not r.passed]
    if failed:
        _fail(f"{len(failed)} of {len(results)} gradient checks exceeded tolerance")
        return 2
    print(f"✅ All {len(results)} gradient checks passed")
    return 0


def cmd_fuse_demo(args) -> int:
    if args.global_map or args.local_map:
        if not (args.global_map and args.local_map):
            raise InvalidParameter("--global-map and --local-map must be given together")
        f_global = load_feature_map(args.global_map)
        f_local = load_feature_map(args.local_map)
    else:
        rng = np.random.default_rng(args.seed)
        shape = (args.height, args.width, args.channels)
        f_global = rng.standard_normal(shape)
        f_local = rng.standard_normal(shape)

    names = ["glamor.reid", "counter.reid"]
    paths = claim_outputs(args.out, names + [n + ".json" for n in names], args.force) if args.out else None
    conserved = conservation_holds(f_global, f_local)
    traced = provenance_holds(f_global, f_local)
    print(f"🧪 Feature maps {f_global.shape}: conservation {'holds' if conserved else 'FAILS'}, "
          f"channel provenance {'holds' if traced else 'FAILS'}")
    if paths:
        save_feature_map(fuse(f_global, f_local, "glamor"), paths["glamor.reid"])
        save_feature_map(fuse(f_global, f_local, "counter"), paths["counter.reid"])
    if not (conserved and traced):
        _fail("mask fusion identities do not hold")
        return 2
    return 0


def cmd_pipeline(args) -> int:
    config = load_config(args.config, args.workers)
    if args.dataset:
        config.dataset_dir = args.dataset
    if args.out:
        config.out_dir = args.out
    if args.k1 is not None:
        config.k1 = args.k1
    if args.k2 is not None:
        config.k2 = args.k2
    if args.lambda_ is not None:
        config.lambda_ = args.lambda_
    if args.gamma:
        config.gamma.update(FusionWeights.from_pairs(args.gamma).gamma)
    if args.top_n is not None:
        config.top_n = args.top_n
    if args.cross_camera:
        config.cross_camera = True
    if args.aicity:
        config.top_n, config.cross_camera = 100, True
    ReidPipeline(config).run(force=args.force)
    return 0


def cmd_golden(args) -> int:
    """Freeze the synthetic baselines the regression tests compare against"""
    paths = claim_outputs(os.path.dirname(args.out) or ".", [os.path.basename(args.out)], args.force)
    workers = resolve_workers(args.workers)

    default = generate(SynthConfig(seed=args.seed))
    qg, _ = compute_distances(default, [default.embeddings], workers)
    baseline = evaluate(qg, default.manifest)
    print(f"📊 synth default (seed {args.seed}) raw mAP {baseline.mean_ap:.6f}")

    runs = []
    for seed in range(args.runs):
        raw_map, final_map = improvement_run(seed, workers)
        runs.append({'seed': seed, 'raw_map': raw_map, 'pipeline_map': final_map})
        print(f"🔍 seed {seed}: raw {raw_map:.4f} -> rerank+track-avg {final_map:.4f}")

    golden = {
        'created_utc': utc_timestamp(),
        'synth_default': {
            'seed': args.seed,
            'raw_map': baseline.mean_ap,
            'raw_cmc': {f'rank{k}': v for k, v in sorted(baseline.cmc.items())},
        },
        'improvement': {
            'synth': IMPROVEMENT_SYNTH,
            'rerank': {'k1': IMPROVEMENT_RERANK['k1'], 'k2': IMPROVEMENT_RERANK['k2'],
                       'lambda': IMPROVEMENT_RERANK['lambda_']},
            'runs': runs,
        },
    }
    out_path = paths[os.path.basename(args.out)]
    with open(out_path, 'w') as f:
        json.dump(golden, f, indent=2)
    print(f"✅ Golden values written to {out_path}")
    return 0


def _add_output_flags(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument('--out', required=required, help='output directory')
    parser.add_argument('--force', action='store_true', help='overwrite existing outputs')


def _add_workers_flag(parser: argparse.ArgumentParser):
    parser.add_argument('--workers', type=int, default=None,
                        help='parallel workers (default: $REID_RANK_WORKERS or 1)')


def _add_rerank_flags(parser: argparse.ArgumentParser, with_defaults: bool):
    defaults = RerankParams() if with_defaults else None
    parser.add_argument('--k1', type=int, default=defaults.k1 if defaults else None)
    parser.add_argument('--k2', type=int, default=defaults.k2 if defaults else None)
    parser.add_argument('--lambda', dest='lambda_', type=float, default=defaults.lambda_ if defaults else None)


def _add_eval_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--top-n', type=int, default=None, help='truncate ranked lists')
    parser.add_argument('--cross-camera', action='store_true', help='drop same-camera true matches')
    parser.add_argument('--aicity', action='store_true', help='AI City protocol: top-100, cross-camera')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='reid-rank', description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('validate', help='check a dataset directory for consistency')
    p.add_argument('dataset')
    p.set_defaults(func=cmd_validate)

    p = commands.add_parser('dist', help='probe x gallery and joint distance matrices')
    p.add_argument('dataset', nargs='?')
    p.add_argument('--emb', action='append', help='embedding file inside the dataset (repeat to average models)')
    p.add_argument('--query-emb', help='query embeddings stored separately')
    p.add_argument('--gallery-emb', help='gallery embeddings stored separately')
    _add_workers_flag(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_dist)

    p = commands.add_parser('fuse-meta', help='add weighted metadata distances')
    p.add_argument('dataset')
    p.add_argument('--qg', required=True, help='probe x gallery distances')
    p.add_argument('--joint', required=True, help='joint distances, queries then gallery')
    p.add_argument('--gamma', action='append', metavar='FAMILY=VALUE')
    _add_workers_flag(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_fuse_meta)

    p = commands.add_parser('rerank', help='k-reciprocal re-ranking')
    p.add_argument('--dist', required=True, help='probe x gallery (fused) distances')
    p.add_argument('--joint', required=True, help='joint distances used for neighbour sets')
    _add_rerank_flags(p, with_defaults=True)
    p.add_argument('--query-expansion', action='store_true', help='average R* indicators over k2 neighbours')
    _add_workers_flag(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_rerank)

    p = commands.add_parser('track-avg', help='average distances within gallery tracks')
    p.add_argument('dataset')
    p.add_argument('--dist', required=True)
    _add_output_flags(p)
    p.set_defaults(func=cmd_track_avg)

    p = commands.add_parser('eval', help='mAP and CMC for a probe x gallery matrix')
    p.add_argument('dataset')
    p.add_argument('--dist', required=True)
    _add_eval_flags(p)
    _add_output_flags(p, required=False)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser('synth', help='write a seeded synthetic dataset')
    p.add_argument('--config', help='JSON file with SynthConfig fields')
    p.add_argument('--seed', type=int)
    p.add_argument('--num-identities', type=int)
    p.add_argument('--images-per-identity', type=int)
    p.add_argument('--dim', type=int)
    p.add_argument('--intra-sigma', type=float)
    p.add_argument('--inter-sep', type=float)
    p.add_argument('--num-cameras', type=int)
    p.add_argument('--track-len', type=int)
    p.add_argument('--meta-fidelity', type=float)
    _add_output_flags(p)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser('loss-check', help='finite-difference gradient checks of the loss kernels')
    p.add_argument('--seed', type=int, default=0, help='first seed')
    p.add_argument('--batches', type=int, default=20, help='seeded batches per loss')
    p.set_defaults(func=cmd_loss_check)

    p = commands.add_parser('fuse-demo', help='mask fusion conservation check')
    p.add_argument('--global-map', help='global feature map (.reid with .json sidecar)')
    p.add_argument('--local-map', help='local feature map (.reid with .json sidecar)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--height', type=int, default=4)
    p.add_argument('--width', type=int, default=4)
    p.add_argument('--channels', type=int, default=8)
    _add_output_flags(p, required=False)
    p.set_defaults(func=cmd_fuse_demo)

    p = commands.add_parser('pipeline', help='run dist, fuse-meta, rerank, track-avg and eval from a config file')
    p.add_argument('config')
    p.add_argument('--dataset', help='override dataset_dir')
    _add_rerank_flags(p, with_defaults=False)
    p.add_argument('--gamma', action='append', metavar='FAMILY=VALUE')
    _add_eval_flags(p)
    _add_workers_flag(p)
    _add_output_flags(p, required=False)
    p.set_defaults(func=cmd_pipeline)

    p = commands.add_parser('golden', help='freeze synthetic baseline values')
    p.add_argument('--seed', type=int, default=42)
    p.add_argument('--out', default=GOLDEN_FILE)
    p.add_argument('--runs', type=int, default=GOLDEN_RUNS, help='seeds for the rerank improvement runs')
    p.add_argument('--force', action='store_true')
    _add_workers_flag(p)
    p.set_defaults(func=cmd_golden)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            raise
        _fail(str(e))
        return code


if __name__ == "__main__":
    sys.exit(main())
