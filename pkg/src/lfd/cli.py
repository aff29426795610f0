"""Command-line entry point: ``python -m lfd <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import DatasetError, LFDError
from .experiment import TRAIN_DEGRADE, TRAIN_VIEWS, _map, item_seed
from .mesh import load_obj, save_obj

log = logging.getLogger("lfd")

USAGE_ERROR, DATA_ERROR = 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


# --- helpers ------------------------------------------------------------------

def _mesh_dir(path):
    """Meshes listed in ``manifest.json`` (in order), else every OBJ sorted by name."""
    d = Path(path)
    if not d.is_dir():
        raise DatasetError(f"mesh directory {d} does not exist")
    man = d / "manifest.json"
    if man.exists():
        ids = json.loads(man.read_text())["models"]
    else:
        ids = sorted(p.stem for p in d.glob("*.obj"))
    if not ids:
        raise DatasetError(f"no meshes in {d}")
    return [load_obj(d / f"{m}.obj", model_id=m) for m in ids]


def _lf_files(path):
    p = Path(path)
    files = sorted(p.glob("*.lfd")) if p.is_dir() else [p]
    if not files:
        raise DatasetError(f"no location fields in {p}")
    return files


def _out_dir(path):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- commands -----------------------------------------------------------------

def cmd_gen_data(args, cfg):
    from .procedural import DatasetSpec, desk_spec, gen_procedural_dataset
    spec = (DatasetSpec.load(args.spec) if args.spec else
            desk_spec(args.k or cfg.experiment.n_models, args.separation))
    meshes = gen_procedural_dataset(spec, args.seed)
    out = _out_dir(args.out)
    for m in meshes:
        save_obj(m, out / f"{m.model_id}.obj")
    manifest = {"seed": args.seed, "spec": spec.to_dict(), "models": [m.model_id for m in meshes]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(meshes)} meshes to {out}")


def cmd_render(args, cfg):
    from .experiment import render_views
    from .io import write_lf
    from .render import Camera
    meshes = _mesh_dir(args.meshes)
    views = args.views or cfg.experiment.views
    cam = Camera.default(args.size or cfg.experiment.image_size)
    lfs = render_views(meshes, views, cam, cfg, args.seed, args.stream, args.threads)
    out = _out_dir(args.out)
    for i, lf in enumerate(lfs):
        write_lf(lf, out / f"{lf.model_id}__{i % views:04d}.lfd")
    print(f"wrote {len(lfs)} location fields to {out}")


def cmd_degrade(args, cfg):
    from .degrade import degrade
    from .io import read_lf, write_lf
    files = _lf_files(args.input)
    out = _out_dir(args.out)

    def one(i):
        lf = degrade(read_lf(files[i]), cfg.degrade, item_seed(args.seed, args.stream, i))
        write_lf(lf, out / files[i].name)

    _map(one, range(len(files)), args.threads)
    print(f"wrote {len(files)} degraded fields to {out}")


def cmd_train(args, cfg):
    from .descriptor import TrainSample
    from .io import read_lf, write_checkpoint, write_curve
    from .training import train
    rend_files = _lf_files(args.rendered)
    rendered = [read_lf(f) for f in rend_files]
    ids = sorted({lf.model_id for lf in rendered if lf.model_id})
    if len(ids) < 2:
        raise DatasetError("training needs rendered views of at least two models")
    index = {m: k for k, m in enumerate(ids)}
    samples = [TrainSample(lf, index[lf.model_id]) for lf in rendered]
    if args.predicted:
        by_name = {f.name: lf for f, lf in zip(rend_files, rendered)}
        for f in _lf_files(args.predicted):
            if f.name not in by_name:
                raise DatasetError(f"predicted field {f.name} has no rendered counterpart")
            lf = read_lf(f)
            samples.append(TrainSample(lf, index[lf.model_id], by_name[f.name]))
    size = rendered[0].width
    net = train(samples, cfg.train, seed=args.seed,
                net_cfg=cfg.net.net_config(len(ids), size), loss_cfg=cfg.loss)
    write_checkpoint(net, args.out, ids)
    if args.curve:
        write_curve(net.history, args.curve)
    print(f"trained on {len(samples)} samples of {len(ids)} models; checkpoint {args.out}")


def cmd_bank(args, cfg):
    from .io import read_checkpoint, write_bank
    from .render import Camera
    from .retrieval import build_center_bank, centers_for_unseen
    net, ids = read_checkpoint(args.checkpoint)
    if args.meshes:
        meshes = _mesh_dir(args.meshes)
        bank = centers_for_unseen(net, meshes, args.views or cfg.experiment.unseen_views,
                                  item_seed(args.seed, 1000), Camera.default(net.cfg.input_size),
                                  cfg.pose)
    else:
        if ids is None:
            raise DatasetError("checkpoint carries no model ids; pass --meshes")
        bank = build_center_bank(net, ids)
    write_bank(bank, args.out)
    print(f"wrote bank of {bank.K} models ({bank.provenance}) to {args.out}")


def cmd_retrieve(args, cfg):
    from .descriptor import describe_many
    from .io import read_bank, read_checkpoint, read_lf, write_ranked
    from .retrieval import retrieve_descriptor
    net, _ = read_checkpoint(args.checkpoint)
    bank = read_bank(args.bank)
    files = _lf_files(args.queries)
    lfs = _map(read_lf, files, args.threads)
    F = describe_many(net, lfs)
    rows = [(f.stem, retrieve_descriptor(d, bank, args.k), lf.model_id)
            for f, lf, d in zip(files, lfs, F)]
    write_ranked(rows, args.out)
    print(f"ranked {len(rows)} queries into {args.out}")


def cmd_pose(args, cfg):
    from .io import pose_json, read_lf, write_json
    from .pnp import reprojection_error, sample_correspondences, solve_pnp, solve_pnp_ransac
    from .render import PREDICTED
    lf = read_lf(args.lf)
    n = min(args.n, lf.n_masked)
    corrs = sample_correspondences(lf, n, args.seed)
    use_ransac = args.ransac if args.ransac is not None else lf.domain == PREDICTED
    if use_ransac:
        pose, flags = solve_pnp_ransac(corrs, lf.camera, args.iters, args.threshold, args.seed)
        corrs = corrs.subset(flags)
    else:
        pose = solve_pnp(corrs, lf.camera)
    out = pose_json(pose, reprojection_error(pose, lf.camera, corrs))
    write_json(out, args.out)
    print(f"pose written to {args.out} (rms {out['rms_px']:.3f} px)")


def cmd_eval(args, cfg):
    from .experiment import evaluation_report
    from .io import read_ranked, write_json
    from .metrics import ShapeCache
    rows = read_ranked(args.ranked)
    meshes = _mesh_dir(args.meshes)
    cache = ShapeCache(meshes, args.samples or cfg.experiment.eval_samples,
                       args.resolution or cfg.experiment.eval_resolution)
    report = evaluation_report(rows, cache)
    write_json(report, args.out)
    print(json.dumps(report, sort_keys=True))


def cmd_viz(args, cfg):
    from .io import read_lf, write_viz
    paths = write_viz(read_lf(args.lf), args.out)
    print("wrote " + " ".join(str(p) for p in paths))


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lfd", description="Location-field shape retrieval toolkit")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-data", help="procedural dataset -> OBJ dir + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="number of models (round-robin over families)")
    p.add_argument("--separation", type=float, default=0.02)
    p.add_argument("--spec", help="dataset spec JSON (overrides --k)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("render", help="meshes x sampled poses -> location fields")
    p.add_argument("--meshes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--stream", type=int, default=TRAIN_VIEWS,
                   help="seed stream; use distinct values for training and query views")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("degrade", help="rendered fields -> predicted_sim fields")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stream", type=int, default=TRAIN_DEGRADE)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("train", help="fields -> checkpoint + loss curve")
    p.add_argument("--rendered", required=True)
    p.add_argument("--predicted", help="degraded fields, paired with rendered ones by file name")
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="loss curve CSV")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bank", help="checkpoint [+ unseen meshes] -> center bank")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--meshes", help="embed these meshes by view averaging")
    p.add_argument("--views", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bank)

    p = sub.add_parser("retrieve", help="checkpoint + bank + query fields -> ranked JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("pose", help="location field -> pose JSON")
    p.add_argument("--lf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="correspondences to sample")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ransac", dest="ransac", action="store_true", default=None)
    g.add_argument("--no-ransac", dest="ransac", action="store_false")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--threshold", type=float, default=2.0)
    p.set_defaults(fn=cmd_pose)

    p = sub.add_parser("eval", help="ranked JSONL + meshes -> report JSON")
    p.add_argument("--ranked", required=True)
    p.add_argument("--meshes", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("viz", help="location field -> X, Y, Z PPM images")
    p.add_argument("--lf", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(fn=cmd_viz)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("lfd: error: --threads must be at least 1", file=sys.stderr)
        return USAGE_ERROR
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        args.fn(args, cfg)
    except (LFDError, OSError, ValueError, KeyError) as e:
        print(f"lfd {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
