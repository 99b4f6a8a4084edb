"""Command-line entry point wiring all modules together.

Subcommands: gen, encode, decode, train, infer, eval, ablate, selftest.
Settings resolve with precedence defaults < config file < flags; the fully
resolved configuration is echoed into the output directory so any run can be
reproduced from its artifacts.

Exit codes: 0 success, 2 usage errors (unknown flags/subcommands), 3
unreadable or missing files, 4 invalid or conflicting configuration values.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import torch

from . import codec, datagen, graph as graphmod, inference, metrics, model as modelmod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


#: Every tunable setting with its default. Config files and flags both use
#: these names; booleans accept true/false in either source.
DEFAULTS: dict = {
    # vocabulary / sequence layout
    "num_bins": 192,
    "max_vertices": 32,
    "vertex_len": codec.DEFAULT_VERTEX_LEN,
    "edge_len": codec.DEFAULT_EDGE_LEN,
    "order": "dfs",
    "order_seed": 0,
    # corpus generation
    "seed": 0,
    "num_scenes": 2000,
    "gen_min_vertices": 3,
    "gen_max_vertices": 12,
    "fork_prob": 0.18,
    "merge_prob": 0.18,
    "curvature_scale": 3.0,
    "raster_h": 64,
    "raster_w": 64,
    "noise_std": 0.05,
    "flip": True,
    "rotate": True,
    "scale": True,
    # model
    "num_layers": 6,
    "embed_dim": 128,
    "num_heads": 8,
    "feedforward_dim": 512,
    "patch_size": 8,
    "dropout": 0.0,
    "cond_dropout": 0.15,
    # training
    "lr": 2e-4,
    "weight_decay": 0.01,
    "batch_size": 32,
    "epochs": 40,
    "w_term": 0.5,
    "log_every": 10,
    "checkpoint_every": 0,
    "holdout": 0,
    "augment": False,
    "augment_copies": 7,
    # sampling
    "alpha_c": 4.0,
    "nucleus_p": 0.95,
    "temperature": 1.0,
    "grammar_mask": True,
    "greedy": False,
    # evaluation
    "threshold": 1.0,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"config: {key} expects a boolean, got {raw!r}", EXIT_CONFIG)
    try:
        return type(default)(raw)
    except ValueError:
        raise CliError(
            f"config: {key} expects {type(default).__name__}, got {raw!r}", EXIT_CONFIG
        )


def read_config_file(path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}", EXIT_IO)
    out: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, ln in enumerate(f, 1):
            s = ln.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise CliError(f"{path}:{lineno}: expected key=value, got {s!r}", EXIT_CONFIG)
            k, v = s.split("=", 1)
            k = k.strip()
            if k == "order":
                out[k] = v.strip()
                continue
            if k not in DEFAULTS:
                raise CliError(f"{path}:{lineno}: unknown setting {k!r}", EXIT_CONFIG)
            out[k] = _coerce(k, v.strip())
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit command-line flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["order"] not in ("dfs", "bfs", "coord_xy", "random"):
        raise CliError(f"unknown serialization order {cfg['order']!r}", EXIT_CONFIG)
    if 2 * cfg["gen_max_vertices"] + 1 > cfg["vertex_len"]:
        raise CliError(
            "vertex_len too small for gen_max_vertices (needs 2*n+1 slots)", EXIT_CONFIG
        )
    if cfg["gen_max_vertices"] > cfg["max_vertices"]:
        raise CliError("gen_max_vertices exceeds the vocabulary's max_vertices", EXIT_CONFIG)
    if cfg["augment_copies"] < 0:
        raise CliError("augment_copies must be >= 0", EXIT_CONFIG)
    return cfg


def echo_config(cfg: dict, out_dir, quiet: bool) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)]
    with open(os.path.join(out_dir, "resolved.cfg"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    if not quiet:
        print("resolved config: " + " ".join(lines))


def _vocab(cfg: dict) -> codec.VocabSpec:
    return codec.VocabSpec.create(cfg["num_bins"], cfg["max_vertices"])


def _order(cfg: dict) -> codec.SerializationOrder:
    return codec.SerializationOrder.parse(cfg["order"], cfg.get("order_seed", 0))


def _gen_config(cfg: dict) -> datagen.GenConfig:
    return datagen.GenConfig(
        seed=cfg["seed"],
        num_scenes=cfg["num_scenes"],
        min_vertices=cfg["gen_min_vertices"],
        max_vertices=cfg["gen_max_vertices"],
        fork_prob=cfg["fork_prob"],
        merge_prob=cfg["merge_prob"],
        curvature_scale=cfg["curvature_scale"],
        raster_h=cfg["raster_h"],
        raster_w=cfg["raster_w"],
        noise_std=cfg["noise_std"],
        flip=cfg["flip"],
        rotate=cfg["rotate"],
        scale=cfg["scale"],
    )


def _model_config(cfg: dict) -> modelmod.ModelConfig:
    return modelmod.ModelConfig(
        num_layers=cfg["num_layers"],
        embed_dim=cfg["embed_dim"],
        num_heads=cfg["num_heads"],
        feedforward_dim=cfg["feedforward_dim"],
        patch_size=cfg["patch_size"],
        dropout=cfg["dropout"],
        cond_dropout=cfg["cond_dropout"],
        raster_h=cfg["raster_h"],
        raster_w=cfg["raster_w"],
        vertex_len=cfg["vertex_len"],
        edge_len=cfg["edge_len"],
    )


def _sampler_config(cfg: dict) -> inference.SamplerConfig:
    return inference.SamplerConfig(
        alpha_c=cfg["alpha_c"],
        nucleus_p=cfg["nucleus_p"],
        temperature=cfg["temperature"],
        seed=cfg["seed"],
        grammar_mask=cfg["grammar_mask"],
        greedy=cfg["greedy"],
    )


def _require_file(path, kind: str) -> None:
    if not os.path.isfile(path):
        raise CliError(f"{kind} not found: {path}", EXIT_IO)


def _require_dir(path, kind: str) -> None:
    if not os.path.isdir(path):
        raise CliError(f"{kind} not found: {path}", EXIT_IO)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    echo_config(cfg, args.out, args.quiet)
    ids = datagen.write_corpus(
        args.out, _gen_config(cfg), _vocab(cfg), _order(cfg), cfg["vertex_len"], cfg["edge_len"]
    )
    if not args.quiet:
        print(f"wrote {len(ids)} scenes to {args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = resolve_config(args)
    _require_file(args.graph, "graph file")
    g = graphmod.load_graph(args.graph)
    seq = codec.encode(g, _vocab(cfg), _order(cfg), cfg["vertex_len"], cfg["edge_len"])
    codec.save_sequence(seq, _vocab(cfg), args.out)
    if not args.quiet:
        print(f"encoded {len(g.vertices)} vertices / {len(g.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = resolve_config(args)
    _require_file(args.seq, "sequence file")
    seq, vocab = codec.load_sequence(args.seq)
    g, diag = codec.decode(seq, vocab, graphmod.DEFAULT_EXTENT)
    graphmod.save_graph(g, args.out)
    if not args.quiet:
        print(
            f"decoded {len(g.vertices)} vertices / {len(g.edges)} edges "
            f"(diagnostics total {diag.total()}) -> {args.out}"
        )
    return EXIT_OK


def _load_corpus_tensors(corpus_dir, cfg, ids):
    vocab = _vocab(cfg)
    order = _order(cfg)
    base_seed = cfg.get("order_seed", 0)
    graphs, rasters, seqs = [], [], []
    for idx, sid in enumerate(ids):
        g, img = datagen.load_scene(corpus_dir, sid)
        if order.kind is codec.OrderKind.RANDOM:
            per_scene = codec.SerializationOrder(
                codec.OrderKind.RANDOM, seed=(base_seed * 1000003 + idx) & 0x7FFFFFFF
            )
            seqs.append(codec.encode(g, vocab, per_scene, cfg["vertex_len"], cfg["edge_len"]))
        else:
            seqs.append(codec.encode(g, vocab, order, cfg["vertex_len"], cfg["edge_len"]))
        graphs.append(g)
        rasters.append(img)
    return graphs, rasters, seqs


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _require_dir(args.corpus, "corpus directory")
    echo_config(cfg, args.out_dir, args.quiet)
    manifest = datagen.read_manifest(args.corpus)
    ids = manifest["ids"]
    if cfg["holdout"] > 0:
        if cfg["holdout"] >= len(ids):
            raise CliError("holdout leaves no training scenes", EXIT_CONFIG)
        ids = ids[: -cfg["holdout"]]
    graphs, rasters, seqs = _load_corpus_tensors(args.corpus, cfg, ids)

    if cfg["augment"] and cfg["augment_copies"] > 0:
        # append transformed copies: blocking up-front memorization of the
        # raster->sequence pairs is what pushes the model to read the raster
        gen_cfg = _gen_config(cfg)
        vocab = _vocab(cfg)
        order = _order(cfg)
        rng = np.random.default_rng(cfg["seed"] + 7)
        originals = [
            datagen.SceneSample(rasters[i], graphs[i], seqs[i])
            for i in range(len(graphs))
        ]
        for _ in range(cfg["augment_copies"]):
            for sample in originals:
                per_copy = order
                if order.kind is codec.OrderKind.RANDOM:
                    # fresh shuffle per copy, matching the per-scene seeds the
                    # loader uses for the originals
                    per_copy = codec.SerializationOrder(
                        codec.OrderKind.RANDOM, seed=int(rng.integers(0, 2**31 - 1))
                    )
                aug = datagen.augment(
                    sample, rng, gen_cfg, vocab, per_copy, cfg["vertex_len"], cfg["edge_len"]
                )
                graphs.append(aug.graph)
                rasters.append(aug.raster)
                seqs.append(aug.sequence)

    tokens, imgs = modelmod.make_training_tensors(seqs, rasters)
    train_cfg = modelmod.TrainConfig(
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        w_term=cfg["w_term"],
        log_every=cfg["log_every"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    log_fn = None if args.quiet else (lambda line: print(line))
    ckpt = modelmod.train(
        tokens,
        imgs,
        _model_config(cfg),
        train_cfg,
        _vocab(cfg),
        graphmod.DEFAULT_EXTENT,
        out_dir=args.out_dir,
        log_fn=log_fn,
    )
    if not args.quiet:
        print(f"trained {ckpt.step} steps on {len(ids)} scenes -> {os.path.join(args.out_dir, 'model.lgck')}")
    return EXIT_OK


def _select_scene_ids(spec: str, manifest_ids: list[str]) -> list[str]:
    if spec == "all":
        return list(manifest_ids)
    if spec.startswith("last:"):
        n = int(spec.split(":", 1)[1])
        if n <= 0 or n > len(manifest_ids):
            raise CliError(f"scene selector {spec!r} out of range", EXIT_CONFIG)
        return manifest_ids[-n:]
    if spec not in manifest_ids:
        raise CliError(f"scene id {spec!r} not in corpus manifest", EXIT_IO)
    return [spec]


def cmd_infer(args) -> int:
    cfg = resolve_config(args)
    _require_file(args.checkpoint, "checkpoint")
    ckpt = modelmod.load_checkpoint(args.checkpoint)
    model = modelmod.build_model(ckpt)
    sampler = _sampler_config(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    echo_config(cfg, args.out_dir, args.quiet)

    if args.raster:
        _require_file(args.raster, "raster file")
        pairs = [("scene", datagen.load_raster(args.raster), None)]
    else:
        if not args.corpus or not args.scene_id:
            raise CliError("infer needs either --raster or --corpus with --scene-id", EXIT_CONFIG)
        _require_dir(args.corpus, "corpus directory")
        manifest = datagen.read_manifest(args.corpus)
        ids = _select_scene_ids(args.scene_id, manifest["ids"])
        pairs = []
        for sid in ids:
            g, img = datagen.load_scene(args.corpus, sid)
            pairs.append((sid, img, g))

    batch = 64
    for lo in range(0, len(pairs), batch):
        chunk = pairs[lo : lo + batch]
        rasters = torch.from_numpy(np.stack([p[1] for p in chunk]).astype(np.float32))
        results = inference.generate_batch(model, rasters, sampler, ckpt.extent)
        for (sid, _img, gt), res in zip(chunk, results):
            graphmod.save_graph(res.graph, os.path.join(args.out_dir, f"{sid}.pred.graph"))
            codec.save_sequence(
                res.sequence, ckpt.vocab, os.path.join(args.out_dir, f"{sid}.pred.seq")
            )
            if args.render_svg:
                ref = gt if gt is not None else res.graph
                inference.render_overlay_svg(
                    res.graph, ref, os.path.join(args.out_dir, f"{sid}.overlay.svg")
                )
            if not args.quiet:
                print(
                    f"{sid}: {len(res.graph.vertices)} vertices, {len(res.graph.edges)} edges, "
                    f"diagnostics {res.diagnostics.total()}"
                )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _require_dir(args.pred_dir, "prediction directory")
    _require_dir(args.gt_dir, "ground-truth corpus")
    preds = sorted(f for f in os.listdir(args.pred_dir) if f.endswith(".pred.graph"))
    if not preds:
        raise CliError(f"no *.pred.graph files in {args.pred_dir}", EXIT_IO)
    rows = []
    for fname in preds:
        sid = fname[: -len(".pred.graph")]
        gt_path = os.path.join(args.gt_dir, "scenes", sid + ".graph")
        _require_file(gt_path, f"ground-truth graph for scene {sid}")
        pred = graphmod.load_graph(os.path.join(args.pred_dir, fname))
        gt = graphmod.load_graph(gt_path)
        rep = metrics.evaluate(pred, gt, cfg["threshold"])
        rows.append((sid, rep))

    lines = ["scene m_p m_r m_f detect c_p c_r c_f"]
    for sid, rep in rows:
        lines.append(
            f"{sid} {rep.m_precision:.4f} {rep.m_recall:.4f} {rep.m_f1:.4f} "
            f"{rep.detect_ratio:.4f} {rep.c_precision:.4f} {rep.c_recall:.4f} {rep.c_f1:.4f}"
        )
    means = np.array(
        [
            [r.m_precision, r.m_recall, r.m_f1, r.detect_ratio, r.c_precision, r.c_recall, r.c_f1]
            for _, r in rows
        ]
    ).mean(axis=0)
    lines.append("mean " + " ".join(f"{v:.4f}" for v in means))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    if not args.quiet:
        print(text, end="")
    return EXIT_OK


def _eval_checkpoint(ckpt_path, corpus_dir, cfg, sampler, holdout_ids) -> dict:
    """Generate predictions for the held-out ids and average the metrics."""
    ckpt = modelmod.load_checkpoint(ckpt_path)
    model = modelmod.build_model(ckpt)
    scores = []
    batch = 64
    for lo in range(0, len(holdout_ids), batch):
        chunk = holdout_ids[lo : lo + batch]
        gts, imgs = [], []
        for sid in chunk:
            g, img = datagen.load_scene(corpus_dir, sid)
            gts.append(g)
            imgs.append(img)
        rasters = torch.from_numpy(np.stack(imgs).astype(np.float32))
        results = inference.generate_batch(model, rasters, sampler, ckpt.extent)
        for gt, res in zip(gts, results):
            rep = metrics.evaluate(res.graph, gt, cfg["threshold"])
            scores.append([rep.m_f1, rep.detect_ratio, rep.c_f1])
    arr = np.asarray(scores)
    return {"m_f": float(arr[:, 0].mean()), "detect": float(arr[:, 1].mean()), "c_f": float(arr[:, 2].mean())}


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    _require_dir(args.corpus, "corpus directory")
    os.makedirs(args.out_dir, exist_ok=True)
    echo_config(cfg, args.out_dir, args.quiet)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise CliError("--seeds must list at least one integer", EXIT_CONFIG)
    manifest = datagen.read_manifest(args.corpus)
    ids = manifest["ids"]
    holdout = cfg["holdout"] if cfg["holdout"] > 0 else max(1, len(ids) // 10)
    train_ids, eval_ids = ids[:-holdout], ids[-holdout:]

    def train_variant(tag: str, variant_cfg: dict, seed: int) -> str:
        vdir = os.path.join(args.out_dir, f"{tag}-seed{seed}")
        ckpt_path = os.path.join(vdir, "model.lgck")
        if os.path.isfile(ckpt_path):
            return ckpt_path  # reuse finished variants on reruns
        local = dict(variant_cfg)
        local["seed"] = seed
        graphs, rasters, seqs = _load_corpus_tensors(args.corpus, local, train_ids)
        tokens, imgs = modelmod.make_training_tensors(seqs, rasters)
        train_cfg = modelmod.TrainConfig(
            lr=local["lr"],
            weight_decay=local["weight_decay"],
            batch_size=local["batch_size"],
            epochs=local["epochs"],
            seed=seed,
            w_term=local["w_term"],
            log_every=local["log_every"],
        )
        modelmod.train(
            tokens, imgs, _model_config(local), train_cfg, _vocab(local),
            graphmod.DEFAULT_EXTENT, out_dir=vdir,
        )
        return ckpt_path

    rows: list[str] = []
    if args.axis == "order":
        header = "order " + " ".join(f"m_f(seed{s}) detect(seed{s}) c_f(seed{s})" for s in seeds)
        rows.append(header)
        for order_name in ("dfs", "bfs", "coord_xy", "random"):
            cells = [order_name]
            for seed in seeds:
                variant = dict(cfg)
                variant["order"] = order_name
                variant["order_seed"] = seed
                ckpt_path = train_variant(f"order-{order_name}", variant, seed)
                sampler = inference.SamplerConfig(
                    alpha_c=cfg["alpha_c"], nucleus_p=cfg["nucleus_p"],
                    temperature=cfg["temperature"], seed=seed,
                    grammar_mask=cfg["grammar_mask"], greedy=cfg["greedy"],
                )
                score = _eval_checkpoint(ckpt_path, args.corpus, variant, sampler, eval_ids)
                cells += [f"{score['m_f']:.4f}", f"{score['detect']:.4f}", f"{score['c_f']:.4f}"]
            rows.append(" ".join(cells))
    elif args.axis == "layers":
        rows.append("layers " + " ".join(f"m_f(seed{s}) detect(seed{s}) c_f(seed{s})" for s in seeds))
        for layers in (3, 4, 6, 8):
            cells = [str(layers)]
            for seed in seeds:
                variant = dict(cfg)
                variant["num_layers"] = layers
                ckpt_path = train_variant(f"layers-{layers}", variant, seed)
                sampler = inference.SamplerConfig(
                    alpha_c=cfg["alpha_c"], nucleus_p=cfg["nucleus_p"],
                    temperature=cfg["temperature"], seed=seed,
                    grammar_mask=cfg["grammar_mask"], greedy=cfg["greedy"],
                )
                score = _eval_checkpoint(ckpt_path, args.corpus, variant, sampler, eval_ids)
                cells += [f"{score['m_f']:.4f}", f"{score['detect']:.4f}", f"{score['c_f']:.4f}"]
            rows.append(" ".join(cells))
    elif args.axis == "alpha":
        rows.append("alpha_c " + " ".join(f"m_f(seed{s}) detect(seed{s}) c_f(seed{s})" for s in seeds))
        ckpts = {seed: train_variant("alpha-base", dict(cfg), seed) for seed in seeds}
        for alpha in (1.0, 2.0, 4.0, 8.0):
            cells = [f"{alpha:g}"]
            for seed in seeds:
                sampler = inference.SamplerConfig(
                    alpha_c=alpha, nucleus_p=cfg["nucleus_p"],
                    temperature=cfg["temperature"], seed=seed,
                    grammar_mask=cfg["grammar_mask"], greedy=cfg["greedy"],
                )
                score = _eval_checkpoint(ckpts[seed], args.corpus, dict(cfg), sampler, eval_ids)
                cells += [f"{score['m_f']:.4f}", f"{score['detect']:.4f}", f"{score['c_f']:.4f}"]
            rows.append(" ".join(cells))
    else:
        raise CliError(f"unknown ablation axis {args.axis!r}", EXIT_CONFIG)

    table = "\n".join(rows) + "\n"
    with open(os.path.join(args.out_dir, f"ablate-{args.axis}.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    if not args.quiet:
        print(table, end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    cfg = resolve_config(args)
    import tempfile

    own_tmp = args.out_dir is None
    work = args.out_dir or tempfile.mkdtemp(prefix="laneseq-selftest-")
    try:
        gen_cfg = datagen.GenConfig(
            seed=cfg["seed"], num_scenes=25,
            min_vertices=cfg["gen_min_vertices"], max_vertices=cfg["gen_max_vertices"],
            fork_prob=cfg["fork_prob"], merge_prob=cfg["merge_prob"],
            curvature_scale=cfg["curvature_scale"],
            raster_h=cfg["raster_h"], raster_w=cfg["raster_w"],
            noise_std=cfg["noise_std"],
        )
        vocab = _vocab(cfg)
        order = _order(cfg)
        corpus = os.path.join(work, "corpus")
        datagen.write_corpus(corpus, gen_cfg, vocab, order, cfg["vertex_len"], cfg["edge_len"])
        manifest = datagen.read_manifest(corpus)

        worst = 1.0
        ok = True
        for sid in manifest["ids"]:
            g, _img = datagen.load_scene(corpus, sid)
            seq = codec.encode(g, vocab, order, cfg["vertex_len"], cfg["edge_len"])
            h, diag = codec.decode(seq, vocab, g.extent)
            rep = metrics.evaluate(h, g, cfg["threshold"])
            vals = (rep.m_f1, rep.detect_ratio, rep.c_f1)
            worst = min(worst, *vals)
            if diag.total() != 0 or any(v != 1.0 for v in vals):
                ok = False
                print(f"scene {sid}: FAIL diag={diag.total()} scores={vals}")
        print(f"selftest scenes=25 seed={cfg['seed']} worst_score={worst:.4f}")
        print("selftest: " + ("PASS identity scores 1.0000 across all scenes" if ok else "FAIL"))
        return EXIT_OK if ok else 1
    finally:
        if own_tmp:
            import shutil

            shutil.rmtree(work, ignore_errors=True)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_setting_flags(p: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        default = DEFAULTS[key]
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, type=str, default=None, metavar="on|off",
                           help=f"default {default}")
        else:
            p.add_argument(flag, type=type(default), default=None,
                           help=f"default {default}")


_BOOL_KEYS = [k for k, v in DEFAULTS.items() if isinstance(v, bool)]


def _normalize_bools(args: argparse.Namespace) -> None:
    for key in _BOOL_KEYS:
        val = getattr(args, key, None)
        if isinstance(val, str):
            low = val.strip().lower()
            if low in ("1", "true", "yes", "on"):
                setattr(args, key, True)
            elif low in ("0", "false", "no", "off"):
                setattr(args, key, False)
            else:
                raise CliError(f"--{key.replace('_', '-')} expects on/off, got {val!r}", EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laneseq",
        description="Lane-graph extraction as autoregressive token-sequence prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--seed", type=int, default=None, help="default 0")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    _add_setting_flags(p, ["num_scenes", "gen_min_vertices", "gen_max_vertices",
                           "fork_prob", "merge_prob", "curvature_scale", "raster_h", "raster_w",
                           "noise_std", "num_bins", "max_vertices", "vertex_len", "edge_len",
                           "order", "order_seed"])

    p = sub.add_parser("encode", help="graph file -> sequence file")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    _add_setting_flags(p, ["num_bins", "max_vertices", "vertex_len", "edge_len", "order", "order_seed"])

    p = sub.add_parser("decode", help="sequence file -> graph file")
    common(p)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the decoder on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    _add_setting_flags(p, ["order", "order_seed", "num_bins", "max_vertices",
                           "vertex_len", "edge_len", "num_layers", "embed_dim", "num_heads",
                           "feedforward_dim", "patch_size", "dropout", "cond_dropout",
                           "lr", "weight_decay", "batch_size", "epochs", "w_term",
                           "log_every", "checkpoint_every", "holdout", "augment",
                           "augment_copies", "raster_h", "raster_w"])

    p = sub.add_parser("infer", help="generate predictions from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raster", help="single raster file")
    p.add_argument("--corpus", help="corpus directory (with --scene-id)")
    p.add_argument("--scene-id", help="scene id, 'all', or 'last:N'")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--render-svg", action="store_true")
    _add_setting_flags(p, ["alpha_c", "nucleus_p", "temperature", "grammar_mask", "greedy"])

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", help="report file")
    _add_setting_flags(p, ["threshold"])

    p = sub.add_parser("ablate", help="run an ablation sweep")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--axis", required=True, choices=["order", "layers", "alpha"])
    p.add_argument("--seeds", default="0,1,2")
    _add_setting_flags(p, ["epochs", "batch_size", "num_layers", "embed_dim", "num_heads",
                           "feedforward_dim", "lr", "weight_decay", "w_term", "holdout",
                           "alpha_c", "nucleus_p", "temperature", "grammar_mask", "greedy",
                           "threshold", "log_every", "order_seed", "num_bins", "max_vertices",
                           "vertex_len", "edge_len", "patch_size", "dropout", "cond_dropout",
                           "raster_h", "raster_w"])

    p = sub.add_parser("selftest", help="cross-module round-trip check")
    common(p)
    p.add_argument("--out-dir", help="keep working files here")
    _add_setting_flags(p, ["gen_min_vertices", "gen_max_vertices", "fork_prob", "merge_prob",
                           "curvature_scale", "raster_h", "raster_w", "noise_std",
                           "num_bins", "max_vertices", "vertex_len", "edge_len",
                           "order", "order_seed", "threshold"])

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _normalize_bools(args)
        return _COMMANDS[args.command](args)
    except CliError as e:
        print(f"laneseq {args.command}: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"laneseq {args.command}: file not found: {e.filename}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as e:
        print(f"laneseq {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
