"""Operator entry points: pipeline runs, index builds, search, experiments, serving.

Exit codes: 0 success, 2 usage or data error, 3 environment error (encoder
sidecar unreachable). Experiment configs are plain key=value text files.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from . import gateway
from .core import EmbeddingVector, Modality
from .errors import EncoderUnreachable, GuingError
from .evaluation import (
    RankedList,
    aggregate_judgments,
    classification_report,
    grouped_split,
    metrics_table,
    recall_at_k,
    render_table,
    stratified_split,
)
from .index import (
    ExactIndex,
    IvfIndex,
    build_exact,
    build_ivf,
    default_ivf_params,
    kmeans,
    load_index,
    save_index,
    search_exact,
    search_ivf,
)
from .learn import (
    LogitScaleSpec,
    TrainConfig,
    train_contrastive,
    train_linear_probe,
    train_sketch_adapter,
    zero_shot_classify,
)
from .pipeline import (
    compute_hashes,
    read_boxes,
    read_manifest,
    read_ocr,
    read_probs,
    run_pipeline,
    stage_report_table,
    write_scap_repo,
    write_screen_repo,
)


def _die(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EncoderUnreachable as exc:
            _die(3, str(exc))
        except (GuingError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
            _die(2, str(exc))
    return wrapper


def parse_config(path) -> dict[str, str]:
    """key=value lines; blank lines and # comments ignored."""
    cfg: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
    return cfg


def _cfg_require(cfg: dict[str, str], key: str) -> str:
    if key not in cfg:
        raise ValueError(f"config is missing required key {key!r}")
    return cfg[key]


def _cfg_int(cfg, key, default):
    return int(cfg.get(key, default))


def _cfg_float(cfg, key, default):
    return float(cfg.get(key, default))


def _cfg_ks(cfg, key, default):
    raw = cfg.get(key)
    if raw is None:
        return list(default)
    return [int(part) for part in raw.split(",") if part.strip()]


def _read_feature_rows(path):
    """JSONL {"id": ..., "v": [...], optional "app_id"/"label"} rows."""
    ids, rows, apps, labels = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            ids.append(d["id"])
            rows.append(d["v"])
            apps.append(d.get("app_id"))
            labels.append(d.get("label"))
    return ids, np.asarray(rows, dtype=np.float64), apps, labels


def _read_pairs(path, a_key: str, b_key: str) -> list[tuple[str, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append((d[a_key], d[b_key]))
    return out


@click.group(context_settings={"auto_envvar_prefix": "GUING"})
def main() -> None:
    """Text-to-GUI retrieval engine and evaluation workbench."""


@main.group()
def pipeline() -> None:
    """Dataset-creation pipeline."""


@pipeline.command("run")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--probs", "probs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--boxes", "boxes_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ocr", "ocr_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--threshold", default=0.9, show_default=True)
@click.option("--ratio-min", default=1.3, show_default=True)
@click.option("--ratio-max", default=3.0, show_default=True)
@click.option("--image-root", default=None, help="Root for file_ref paths when hashing.")
@click.option("--threads", default=1, show_default=True, help="Hashing threads.")
@click.option("--json", "as_json", is_flag=True)
@guarded
def pipeline_run(manifest, probs_path, boxes_path, ocr_path, out_dir, threshold,
                 ratio_min, ratio_max, image_root, threads, as_json) -> None:
    """Run every stage and emit the two repository manifests."""
    from pathlib import Path

    def load(stage: str, fn, path):
        try:
            return fn(path)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ValueError(f"stage {stage}: {exc}") from exc

    entries = load("manifest", read_manifest, manifest)
    probs = load("probs", read_probs, probs_path)
    boxes = load("boxes", read_boxes, boxes_path)
    ocr = load("ocr", read_ocr, ocr_path)

    if any(e.content_bytes_hash is None for e in entries):
        root = image_root if image_root is not None else Path(manifest).parent
        entries = compute_hashes(entries, root=root, threads=threads)

    result = run_pipeline(entries, probs, boxes, ocr, threshold=threshold,
                          ratio_min=ratio_min, ratio_max=ratio_max)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_screen_repo(result.screen_repo, out / "screen_repo.jsonl")
    write_scap_repo(result.scap_repo, out / "scap_repo.jsonl")

    if as_json:
        click.echo(json.dumps({
            "reports": [vars(r) for r in result.reports],
            "route_counts": result.route_counts,
            "screen_repo": len(result.screen_repo),
            "scap_repo": len(result.scap_repo),
        }, sort_keys=True))
    else:
        click.echo(stage_report_table(result.reports))
        click.echo(f"screen_repo: {len(result.screen_repo)} records")
        click.echo(f"scap_repo: {len(result.scap_repo)} records")


@main.group("index")
def index_group() -> None:
    """Index construction."""


@index_group.command("build")
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cells", default=None, type=int, help="Voronoi cells; 0 forces exact-only; default scales with count.")
@click.option("--max-iters", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@guarded
def index_build(embeddings, cells, max_iters, seed, out_path, as_json) -> None:
    """Build an index snapshot from an embedding file."""
    vectors = gateway.load_embeddings(embeddings)
    base = build_exact(vectors)
    if cells is None:
        cells, _ = default_ivf_params(base.count)
    if cells > 0:
        centroids = kmeans(base, cells, max_iters=max_iters, seed=seed)
        index = build_ivf(base, centroids)
    else:
        index = base
    save_index(index, out_path)
    info = {"count": base.count, "dim": base.dim, "cells": cells if cells > 0 else None}
    if as_json:
        click.echo(json.dumps(info, sort_keys=True))
    else:
        shape = f"{info['count']} vectors, dim {info['dim']}"
        click.echo(f"wrote {out_path}: {shape}" + (f", {cells} cells" if cells > 0 else ", exact only"))


@main.command("search")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--query", required=True)
@click.option("--k", default=10, show_default=True)
@click.option("--nprobe", default=None, type=int)
@click.option("--exact", is_flag=True, help="Bypass cell probing.")
@click.option("--stub-encoder/--no-stub-encoder", default=True, show_default=True)
@click.option("--encoder-url", default=None, help="Encoder sidecar base URL (overrides stub).")
@click.option("--seed", default=0, show_default=True, help="Stub encoder seed.")
@click.option("--json", "as_json", is_flag=True)
@guarded
def search_cmd(index_path, query, k, nprobe, exact, stub_encoder, encoder_url, seed, as_json) -> None:
    """Rank repository screenshots against a text query."""
    index = load_index(index_path)
    base = index.base if isinstance(index, IvfIndex) else index
    if encoder_url is not None:
        encoder: gateway.EncoderClient = gateway.HttpEncoderClient(encoder_url)
    elif stub_encoder:
        encoder = gateway.StubEncoderClient(dim=base.dim, seed=seed)
    else:
        raise ValueError("no encoder configured: pass --encoder-url or keep --stub-encoder")
    emb = encoder.encode_text(query)
    if exact or isinstance(index, ExactIndex):
        result = search_exact(base, emb, k, query_echo=query)
    else:
        if nprobe is None:
            nprobe = min(default_ivf_params(base.count)[1], index.n_cells)
        result = search_ivf(index, emb, k, nprobe, query_echo=query)
    if as_json:
        click.echo(json.dumps({
            "query": query,
            "nprobe_used": result.nprobe_used,
            "results": [{"id": i, "score": s} for i, s in result.results],
        }, sort_keys=True))
    else:
        for sid, score in result.results:
            click.echo(f"{sid}\t{score:.6f}")


@main.group("eval")
def eval_group() -> None:
    """Experiment protocols over fixture data."""


def _echo_table(as_json: bool, payload: dict, table: str) -> None:
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        click.echo(table)


@eval_group.command("exp1")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@guarded
def eval_exp1(config_path, as_json) -> None:
    """Train contrastive encoders on paired features and report text->image recall@k.

    Train/test pairs never share an app: the split groups on each image's
    app_id before any training happens.
    """
    cfg = parse_config(config_path)
    img_ids, img_feats, img_apps, _ = _read_feature_rows(_cfg_require(cfg, "image_features"))
    txt_ids, txt_feats, _, _ = _read_feature_rows(_cfg_require(cfg, "text_features"))
    pairs = _read_pairs(_cfg_require(cfg, "pairs"), "image_id", "text_id")
    img_row = {i: r for r, i in enumerate(img_ids)}
    txt_row = {i: r for r, i in enumerate(txt_ids)}

    groups = [img_apps[img_row[a]] or a for a, _ in pairs]
    train_rows, test_rows = grouped_split(groups, _cfg_float(cfg, "test_fraction", 0.2),
                                          seed=_cfg_int(cfg, "seed", 0))
    train_pairs = [(img_row[pairs[r][0]], txt_row[pairs[r][1]]) for r in train_rows]
    test_pairs = [(pairs[r][0], pairs[r][1]) for r in test_rows]
    if not train_pairs or not test_pairs:
        raise ValueError("split produced an empty side; adjust test_fraction or data")

    config = TrainConfig(
        batch_size=_cfg_int(cfg, "batch_size", 128),
        learning_rate=_cfg_float(cfg, "learning_rate", 5e-5),
        epochs=_cfg_int(cfg, "epochs", 5),
        seed=_cfg_int(cfg, "seed", 0),
    )
    img_enc, txt_enc, _curve = train_contrastive(
        img_feats, txt_feats, train_pairs, config,
        embed_dim=_cfg_int(cfg, "embed_dim", 64),
    )

    index = ExactIndex.from_matrix(img_ids, img_enc.encode(img_feats))
    ks = _cfg_ks(cfg, "ks", (1, 3, 5, 10, 50, 100))
    ks = [k for k in ks if k <= index.count]
    txt_embs = txt_enc.encode(txt_feats)
    lists, truth = [], {}
    for image_id, text_id in test_pairs:
        emb = EmbeddingVector.from_raw(txt_embs[txt_row[text_id]],
                                               modality=Modality.TEXT)
        ranked = search_exact(index, emb, max(ks))
        lists.append(RankedList(query_id=text_id, ids=tuple(i for i, _ in ranked.results)))
        truth[text_id] = image_id
    recalls = recall_at_k(lists, truth, ks)
    table = render_table(["k", "recall@k"], [[str(k), recalls[k]] for k in ks])
    _echo_table(as_json, {"recall_at_k": {str(k): v for k, v in recalls.items()},
                          "queries": len(lists)}, table)


@eval_group.command("exp2")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@guarded
def eval_exp2(config_path, as_json) -> None:
    """Replay stored blind-comparison judgments into per-engine tables."""
    cfg = parse_config(config_path)
    records = []
    with open(_cfg_require(cfg, "judgments"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ValueError("judgment log is empty")
    ks = tuple(_cfg_ks(cfg, "ks", (1, 3, 5, 10)))
    tables = aggregate_judgments(records, ks)
    _echo_table(as_json, {"engines": tables}, metrics_table(tables, ks))


@eval_group.command("exp3")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@guarded
def eval_exp3(config_path, as_json) -> None:
    """Classify labeled embeddings zero-shot or with a trained linear probe."""
    cfg = parse_config(config_path)
    ids, feats, _, labels = _read_feature_rows(_cfg_require(cfg, "data"))
    if any(lb is None for lb in labels):
        raise ValueError("every data row needs a \"label\"")
    golds = [int(lb) for lb in labels]
    n_classes = _cfg_int(cfg, "n_classes", max(golds) + 1)
    mode = cfg.get("mode", "zero_shot")

    if mode == "zero_shot":
        label_texts = [t.strip() for t in _cfg_require(cfg, "label_texts").split(",")]
        if len(label_texts) != n_classes:
            raise ValueError(f"{len(label_texts)} label_texts for {n_classes} classes")
        stub_seed = _cfg_int(cfg, "seed", 0)
        label_embs = [gateway.stub_encode(t, dim=feats.shape[1], seed=stub_seed)
                      for t in label_texts]
        preds = [
            zero_shot_classify(
                EmbeddingVector.from_raw(feats[r], modality=Modality.IMAGE),
                label_embs,
            )
            for r in range(feats.shape[0])
        ]
        report = classification_report(preds, golds, n_classes)
        eval_rows = len(golds)
    elif mode == "probe":
        train_rows, test_rows = stratified_split(golds, _cfg_float(cfg, "test_fraction", 0.2),
                                                 seed=_cfg_int(cfg, "seed", 0))
        config = TrainConfig(
            batch_size=_cfg_int(cfg, "batch_size", 128),
            learning_rate=_cfg_float(cfg, "learning_rate", 1e-5),
            epochs=_cfg_int(cfg, "epochs", 100),
            seed=_cfg_int(cfg, "seed", 0),
        )
        y = np.asarray(golds)
        clf = train_linear_probe(feats[train_rows], y[train_rows], n_classes, config)
        preds = clf.predict(feats[test_rows]).tolist()
        report = classification_report(preds, y[test_rows].tolist(), n_classes)
        eval_rows = len(test_rows)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected zero_shot or probe")

    rows = [[str(c["class"]), c["precision"], c["recall"], c["f1"], str(c["support"])]
            for c in report["per_class"]]
    rows.append(["weighted", report["weighted"]["precision"], report["weighted"]["recall"],
                 report["weighted"]["f1"], str(eval_rows)])
    table = render_table(["class", "precision", "recall", "f1", "support"], rows)
    _echo_table(as_json, report, table + f"\naccuracy: {report['accuracy']:.3f}")


@eval_group.command("exp4")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@guarded
def eval_exp4(config_path, as_json) -> None:
    """Train the sketch adapter against frozen screenshot embeddings and
    report sketch->screenshot recall@k on held-out pairs."""
    cfg = parse_config(config_path)
    sk_ids, sk_feats, _, _ = _read_feature_rows(_cfg_require(cfg, "sketches"))
    shots = gateway.load_embeddings(_cfg_require(cfg, "screenshots"))
    shot_ids = [i for i, _ in shots]
    shot_matrix = np.stack([v.values for _, v in shots]).astype(np.float64)
    sk_row = {i: r for r, i in enumerate(sk_ids)}
    shot_row = {i: r for r, i in enumerate(shot_ids)}

    train_pairs = [(sk_row[a], shot_row[b])
                   for a, b in _read_pairs(_cfg_require(cfg, "train_pairs"), "sketch_id", "screenshot_id")]
    test_pairs = _read_pairs(_cfg_require(cfg, "test_pairs"), "sketch_id", "screenshot_id")

    config = TrainConfig(
        batch_size=_cfg_int(cfg, "batch_size", 256),
        learning_rate=_cfg_float(cfg, "learning_rate", 1e-5),
        epochs=_cfg_int(cfg, "epochs", 10),
        seed=_cfg_int(cfg, "seed", 0),
    )
    adapter = train_sketch_adapter(sk_feats, shot_matrix, train_pairs, config)

    index = ExactIndex.from_matrix(shot_ids, shot_matrix)
    ks = [k for k in _cfg_ks(cfg, "ks", (1, 5, 10)) if k <= index.count]
    sk_embs = adapter.encode(sk_feats)
    lists, truth = [], {}
    for sketch_id, screenshot_id in test_pairs:
        emb = EmbeddingVector.from_raw(sk_embs[sk_row[sketch_id]],
                                               modality=Modality.SKETCH)
        ranked = search_exact(index, emb, max(ks))
        lists.append(RankedList(query_id=sketch_id, ids=tuple(i for i, _ in ranked.results)))
        truth[sketch_id] = screenshot_id
    recalls = recall_at_k(lists, truth, ks)
    table = render_table(["k", "recall@k"], [[str(k), recalls[k]] for k in ks])
    _echo_table(as_json, {"recall_at_k": {str(k): v for k, v in recalls.items()},
                          "queries": len(lists)}, table)


@main.command("serve")
@click.option("--registry", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8870, show_default=True)
@click.option("--image-dir", default=None, type=click.Path(file_okay=False, exists=True))
@guarded
def serve(registry, data_dir, host, port, image_dir) -> None:
    """Launch the HTTP service over the engines in the registry file."""
    import uvicorn

    from .service import build_engines_from_registry, create_app

    engines = build_engines_from_registry(registry)
    app = create_app(engines, data_dir, image_dir=image_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
