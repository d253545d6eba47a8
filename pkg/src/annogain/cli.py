"""Command-line surface for sessions, simulation, and the corpus pipeline.

Every command exits 0 on success and nonzero with a single machine-parseable
``error: ...`` line on stderr otherwise. Mutating commands serialize through
the session lock file; read-only commands bypass it.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import fusion
from . import simulate as sim_mod
from .engine import EngineConfig, EngineError
from .formats import EmbeddingFile, FileFormatError, LabelFile
from .fusion import FusionConfig, FusionVariant, GainMode
from .index import IndexConfig, SnapshotError
from .session import (SESSION_ENV_VAR, Session, SessionError, config_from_text,
                      resolve_session_dir)
from .vectors import VectorError

_KNOWN_ERRORS = (SessionError, EngineError, FileFormatError, VectorError,
                 SnapshotError, ValueError, KeyError, OSError)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _open_session(session_dir: str | None) -> Session:
    return Session.open(resolve_session_dir(session_dir))


session_option = click.option(
    "--session", "session_dir", default=None,
    help=f"Session directory (default: ${SESSION_ENV_VAR}).")


@click.group()
def main():
    """Selective-annotation engine: label only what still adds information."""


@main.command()
@session_option
@click.option("--dim", required=True, type=int, help="Embedding dimension.")
@click.option("--classes", "num_classes", required=True, type=int)
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--epsilon", "delta_distance", default=0.2, show_default=True, type=float,
              help="Locality radius as cosine distance.")
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--annotator-alpha", default=0.9, show_default=True, type=float)
@click.option("--stop-threshold", default=None, type=float,
              help="Stop when max gain falls to this (default 0.05 * annotator alpha).")
@click.option("--temperature", default=1.0, show_default=True, type=float)
@click.option("--no-redundancy-drop", is_flag=True, default=False)
@click.option("--gain-mode", default="proxy", show_default=True,
              type=click.Choice(["proxy", "entropy"]))
@click.option("--fusion-variant", default="lower_bound", show_default=True,
              type=click.Choice([v.value for v in FusionVariant]))
@click.option("--confidence-threshold", default=0.5, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--index-mode", default="hnsw", show_default=True,
              type=click.Choice(["hnsw", "exact"]))
@click.option("--class-names", default=None, help="Comma-separated class names.")
def init(session_dir, dim, num_classes, k, delta_distance, batch_size,
         annotator_alpha, stop_threshold, temperature, no_redundancy_drop,
         gain_mode, fusion_variant, confidence_threshold, seed, index_mode,
         class_names):
    """Create a session directory with config and an empty event log."""
    try:
        config = EngineConfig(
            dim=dim, num_classes=num_classes, k=k, delta_distance=delta_distance,
            batch_size=batch_size, annotator_alpha=annotator_alpha,
            stop_threshold=stop_threshold, sampling_temperature=temperature,
            redundancy_drop=not no_redundancy_drop, gain_mode=GainMode(gain_mode),
            fusion=FusionConfig(num_classes, FusionVariant(fusion_variant),
                                confidence_threshold),
            seed=seed, index=IndexConfig(mode=index_mode, seed=seed + 1),
        )
        names = class_names.split(",") if class_names else None
        directory = resolve_session_dir(session_dir)
        session = Session.create(directory, config, names)
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"initialized session at {directory}")


@main.command()
@session_option
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "label_path", default=None, type=click.Path(exists=True),
              help="Optional oracle labels (simulation only).")
@click.option("--uris", "uri_path", default=None, type=click.Path(exists=True),
              help="Optional payload URIs, one per line, row-aligned.")
def ingest(session_dir, emb_path, label_path, uri_path):
    """Load an embedding file (and optional oracle labels) into the pool."""
    try:
        session = _open_session(session_dir)
        with session.lock():
            emb = EmbeddingFile.read(emb_path)
            ids = emb.id_list()
            labels = None
            if label_path:
                lab = LabelFile.read(label_path)
                if lab.count != emb.count:
                    raise SessionError(
                        f"label count {lab.count} != embedding count {emb.count}")
                if lab.num_classes != session.engine.config.num_classes:
                    raise SessionError(
                        f"label file has {lab.num_classes} classes, session has "
                        f"{session.engine.config.num_classes}")
                labels = lab.labels
            uris = None
            if uri_path:
                uris = Path(uri_path).read_text(encoding="utf-8").splitlines()
                if len(uris) != emb.count:
                    raise SessionError(
                        f"uri count {len(uris)} != embedding count {emb.count}")

            def records():
                for i in range(emb.count):
                    oracle = None
                    if labels is not None and labels[i] >= 0:
                        oracle = int(labels[i])
                    uri = uris[i] if uris else None
                    yield (ids[i], emb.vectors[i], oracle, uri)

            count = session.engine.ingest(records())
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"ingested {count}")


@main.command("predict-import")
@session_option
@click.option("--probs", "probs_path", required=True, type=click.Path(exists=True),
              help="Embedding-format file of per-sample probability rows (dim = C).")
def predict_import(session_dir, probs_path):
    """Import model probability vectors and re-fuse the named samples."""
    try:
        session = _open_session(session_dir)
        with session.lock():
            probs = EmbeddingFile.read(probs_path)
            if probs.dim != session.engine.config.num_classes:
                raise SessionError(
                    f"probability rows have {probs.dim} columns, session has "
                    f"{session.engine.config.num_classes} classes")
            pairs = zip(probs.id_list(), probs.vectors)
            count, invalid = session.engine.set_model_predictions(pairs)
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"updated {count}")
    for sid in invalid:
        click.echo(f"invalid {sid}", err=True)
    if invalid:
        sys.exit(1)


@main.command()
@session_option
@click.option("--size", default=None, type=int, help="Batch size (default: config).")
@click.option("--semi", is_flag=True, default=False,
              help="Weight by spread-coverage instead of annotation gain.")
def select(session_dir, size, semi):
    """Draw the next annotation batch; prints one sample id per line."""
    try:
        session = _open_session(session_dir)
        with session.lock():
            b = size or session.engine.config.batch_size
            ids = (session.engine.select_unlabeled_batch(b) if semi
                   else session.engine.select_batch(b))
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    for sid in ids:
        click.echo(sid)


@main.command()
@session_option
@click.option("--file", "label_file", default=None, type=click.Path(exists=True),
              help="Lines of 'id label [alpha]'; default: standard input.")
def annotate(session_dir, label_file):
    """Apply annotations and report how many neighbors each one rechecked."""
    try:
        session = _open_session(session_dir)
        with session.lock():
            if label_file:
                lines = Path(label_file).read_text(encoding="utf-8").splitlines()
            else:
                lines = sys.stdin.read().splitlines()
            applied = 0
            for lineno, line in enumerate(lines, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) not in (2, 3):
                    raise SessionError(
                        f"line {lineno}: expected 'id label [alpha]', got {line!r}")
                alpha = float(parts[2]) if len(parts) == 3 else None
                report = session.engine.apply_annotation(parts[0], int(parts[1]), alpha)
                click.echo(f"{parts[0]} label={parts[1]} rechecked={report.count}")
                applied += 1
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"annotated {applied}")


@main.command()
@session_option
def stats(session_dir):
    """Line-oriented pool statistics."""
    try:
        session = _open_session(session_dir)
        s = session.engine.stats()
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"total={s['total']}")
    for name, count in s["counts"].items():
        click.echo(f"{name}={count}")
    click.echo(f"annotation_fraction={s['annotation_fraction']:.6f}")
    click.echo(f"event_count={s['event_count']}")
    click.echo("gain_histogram=" + ",".join(str(x) for x in s["gain_histogram"]))


@main.command("stop-check")
@session_option
def stop_check(session_dir):
    """Print the auto-stop decision and its diagnostics."""
    try:
        session = _open_session(session_dir)
        diag = session.engine.should_stop()
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"stop={'true' if diag.stop else 'false'}")
    click.echo(f"max_gain={diag.max_gain:.9f}")
    click.echo(f"total_gain={diag.total_gain:.9f}")
    click.echo(f"positive_gain_count={diag.positive_gain_count}")


@main.command()
@click.argument("alpha1", type=float)
@click.argument("alpha2", type=float)
@click.option("--variant", default="lower_bound",
              type=click.Choice([v.value for v in FusionVariant]), show_default=True)
@click.option("--classes", "num_classes", default=2, show_default=True, type=int)
@click.option("--disagree", is_flag=True, default=False,
              help="Fuse as diverging predictions instead of agreeing ones.")
def fuse(alpha1, alpha2, variant, num_classes, disagree):
    """Confidence-fusion calculator; prints the fused alpha to 9 decimals."""
    try:
        cfg = FusionConfig(num_classes, FusionVariant(variant))
        if disagree:
            _, value = fusion.fuse_disagree(alpha1, alpha2, cfg)
        else:
            value = fusion.fuse_agree(alpha1, alpha2, cfg)
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"{value:.9f}")


@main.command()
@session_option
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Snapshot target (default: session.snapshot in the session dir).")
def snapshot(session_dir, out_path):
    """Write a binary checkpoint of the full session state."""
    try:
        session = _open_session(session_dir)
        with session.lock():
            target = session.write_snapshot(out_path)
        session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"snapshot written to {target}")


@main.command()
@session_option
@click.option("--from", "snap_path", required=True, type=click.Path(exists=True))
@click.option("--force", is_flag=True, default=False,
              help="Overwrite an existing session directory.")
def restore(session_dir, snap_path, force):
    """Recreate a session directory from a snapshot file."""
    try:
        directory = resolve_session_dir(session_dir)
        data = Path(snap_path).read_bytes()
        from .session import (CONFIG_FILE, LOG_FILE, SNAPSHOT_FILE,
                              restore_engine_snapshot)
        from .engine import SelectionEngine
        import struct as _struct

        if len(data) < 14 or data[:4] != b"ICSS":
            raise SessionError("not a session snapshot (bad magic)")
        cfg_len = _struct.unpack("<Q", data[14:22])[0]
        config_text = data[22 : 22 + cfg_len].decode("utf-8")
        config, _names = config_from_text(config_text)
        engine = SelectionEngine(config)
        restore_engine_snapshot(engine, data)  # validates before any file writes
        cfg_file = directory / CONFIG_FILE
        if cfg_file.exists() and not force:
            raise SessionError(
                f"session already exists at {directory}; use --force to overwrite")
        directory.mkdir(parents=True, exist_ok=True)
        cfg_file.write_text(config_text, encoding="utf-8")
        (directory / LOG_FILE).write_text("", encoding="utf-8")
        (directory / SNAPSHOT_FILE).write_bytes(data)
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"restored session at {directory}")


@main.command()
@session_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8100, show_default=True, type=int)
@click.option("--token", default=None, help="Require this shared token header.")
@click.option("--lease-seconds", default=600.0, show_default=True, type=float)
def serve(session_dir, host, port, token, lease_seconds):
    """Run the HTTP annotation service over the session."""
    try:
        from .service import serve as run_service

        session = _open_session(session_dir)
        lock = session.lock()
        lock.acquire()
        try:
            run_service(session, host=host, port=port, token=token,
                        lease_seconds=lease_seconds)
        finally:
            lock.release()
            session.close()
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))


@main.command()
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "label_path", required=True, type=click.Path(exists=True))
@click.option("--budgets", required=True, help="Comma-separated fractions, e.g. 0.03,0.05,0.1")
@click.option("--seeds", default="0", show_default=True)
@click.option("--baseline", default="gain", type=click.Choice(["gain", "random"]),
              show_default=True)
@click.option("--update-points", default="", help="Annotation counts that retrain the model.")
@click.option("--warm-fraction", default=0.01, show_default=True, type=float)
@click.option("--annotator-alpha", default=1.0, show_default=True, type=float)
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--epochs", default=200, show_default=True, type=int)
@click.option("--learning-rate", default=2.0, show_default=True, type=float)
@click.option("--epsilon", "delta_distance", default=0.2, show_default=True, type=float)
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the canonical JSON report here.")
@click.option("--curve", "curve_path", default=None, type=click.Path(),
              help="Write the fraction,accuracy,stopped table here.")
def simulate(emb_path, label_path, budgets, seeds, baseline, update_points,
             warm_fraction, annotator_alpha, batch_size, epochs, learning_rate,
             delta_distance, k, out_path, curve_path):
    """Replay an oracle-labeled pool through the coevolution loop."""
    try:
        plan = sim_mod.SimulationPlan(
            budgets=[float(b) for b in budgets.split(",") if b],
            seeds=[int(s) for s in seeds.split(",") if s],
            update_points=[int(u) for u in update_points.split(",") if u],
            baseline=baseline, warm_fraction=warm_fraction,
            annotator_alpha=annotator_alpha, batch_size=batch_size,
            epochs=epochs, learning_rate=learning_rate,
            delta_distance=delta_distance, k=k,
        )
        emb = EmbeddingFile.read(emb_path)
        lab = LabelFile.read(label_path)
        report = sim_mod.run_simulation(emb, lab, plan)
        if out_path:
            Path(out_path).write_bytes(sim_mod.report_bytes(report))
        if curve_path:
            Path(curve_path).write_text(sim_mod.export_curve(report), encoding="utf-8")
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    for row in report["mean_by_budget"]:
        click.echo(f"fraction={row['fraction']:.4f} accuracy={row['accuracy']:.4f} "
                   f"stopped={'true' if row['stopped'] else 'false'}")
    for seed_row, timing in zip(report["seeds"], report["timings"]):
        click.echo(f"seed={seed_row['seed']} reference_accuracy="
                   f"{seed_row['reference_accuracy']:.4f} "
                   f"wall_seconds={timing['total']:.2f}", err=True)


@main.command()
@click.option("--superset", "superset_path", required=True, type=click.Path(exists=True))
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--max-distance", default=0.2, show_default=True, type=float)
@click.option("--subsample-fraction", default=1.0, show_default=True, type=float)
@click.option("--clusters", default=None, type=int,
              help="Cluster count (default: corpus size / 2000).")
@click.option("--dedup-distance", default=0.2, show_default=True, type=float)
@click.option("--routes", default=3, show_default=True, type=int,
              help="Clusters searched per target.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Manifest file (default: standard output).")
def enhance(superset_path, targets_path, k, max_distance, subsample_fraction,
            clusters, dedup_distance, routes, seed, out_path):
    """Retrieve task-relevant superset samples under a distance cutoff."""
    try:
        sup = EmbeddingFile.read(superset_path)
        tgt = EmbeddingFile.read(targets_path)
        ids, vecs = sup.id_list(), sup.vectors
        if subsample_fraction < 1.0:
            ids, vecs = corpus_mod.subsample(ids, vecs, subsample_fraction, seed)
        corpus = corpus_mod.build_corpus_index(
            ids, vecs, num_clusters=clusters, dedup_distance=dedup_distance, seed=seed)
        hits = corpus_mod.retrieve(corpus, tgt.id_list(), tgt.vectors, k=k,
                                   max_distance=max_distance,
                                   clusters_per_target=routes)
        lines = corpus_mod.manifest_lines(hits)
        if out_path:
            Path(out_path).write_text("\n".join(lines) + ("\n" if lines else ""),
                                      encoding="utf-8")
        else:
            for line in lines:
                click.echo(line)
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"retrieved {len(lines)} (corpus kept {corpus.size})", err=True)


@main.command()
@click.option("--out", "emb_path", required=True, type=click.Path())
@click.option("--labels", "label_path", required=True, type=click.Path())
@click.option("--n", default=5000, show_default=True, type=int)
@click.option("--dim", default=32, show_default=True, type=int)
@click.option("--classes", "num_classes", default=10, show_default=True, type=int)
@click.option("--sigma", default=0.35, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
def synth(emb_path, label_path, n, dim, num_classes, sigma, seed):
    """Generate a synthetic Gaussian-mixture pool for simulations."""
    try:
        vecs, labels = sim_mod.make_gaussian_mixture(n, dim, num_classes, sigma, seed)
        EmbeddingFile(vectors=vecs).write(emb_path)
        LabelFile(num_classes=num_classes, labels=labels).write(label_path)
    except _KNOWN_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"wrote {n} x {dim} embeddings to {emb_path} and labels to {label_path}")


if __name__ == "__main__":
    main()
