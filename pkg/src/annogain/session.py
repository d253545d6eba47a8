"""Session lifecycle: a directory holding config, event log, and snapshots.

Layout:
    config        plain-text key=value engine configuration
    events.log    newline-delimited JSON events (the source of truth)
    session.snapshot   optional "ICSS" binary checkpoint
    session.lock  advisory lock; one mutating process at a time

Opening a session restores the most recent snapshot (when present) and
replays any log suffix, so a crash between snapshots loses nothing that was
acknowledged: every mutation is fsynced into the log before the caller sees
a result.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

from filelock import FileLock

from .engine import AnnotationEvent, Event, EngineConfig, SelectionEngine
from .fusion import FusionConfig, FusionVariant, GainMode
from .index import IndexConfig, VectorIndex

SESSION_MAGIC = b"ICSS"
SESSION_VERSION = 1
SESSION_ENV_VAR = "ANNOGAIN_SESSION"

CONFIG_FILE = "config"
LOG_FILE = "events.log"
SNAPSHOT_FILE = "session.snapshot"
LOCK_FILE = "session.lock"


class SessionError(Exception):
    pass


def config_to_text(cfg: EngineConfig, class_names: list[str] | None = None) -> str:
    lines = [
        f"dim={cfg.dim}",
        f"num_classes={cfg.num_classes}",
        f"k={cfg.k}",
        f"delta_distance={cfg.delta_distance!r}",
        f"batch_size={cfg.batch_size}",
        f"annotator_alpha={cfg.annotator_alpha!r}",
        f"stop_threshold={cfg.stop_threshold!r}",
        f"sampling_temperature={cfg.sampling_temperature!r}",
        f"redundancy_drop={'true' if cfg.redundancy_drop else 'false'}",
        f"gain_mode={cfg.gain_mode.value}",
        f"fusion_variant={cfg.fusion.variant.value}",
        f"confidence_threshold={cfg.fusion.confidence_threshold!r}",
        f"seed={cfg.seed}",
        f"index_mode={cfg.index.mode}",
        f"index_m={cfg.index.m}",
        f"index_ef_construction={cfg.index.ef_construction}",
        f"index_ef_query={cfg.index.ef_query}",
        f"index_seed={cfg.index.seed}",
    ]
    if class_names:
        joined = ",".join(class_names)
        if len(class_names) != cfg.num_classes:
            raise SessionError("class_names length must equal num_classes")
        lines.append(f"class_names={joined}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> tuple[EngineConfig, list[str] | None]:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SessionError(f"config line {lineno} is not key=value: {line!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        num_classes = int(kv["num_classes"])
        cfg = EngineConfig(
            dim=int(kv["dim"]),
            num_classes=num_classes,
            k=int(kv.get("k", 10)),
            delta_distance=float(kv.get("delta_distance", 0.2)),
            batch_size=int(kv.get("batch_size", 32)),
            annotator_alpha=float(kv.get("annotator_alpha", 0.9)),
            stop_threshold=float(kv["stop_threshold"]) if "stop_threshold" in kv else None,
            sampling_temperature=float(kv.get("sampling_temperature", 1.0)),
            redundancy_drop=kv.get("redundancy_drop", "true").lower() == "true",
            gain_mode=GainMode(kv.get("gain_mode", "proxy")),
            fusion=FusionConfig(
                num_classes=num_classes,
                variant=FusionVariant(kv.get("fusion_variant", "lower_bound")),
                confidence_threshold=float(kv.get("confidence_threshold", 0.5)),
            ),
            seed=int(kv.get("seed", 0)),
            index=IndexConfig(
                mode=kv.get("index_mode", "hnsw"),
                m=int(kv.get("index_m", 16)),
                ef_construction=int(kv.get("index_ef_construction", 200)),
                ef_query=int(kv.get("index_ef_query", 64)),
                seed=int(kv.get("index_seed", int(kv.get("seed", 0)) + 1)),
            ),
        )
    except KeyError as exc:
        raise SessionError(f"config missing required key: {exc.args[0]}") from exc
    except ValueError as exc:
        raise SessionError(f"bad config value: {exc}") from exc
    names = None
    if "class_names" in kv and kv["class_names"]:
        names = kv["class_names"].split(",")
        if len(names) != num_classes:
            raise SessionError("class_names length must equal num_classes")
    return cfg, names


def resolve_session_dir(path: str | None) -> Path:
    if path:
        return Path(path)
    env = os.environ.get(SESSION_ENV_VAR)
    if env:
        return Path(env)
    raise SessionError(
        f"no session directory given and {SESSION_ENV_VAR} is not set")


class Session:
    """An open session: engine plus durable event log."""

    def __init__(self, directory: Path, engine: SelectionEngine,
                 class_names: list[str] | None):
        self.directory = Path(directory)
        self.engine = engine
        self.class_names = class_names or [
            f"class_{i}" for i in range(engine.config.num_classes)]
        self._log_fh = open(self.directory / LOG_FILE, "a", encoding="utf-8")
        engine.sink = self._write_event

    # ------------------------------------------------------------- lifecycle

    @classmethod
    def create(cls, directory, config: EngineConfig,
               class_names: list[str] | None = None) -> "Session":
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cfg_path = directory / CONFIG_FILE
        if cfg_path.exists():
            raise SessionError(f"session already initialized at {directory}")
        cfg_path.write_text(config_to_text(config, class_names), encoding="utf-8")
        (directory / LOG_FILE).touch()
        return cls(directory, SelectionEngine(config), class_names)

    @classmethod
    def open(cls, directory) -> "Session":
        directory = Path(directory)
        cfg_path = directory / CONFIG_FILE
        if not cfg_path.exists():
            raise SessionError(f"no session at {directory} (missing config)")
        config, class_names = config_from_text(cfg_path.read_text(encoding="utf-8"))
        engine = SelectionEngine(config)
        snap_path = directory / SNAPSHOT_FILE
        if snap_path.exists():
            restore_engine_snapshot(engine, snap_path.read_bytes())
        log_path = directory / LOG_FILE
        if log_path.exists():
            with open(log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    ev = Event.from_json(line)
                    if ev.seq < engine.next_seq:
                        continue  # already folded into the snapshot
                    engine.apply_event(ev)
        return cls(directory, engine, class_names)

    def close(self) -> None:
        self.engine.sink = None
        self._log_fh.close()

    def lock(self, timeout: float = 10.0) -> FileLock:
        return FileLock(str(self.directory / LOCK_FILE), timeout=timeout)

    # ------------------------------------------------------------ persistence

    def _write_event(self, ev: Event) -> None:
        self._log_fh.write(ev.to_json() + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def annotation_events(self) -> list[AnnotationEvent]:
        """Audit trail: every annotation recorded in the log, in order."""
        out: list[AnnotationEvent] = []
        log_path = self.directory / LOG_FILE
        if not log_path.exists():
            return out
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                ev = Event.from_json(line)
                if ev.type != "annotate":
                    continue
                out.append(AnnotationEvent(
                    sample_id=str(ev.payload["id"]),
                    label=int(ev.payload["label"]),
                    annotator_alpha=float(ev.payload["alpha"]),
                    sequence=ev.seq,
                ))
        return out

    def snapshot_bytes(self) -> bytes:
        return build_session_snapshot(self.engine,
                                      (self.directory / CONFIG_FILE).read_text(encoding="utf-8"))

    def write_snapshot(self, path=None) -> Path:
        target = Path(path) if path else self.directory / SNAPSHOT_FILE
        tmp = target.with_suffix(".tmp")
        tmp.write_bytes(self.snapshot_bytes())
        os.replace(tmp, target)
        return target


def build_session_snapshot(engine: SelectionEngine, config_text: str) -> bytes:
    cfg_raw = config_text.encode("utf-8")
    index_raw = engine.index.snapshot()
    state_raw = engine.state_blob()
    return b"".join([
        SESSION_MAGIC, struct.pack("<H", SESSION_VERSION),
        struct.pack("<Q", engine.next_seq),
        struct.pack("<Q", len(cfg_raw)), cfg_raw,
        struct.pack("<Q", len(index_raw)), index_raw,
        struct.pack("<Q", len(state_raw)), state_raw,
    ])


def restore_engine_snapshot(engine: SelectionEngine, data: bytes) -> None:
    if len(data) < 14 or data[:4] != SESSION_MAGIC:
        raise SessionError(f"bad session snapshot magic, expected {SESSION_MAGIC!r}")
    version = struct.unpack("<H", data[4:6])[0]
    if version != SESSION_VERSION:
        raise SessionError(
            f"unsupported session snapshot version {version}, expected {SESSION_VERSION}")
    pos = 6
    next_seq = struct.unpack("<Q", data[pos : pos + 8])[0]
    pos += 8

    def take_block() -> bytes:
        nonlocal pos
        if pos + 8 > len(data):
            raise SessionError("truncated session snapshot")
        ln = struct.unpack("<Q", data[pos : pos + 8])[0]
        pos += 8
        if pos + ln > len(data):
            raise SessionError("truncated session snapshot block")
        out = data[pos : pos + ln]
        pos += ln
        return out

    take_block()  # config text; informational (the session owns its config file)
    index_raw = take_block()
    state_raw = take_block()
    if pos != len(data):
        raise SessionError("trailing bytes in session snapshot")
    engine.index = VectorIndex.restore(index_raw)
    engine.load_state_blob(state_raw)
    if engine.next_seq != next_seq:
        raise SessionError("session snapshot sequence position inconsistent")
