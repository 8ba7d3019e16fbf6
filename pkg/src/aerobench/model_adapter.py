"""Prediction exchange with external model processes.

Adapters are executables that understand two invocations::

    <command> predict --input <in.apf> --output <out.apf>
    <command> serve        # persistent mode, see ``profile``

Sample and prediction files use the APF1 binary format below.
"""

from __future__ import annotations

import os
import queue
import shlex
import statistics
import struct
import subprocess
import sys
import tempfile
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import psutil

from .errors import (
    AdapterCrash,
    AdapterTimeout,
    BadMagic,
    ChecksumMismatch,
    CountMismatch,
    MeshFormatError,
    ProtocolViolation,
    TruncatedStream,
    UnknownDtype,
    VersionMismatch,
)
from .fields import FieldPrediction, Space
from .geometry_sampling import SampleSet

APF_MAGIC = b"APF1"
APF_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {"f4": 0, "f8": 1}
DEFAULT_TIMEOUT_S = 300.0


@dataclass
class ApfRecord:
    """Decoded APF file: header fields plus named float arrays (held as f64)."""

    design_id: str
    space: Space = Space.PHYSICAL
    sample_seed: int = 0
    arrays: dict = field(default_factory=dict)
    dtypes: dict = field(default_factory=dict)  # on-disk dtype per array ("f4" / "f8")


def write_apf(record: ApfRecord) -> bytes:
    """Layout (little-endian): magic, u32 version, payload, CRC32(payload).

    Payload: u32-length-prefixed UTF-8 design id, u8 space flag, u64 sample
    seed, u32 array count, then per array a length-prefixed name, u8 dtype
    (0=f32, 1=f64), u64 value count and the raw values.
    """
    raw_id = record.design_id.encode("utf-8")
    parts = [
        struct.pack("<I", len(raw_id)),
        raw_id,
        struct.pack("<BQI", int(record.space), int(record.sample_seed), len(record.arrays)),
    ]
    for name, values in record.arrays.items():
        dtype = record.dtypes.get(name, "f8")
        if dtype not in _DTYPE_CODES:
            raise UnknownDtype(f"cannot write dtype {dtype!r}")
        raw_name = name.encode("utf-8")
        flat = np.ascontiguousarray(np.asarray(values).reshape(-1), dtype="<" + dtype)
        parts += [
            struct.pack("<I", len(raw_name)),
            raw_name,
            struct.pack("<BQ", _DTYPE_CODES[dtype], len(flat)),
            flat.tobytes(),
        ]
    body = b"".join(parts)
    return APF_MAGIC + struct.pack("<I", APF_VERSION) + body + struct.pack("<I", zlib.crc32(body))


def read_apf(data: bytes) -> ApfRecord:
    data = bytes(data)
    if len(data) < 8:
        raise TruncatedStream("APF stream shorter than its header")
    if data[:4] != APF_MAGIC:
        raise BadMagic(f"expected {APF_MAGIC!r}, got {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != APF_VERSION:
        raise VersionMismatch(f"APF version {version}, reader supports {APF_VERSION}")
    end = len(data) - 4
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise TruncatedStream(f"stream ends inside {what}")
        out = data[pos:pos + n]
        pos += n
        return out

    (id_len,) = struct.unpack("<I", take(4, "design id length"))
    design_id = take(id_len, "design id").decode("utf-8")
    space_code, seed, n_arrays = struct.unpack("<BQI", take(13, "header"))
    try:
        space = Space(space_code)
    except ValueError:
        raise MeshFormatError(f"unknown space flag {space_code}") from None
    arrays, dtypes = {}, {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<I", take(4, "array name length"))
        name = take(name_len, "array name").decode("utf-8")
        code, count = struct.unpack("<BQ", take(9, "array header"))
        if code not in _DTYPES:
            raise UnknownDtype(f"array {name!r}: dtype code {code}")
        dtype = np.dtype(_DTYPES[code])
        nbytes = count * dtype.itemsize
        if pos + nbytes > end:
            have = (end - pos) // dtype.itemsize
            raise CountMismatch(f"array {name!r} declares {count} values, stream holds {have}")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
        dtypes[name] = dtype.str[1:]
        pos += nbytes
    if pos != end:
        raise CountMismatch(f"{end - pos} unexpected byte(s) after the last array")
    (crc,) = struct.unpack("<I", data[end:])
    if zlib.crc32(data[8:end]) != crc:
        raise ChecksumMismatch("APF payload CRC32 mismatch")
    return ApfRecord(design_id, space, seed, arrays, dtypes)


def sample_to_apf(sample: SampleSet, include_truth: bool = False) -> ApfRecord:
    arrays = {"points": np.asarray(sample.points, dtype=np.float64).reshape(-1)}
    if sample.normals is not None:
        arrays["normals"] = np.asarray(sample.normals, dtype=np.float64).reshape(-1)
    if include_truth and sample.truth is not None:
        arrays["truth"] = sample.truth
    return ApfRecord(sample.design_id, Space.PHYSICAL, sample.seed, arrays)


def prediction_to_apf(pred: FieldPrediction) -> ApfRecord:
    arrays = {"prediction": pred.values}
    if pred.n_params is not None:
        arrays["param_count"] = np.array([pred.n_params], dtype=np.float64)
    return ApfRecord(pred.design_id, pred.space, pred.sample_seed, arrays)


def apf_to_prediction(record: ApfRecord, model_name: str = "") -> FieldPrediction:
    if "prediction" not in record.arrays:
        raise CountMismatch(f"{record.design_id}: no 'prediction' array")
    n_params = record.arrays.get("param_count")
    return FieldPrediction(
        record.design_id,
        record.arrays["prediction"],
        record.space,
        record.sample_seed,
        model_name,
        float(n_params[0]) if n_params is not None and len(n_params) else None,
    )


def points_of(record: ApfRecord) -> np.ndarray:
    pts = record.arrays.get("points")
    if pts is None or pts.size % 3:
        raise CountMismatch(f"{record.design_id}: 'points' missing or not a multiple of 3")
    return pts.reshape(-1, 3)


def save_apf(record: ApfRecord, path) -> None:
    Path(path).write_bytes(write_apf(record))


def load_apf(path) -> ApfRecord:
    return read_apf(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# batch prediction
# ---------------------------------------------------------------------------


def command_argv(command) -> list[str]:
    if isinstance(command, (list, tuple)):
        return [str(c).replace("{python}", sys.executable) for c in command]
    return shlex.split(command.replace("{python}", shlex.quote(sys.executable)))


@dataclass
class BatchResult:
    predictions: dict  # design_id -> FieldPrediction
    failures: dict  # design_id -> message


def _predict_one(argv, design_id, in_path, out_path, expected_n, timeout, model_name):
    try:
        proc = subprocess.run(
            argv + ["predict", "--input", str(in_path), "--output", str(out_path)],
            capture_output=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        raise AdapterTimeout(design_id, timeout) from None
    except OSError as exc:
        raise AdapterCrash(design_id, f"cannot start adapter: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace").strip().splitlines()[-1:] or [""]
        raise AdapterCrash(design_id, f"exit code {proc.returncode}: {tail[0]}")
    try:
        pred = apf_to_prediction(load_apf(out_path), model_name)
    except (OSError, MeshFormatError) as exc:
        raise AdapterCrash(design_id, f"malformed output: {exc}") from None
    if pred.design_id != design_id:
        raise AdapterCrash(design_id, f"output is for design {pred.design_id!r}")
    if pred.n != expected_n:
        raise AdapterCrash(design_id, f"{pred.n} predictions for {expected_n} points")
    return pred


def run_batch(
    command,
    samples: list,
    work_dir,
    timeout: float = DEFAULT_TIMEOUT_S,
    workers: int = 1,
    model_name: str = "",
    include_truth: bool = False,
) -> BatchResult:
    """Run ``command predict`` once per sample; failures are recorded, not raised.

    ``samples`` holds :class:`SampleSet` objects.  Results are keyed by
    design id so the outcome does not depend on completion order.
    """
    argv = command_argv(command)
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, sample in enumerate(samples):
        in_path = work_dir / f"{i:06d}.in.apf"
        out_path = work_dir / f"{i:06d}.out.apf"
        save_apf(sample_to_apf(sample, include_truth), in_path)
        jobs.append((sample.design_id, in_path, out_path, sample.n))

    def run(job):
        design_id, in_path, out_path, n = job
        try:
            return design_id, _predict_one(argv, design_id, in_path, out_path, n, timeout, model_name), None
        except (AdapterCrash, AdapterTimeout) as exc:
            return design_id, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]
    preds = {d: p for d, p, err in outcomes if err is None}
    failures = {d: err for d, p, err in outcomes if err is not None}
    return BatchResult(dict(sorted(preds.items())), dict(sorted(failures.items())))


# ---------------------------------------------------------------------------
# profiling
# ---------------------------------------------------------------------------

MIN_TIMED_RUNS = 30


@dataclass
class EfficiencyProfile:
    mean_latency_ms: float
    latency_std_ms: float
    throughput_sps: float
    peak_memory_gb: float
    n_warmup: int
    n_timed: int
    batch_size: int = 1
    peak_memory_source: str = "adapter"
    memory_semantics: str = "unspecified"
    latencies_ms: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_timed < MIN_TIMED_RUNS:
            raise ValueError(f"n_timed must be >= {MIN_TIMED_RUNS}")
        if not self.throughput_sps > 0:
            raise ValueError("throughput must be positive")

    @classmethod
    def from_latencies(cls, latencies_ms, peak_bytes: int, n_warmup: int, source: str, semantics: str):
        mean = statistics.fmean(latencies_ms)
        return cls(
            mean_latency_ms=mean,
            latency_std_ms=statistics.stdev(latencies_ms),
            throughput_sps=1000.0 / mean,
            peak_memory_gb=peak_bytes / 1e9,
            n_warmup=n_warmup,
            n_timed=len(latencies_ms),
            peak_memory_source=source,
            memory_semantics=semantics,
            latencies_ms=list(latencies_ms),
        )

    def to_dict(self, include_latencies: bool = False) -> dict:
        doc = asdict(self)
        if not include_latencies:
            doc.pop("latencies_ms")
        return doc


class _LineReader:
    def __init__(self, stream):
        self.lines: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self.lines.put(line)
        self.lines.put(None)

    def get(self, timeout: float):
        return self.lines.get(timeout=timeout)


class _RssPoller:
    def __init__(self, pid: int, interval: float = 0.005):
        self.peak = 0
        self._proc = psutil.Process(pid)
        self._stop = threading.Event()
        self._interval = interval
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def sample(self):
        try:
            self.peak = max(self.peak, self._proc.memory_info().rss)
        except psutil.Error:
            pass

    def _run(self):
        while not self._stop.wait(self._interval):
            self.sample()

    def stop(self):
        self._stop.set()
        self._thread.join()


def profile(
    command,
    samples: list,
    n_warmup: int = 10,
    n_timed: int = 100,
    timeout: float = DEFAULT_TIMEOUT_S,
    memory_semantics: str = "unspecified",
) -> EfficiencyProfile:
    """Latency, throughput and peak memory at batch size 1 in persistent mode.

    Input files are written before timing starts; each timed call spans the
    ``RUN <in> <out>`` write to the matching ``OK <bytes>`` line.  Outputs
    are thrown away.  If the adapter reports 0 bytes the resident set of the
    adapter process, polled every few milliseconds, is used instead.
    """
    if n_timed < MIN_TIMED_RUNS:
        raise ValueError(f"n_timed must be >= {MIN_TIMED_RUNS}")
    if not samples:
        raise ValueError("profiling needs at least one sample")
    with tempfile.TemporaryDirectory(prefix="aerobench-profile-") as tmp:
        tmp = Path(tmp)
        inputs = []
        for i, sample in enumerate(samples):
            path = tmp / f"{i:06d}.in.apf"
            save_apf(sample_to_apf(sample), path)
            inputs.append(path)
        out_path = tmp / "discard.apf"
        proc = subprocess.Popen(
            command_argv(command) + ["serve"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        reader = _LineReader(proc.stdout)
        poller = _RssPoller(proc.pid)
        latencies, reported = [], 0
        try:
            for call in range(n_warmup + n_timed):
                in_path = inputs[call % len(inputs)]
                start = time.perf_counter()
                proc.stdin.write(f"RUN {in_path} {out_path}\n")
                proc.stdin.flush()
                try:
                    line = reader.get(timeout)
                except queue.Empty:
                    raise AdapterTimeout(f"call {call}", timeout) from None
                elapsed = (time.perf_counter() - start) * 1000.0
                poller.sample()
                if line is None:
                    raise ProtocolViolation("adapter closed its output")
                words = line.split()
                if not words or words[0] != "OK" or len(words) < 2:
                    raise ProtocolViolation(f"unexpected reply {line.strip()!r}")
                try:
                    reported = max(reported, int(words[1]))
                except ValueError:
                    raise ProtocolViolation(f"bad byte count in {line.strip()!r}") from None
                if call >= n_warmup:
                    latencies.append(elapsed)
        finally:
            poller.stop()
            try:
                proc.stdin.write("QUIT\n")
                proc.stdin.flush()
                proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired, ValueError):
                proc.kill()
                proc.wait()
    if reported > 0:
        peak, source = reported, "adapter"
    else:
        peak, source = poller.peak, "rss_poll"
    return EfficiencyProfile.from_latencies(latencies, peak, n_warmup, source, memory_semantics)


def serve_loop(handle, stdin=None, stdout=None) -> None:
    """Adapter-side persistent loop; ``handle(in, out)`` returns peak bytes (or 0)."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        words = line.split()
        if not words:
            continue
        if words[0] == "QUIT":
            break
        if words[0] != "RUN" or len(words) != 3:
            stdout.write(f"ERR bad command {line.strip()!r}\n")
            stdout.flush()
            continue
        try:
            peak = int(handle(words[1], words[2]) or 0)
            stdout.write(f"OK {peak}\n")
        except Exception as exc:  # the harness decides what an error means
            stdout.write(f"ERR {type(exc).__name__}: {exc}\n")
        stdout.flush()


def env_with_package() -> dict:
    """Environment for child processes that can import this package."""
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parent.parent)
    env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
    return env
