"""Host side of the candidate sandbox: worker subprocesses and evaluators.

A WorkerHandle owns one child process speaking newline-delimited JSON.
Timeouts are enforced here by killing the child; the pool respawns it.
NativeRegistryEvaluator is the hermetic stand-in: it resolves exact code
text to a registered in-process twin and refuses anything unknown.
"""

from __future__ import annotations

import base64
import json
import os
import queue
import random
import select
import shlex
import shutil
import subprocess
import sys
import threading
import time
import traceback
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import binpacking
from .sources import native_registry

HANDSHAKE_TIMEOUT_S = 2.0
LOAD_TIMEOUT_S = 10.0
DEFAULT_CALL_TIMEOUT_MS = 2_000
DEFAULT_EVAL_TIMEOUT_MS = 60_000
STDERR_RING_LINES = 400

WORKER_ENV_VAR = "HEUREVO_WORKER"
WORKER_EXECUTABLE = "heurevo-worker"
_REPO_WORKER = Path(__file__).resolve().parents[2] / "worker" / "heurevo_worker.py"


class SpawnFailure(RuntimeError):
    pass


class HandshakeTimeout(RuntimeError):
    pass


class _ReadTimeout(Exception):
    pass


class _PeerClosed(Exception):
    pass


@dataclass(frozen=True)
class CallError:
    kind: str
    detail: str


@dataclass(frozen=True)
class CallResult:
    ok: bool
    value: object = None
    error: CallError | None = None
    elapsed_ms: int = 0

    def error_text(self) -> str:
        if self.error is None:
            return ""
        return "%s: %s" % (self.error.kind, self.error.detail)


def _failure(kind: str, detail: str, elapsed_ms: int = 0) -> CallResult:
    return CallResult(ok=False, error=CallError(kind, detail), elapsed_ms=elapsed_ms)


def pack_matrix(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(data.shape), "dtype": "f64",
            "data_b64": base64.b64encode(data.tobytes()).decode("ascii")}


def unpack_matrix(obj: dict) -> np.ndarray:
    if obj.get("dtype") != "f64":
        raise ValueError("unsupported dtype %r" % obj.get("dtype"))
    raw = base64.b64decode(obj["data_b64"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def encode_value(value):
    if isinstance(value, np.ndarray):
        if value.ndim == 2 and value.dtype.kind == "f":
            return pack_matrix(value)
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [encode_value(v) for v in value]
    if isinstance(value, dict):
        return {k: encode_value(v) for k, v in value.items()}
    return value


def decode_value(value):
    if isinstance(value, dict) and "data_b64" in value:
        return unpack_matrix(value)
    if isinstance(value, dict):
        return {k: decode_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [decode_value(v) for v in value]
    return value


def default_worker_command() -> list[str]:
    """Resolve the worker argv: env override, PATH entry, then repo layout."""
    override = os.environ.get(WORKER_ENV_VAR)
    if override:
        return shlex.split(override)
    on_path = shutil.which(WORKER_EXECUTABLE)
    if on_path:
        return [on_path]
    if _REPO_WORKER.is_file():
        return [sys.executable, str(_REPO_WORKER)]
    raise SpawnFailure(
        "no worker runtime found: set %s, install %s, or keep the worker "
        "script next to the package checkout" % (WORKER_ENV_VAR, WORKER_EXECUTABLE))


class WorkerHandle:
    """One sandbox child. States: spawned -> loaded -> dead."""

    def __init__(self, command: Sequence[str],
                 handshake_timeout: float = HANDSHAKE_TIMEOUT_S) -> None:
        self.command = list(command)
        self.state = "dead"
        self.protocol_version = 0
        self.loaded_function: str | None = None
        self._buffer = b""
        self._stderr_ring: deque[str] = deque(maxlen=STDERR_RING_LINES)
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, bufsize=0)
        except OSError as exc:
            raise SpawnFailure("cannot start worker %r: %s" % (self.command, exc))
        self._stderr_thread = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_thread.start()
        self.state = "spawned"
        try:
            reply = self._request({"op": "hello"}, handshake_timeout)
        except (_ReadTimeout, _PeerClosed, ValueError):
            self.kill()
            raise HandshakeTimeout("no valid handshake from %r" % self.command)
        if reply.get("ok") is not True or not isinstance(reply.get("version"), int):
            self.kill()
            raise HandshakeTimeout("bad handshake reply %r" % reply)
        self.protocol_version = reply["version"]

    def _drain_stderr(self) -> None:
        stream = self._proc.stderr
        if stream is None:
            return
        for raw in stream:
            self._stderr_ring.append(raw.decode("utf-8", errors="replace").rstrip("\n"))

    def stderr_tail(self, n: int = 20) -> str:
        return "\n".join(list(self._stderr_ring)[-n:])

    def _request(self, message: dict, timeout_s: float) -> dict:
        """One request line out, one reply line in. Raises on silence."""
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(message).encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise _PeerClosed("worker stdin closed")
        line = self._read_line(timeout_s)
        reply = json.loads(line)
        if not isinstance(reply, dict):
            raise ValueError("reply is not an object")
        return reply

    def _read_line(self, timeout_s: float) -> str:
        assert self._proc.stdout is not None
        deadline = time.monotonic() + timeout_s
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise _ReadTimeout()
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 1 << 16)
            if not chunk:
                raise _PeerClosed("worker stdout closed")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def load(self, code: str, function_name: str,
             timeout_s: float = LOAD_TIMEOUT_S) -> CallResult:
        if self.state == "dead":
            return _failure("ProtocolError", "worker is dead")
        start = time.monotonic()
        try:
            reply = self._request({"op": "load", "code": code, "fn": function_name},
                                  timeout_s)
        except _ReadTimeout:
            self.kill()
            return _failure("Timeout", "load did not finish in %.1fs" % timeout_s)
        except (_PeerClosed, ValueError) as exc:
            self.kill()
            return _failure("ProtocolError", "%s; stderr: %s" % (exc, self.stderr_tail()))
        elapsed = int((time.monotonic() - start) * 1000)
        if reply.get("ok"):
            self.state = "loaded"
            self.loaded_function = function_name
            return CallResult(ok=True, elapsed_ms=elapsed)
        self.loaded_function = None
        if self.state == "loaded":
            self.state = "spawned"
        return _failure(str(reply.get("kind", "ProtocolError")),
                        str(reply.get("detail", "")), elapsed)

    def _roundtrip(self, message: dict, timeout_ms: int) -> CallResult:
        if self.state != "loaded":
            return _failure("ProtocolError", "no function loaded (state=%s)" % self.state)
        start = time.monotonic()
        try:
            reply = self._request(message, timeout_ms / 1000.0)
        except _ReadTimeout:
            elapsed = int((time.monotonic() - start) * 1000)
            self.kill()
            return _failure("Timeout", "no reply within %d ms" % timeout_ms, elapsed)
        except (_PeerClosed, ValueError) as exc:
            elapsed = int((time.monotonic() - start) * 1000)
            self.kill()
            return _failure("ProtocolError",
                            "%s; stderr: %s" % (exc, self.stderr_tail()), elapsed)
        elapsed = int((time.monotonic() - start) * 1000)
        if reply.get("ok"):
            return CallResult(ok=True, value=decode_value(reply.get("result")),
                              elapsed_ms=elapsed)
        return _failure(str(reply.get("kind", "ProtocolError")),
                        str(reply.get("detail", "")), elapsed)

    def call(self, args: dict, seed: int,
             timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS) -> CallResult:
        return self._roundtrip({"op": "call", "args": encode_value(args),
                                "seed": int(seed)}, timeout_ms)

    def eval_driver(self, driver: str, payload: dict, seed: int,
                    timeout_ms: int = DEFAULT_EVAL_TIMEOUT_MS) -> CallResult:
        return self._roundtrip({"op": "eval", "driver": driver,
                                "payload": encode_value(payload),
                                "seed": int(seed)}, timeout_ms)

    def kill(self) -> None:
        """Hard stop and reap; the handle stays dead."""
        self.state = "dead"
        self.loaded_function = None
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass
        self._stderr_thread.join(timeout=1.0)

    def close(self) -> None:
        """Polite stop: ask the worker to exit, then make sure it did."""
        if self.state != "dead" and self._proc.poll() is None:
            try:
                self._request({"op": "exit"}, 0.5)
                self._proc.wait(timeout=0.5)
            except (_ReadTimeout, _PeerClosed, ValueError,
                    subprocess.TimeoutExpired):
                pass
        self.kill()

    def __enter__(self) -> "WorkerHandle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def spawn_worker(worker_command: Sequence[str] | None = None) -> WorkerHandle:
    return WorkerHandle(worker_command or default_worker_command())


class _SandboxFunction:
    """A loaded candidate inside one worker, bound for one open() scope."""

    def __init__(self, handle: WorkerHandle, load_error: CallResult | None) -> None:
        self._handle = handle
        self.load_error = load_error

    def call(self, args: dict, seed: int,
             timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS) -> CallResult:
        if self.load_error is not None:
            return self.load_error
        return self._handle.call(args, seed, timeout_ms)

    def eval_driver(self, driver: str, payload: dict, seed: int,
                    timeout_ms: int = DEFAULT_EVAL_TIMEOUT_MS) -> CallResult:
        if self.load_error is not None:
            return self.load_error
        return self._handle.eval_driver(driver, payload, seed, timeout_ms)


class SandboxEvaluator:
    """Pool of workers; one handle per concurrently open candidate."""

    def __init__(self, worker_command: Sequence[str] | None = None,
                 pool_size: int = 1) -> None:
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.worker_command = (list(worker_command) if worker_command
                               else default_worker_command())
        self.pool_size = pool_size
        self._idle: queue.Queue[WorkerHandle] = queue.Queue()
        self._lock = threading.Lock()
        self._spawned = 0
        self._live: list[WorkerHandle] = []

    def _spawn(self) -> WorkerHandle:
        handle = WorkerHandle(self.worker_command)
        with self._lock:
            self._live.append(handle)
        return handle

    def _forget(self, handle: WorkerHandle) -> None:
        with self._lock:
            if handle in self._live:
                self._live.remove(handle)

    def _acquire(self) -> WorkerHandle:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            can_grow = self._spawned < self.pool_size
            if can_grow:
                self._spawned += 1
        if can_grow:
            try:
                return self._spawn()
            except Exception:
                with self._lock:
                    self._spawned -= 1
                raise
        return self._idle.get()

    def _release(self, handle: WorkerHandle) -> None:
        if handle.state == "dead":
            self._forget(handle)
            try:
                handle = self._spawn()
            except Exception:
                with self._lock:
                    self._spawned -= 1
                return
        self._idle.put(handle)

    @contextmanager
    def open(self, code: str, function_name: str) -> Iterator[_SandboxFunction]:
        handle = self._acquire()
        try:
            load_result = handle.load(code, function_name)
            yield _SandboxFunction(handle,
                                   None if load_result.ok else load_result)
        finally:
            self._release(handle)

    def close(self) -> None:
        with self._lock:
            live = list(self._live)
            self._live.clear()
            self._spawned = 0
        for handle in live:
            handle.close()
        while True:
            try:
                self._idle.get_nowait()
            except queue.Empty:
                break

    def __enter__(self) -> "SandboxEvaluator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


_NATIVE_RNG_LOCK = threading.Lock()


def _native_binpack_driver(fn: Callable, payload: dict) -> dict:
    used, rests = binpacking.simulate_online(
        payload["items"], int(payload["capacity"]), fn,
        strict_rest=bool(payload.get("strict_rest", False)), return_rests=True)
    capacity = int(payload["capacity"])
    loads = [int(capacity - r) for r in rests if r < capacity]
    return {"bins_used": used, "loads": loads}


NATIVE_DRIVERS: dict[str, Callable] = {"binpack_online": _native_binpack_driver}


class _NativeFunction:
    def __init__(self, native: Callable | None, load_error: CallResult | None) -> None:
        self._native = native
        self.load_error = load_error

    def _run(self, work: Callable, seed: int) -> CallResult:
        if self.load_error is not None:
            return self.load_error
        # The twins share the process-global RNGs, so seeding and calling
        # must be atomic across threads.
        with _NATIVE_RNG_LOCK:
            np.random.seed(seed % 2 ** 32)
            random.seed(seed)
            start = time.perf_counter()
            try:
                value = work()
            except Exception:
                return _failure("RuntimeError", traceback.format_exc(limit=5))
            elapsed = int((time.perf_counter() - start) * 1000)
        return CallResult(ok=True, value=value, elapsed_ms=elapsed)

    def call(self, args: dict, seed: int,
             timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS) -> CallResult:
        return self._run(lambda: self._native(**args), seed)

    def eval_driver(self, driver: str, payload: dict, seed: int,
                    timeout_ms: int = DEFAULT_EVAL_TIMEOUT_MS) -> CallResult:
        if self.load_error is not None:
            return self.load_error
        runner = NATIVE_DRIVERS.get(driver)
        if runner is None:
            return _failure("UnknownDriver", "no driver named %r" % driver)
        return self._run(lambda: runner(self._native, payload), seed)


class NativeRegistryEvaluator:
    """Maps exact code text to in-process twins; refuses anything else."""

    def __init__(self, registry: dict[str, Callable] | None = None) -> None:
        self.registry = dict(registry) if registry is not None else native_registry()

    @contextmanager
    def open(self, code: str, function_name: str) -> Iterator[_NativeFunction]:
        native = self.registry.get(code)
        if native is None:
            yield _NativeFunction(None, _failure(
                "CompileError", "no native twin registered for this code text"))
        else:
            yield _NativeFunction(native, None)

    def close(self) -> None:
        pass

    def __enter__(self) -> "NativeRegistryEvaluator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass(frozen=True)
class ProbeCase:
    """One tiny feasibility input plus its result validator."""

    args: dict
    validate: Callable[[object], str | None]
    timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS


def probe_feasibility(evaluator, code: str, function_name: str,
                      probes: Sequence[ProbeCase],
                      seed: int = 0) -> tuple[bool, str | None]:
    """Load the code and run every probe; any failure is reported, not raised."""
    if not code:
        return False, "empty code"
    with evaluator.open(code, function_name) as fn:
        if fn.load_error is not None:
            return False, fn.load_error.error_text()
        for probe in probes:
            result = fn.call(probe.args, seed=seed, timeout_ms=probe.timeout_ms)
            if not result.ok:
                return False, result.error_text()
            problem = probe.validate(result.value)
            if problem:
                return False, problem
    return True, None
