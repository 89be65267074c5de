#!/usr/bin/env python3
"""Candidate-code runner speaking newline-delimited JSON on stdio.

Single-threaded by design: one request line in, exactly one response
line out. Candidate code is compiled into a fresh namespace on every
load, both RNGs are reseeded from each call's seed, and candidate
stdout is redirected to stderr so nothing can corrupt the protocol.
The host enforces timeouts by killing the process; nothing here traps
runaway candidates.
"""

from __future__ import annotations

import base64
import json
import math
import random
import sys
import time
import traceback
from contextlib import redirect_stdout

import numpy as np

PROTOCOL_VERSION = 1


def pack_matrix(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(data.shape), "dtype": "f64",
            "data_b64": base64.b64encode(data.tobytes()).decode("ascii")}


def unpack_matrix(obj: dict) -> np.ndarray:
    if obj.get("dtype") != "f64":
        raise ValueError("unsupported dtype %r" % obj.get("dtype"))
    raw = base64.b64decode(obj["data_b64"])
    # frombuffer is read-only; candidates may mutate their inputs.
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def decode_value(value):
    if isinstance(value, dict) and "data_b64" in value:
        return unpack_matrix(value)
    if isinstance(value, list):
        return np.asarray(value)
    return value


def encode_value(value):
    if isinstance(value, np.ndarray):
        if value.ndim == 2 and value.dtype.kind == "f":
            return pack_matrix(value)
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [encode_value(v) for v in value]
    return value


def error_reply(kind: str, detail: str) -> dict:
    return {"ok": False, "kind": kind, "detail": detail}


def run_driver_binpack(payload: dict, fn) -> dict:
    """Online placement loop matching the host simulator exactly.

    Same feasibility rule (rest >= item, or > under strict_rest), the
    same first-index argmax tie-break, non-finite scores forced to -inf,
    and bins_used counting bins whose rest dropped below capacity.
    """
    items = [int(v) for v in payload["items"]]
    capacity = int(payload["capacity"])
    strict = bool(payload.get("strict_rest", False))
    rests = np.full(len(items), capacity, dtype=np.int64)
    for index, item in enumerate(items):
        feasible = np.flatnonzero(rests > item) if strict else np.flatnonzero(rests >= item)
        if feasible.size == 0:
            raise RuntimeError("no feasible bin for item index %d" % index)
        try:
            scores = np.asarray(fn(item, rests[feasible]), dtype=np.float64)
        except Exception as exc:
            raise RuntimeError("candidate failed at item index %d: %s"
                               % (index, exc)) from exc
        if scores.shape != feasible.shape:
            raise RuntimeError(
                "candidate returned shape %r for %d feasible bins at item index %d"
                % (scores.shape, feasible.size, index))
        scores = np.where(np.isfinite(scores), scores, -np.inf)
        rests[feasible[int(np.argmax(scores))]] -= item
    used = int(np.sum(rests < capacity))
    loads = [int(capacity - r) for r in rests if r < capacity]
    return {"bins_used": used, "loads": loads}


DRIVERS = {"binpack_online": run_driver_binpack}


class WorkerState:
    def __init__(self) -> None:
        self.fn = None
        self.fn_name = None

    def load(self, code: str, fn_name: str) -> dict:
        namespace = {"np": np, "math": math}
        try:
            with redirect_stdout(sys.stderr):
                exec(code, namespace)
        except Exception:
            self.fn = None
            return error_reply("CompileError", traceback.format_exc(limit=3))
        fn = namespace.get(fn_name)
        if not callable(fn):
            self.fn = None
            return error_reply("CompileError", "function not defined: %r" % fn_name)
        self.fn = fn
        self.fn_name = fn_name
        return {"ok": True}

    def _seed(self, seed: int) -> None:
        np.random.seed(seed % 2 ** 32)
        random.seed(seed)

    def call(self, args: dict, seed: int) -> dict:
        if self.fn is None:
            return error_reply("ProtocolError", "no function loaded")
        decoded = {name: decode_value(value) for name, value in args.items()}
        self._seed(seed)
        start = time.perf_counter()
        try:
            with redirect_stdout(sys.stderr):
                result = self.fn(**decoded)
        except Exception:
            return error_reply("RuntimeError", traceback.format_exc(limit=5))
        elapsed = int((time.perf_counter() - start) * 1000)
        try:
            encoded = encode_value(result)
        except Exception:
            return error_reply("RuntimeError",
                               "result not encodable: " + traceback.format_exc(limit=2))
        return {"ok": True, "result": encoded, "elapsed_ms": elapsed}

    def eval(self, driver: str, payload: dict, seed: int) -> dict:
        if self.fn is None:
            return error_reply("ProtocolError", "no function loaded")
        runner = DRIVERS.get(driver)
        if runner is None:
            return error_reply("UnknownDriver", "no driver named %r" % driver)
        self._seed(seed)
        start = time.perf_counter()
        try:
            with redirect_stdout(sys.stderr):
                result = runner(payload, self.fn)
        except Exception:
            return error_reply("RuntimeError", traceback.format_exc(limit=5))
        elapsed = int((time.perf_counter() - start) * 1000)
        return {"ok": True, "result": result, "elapsed_ms": elapsed}


def handle_request(state: WorkerState, request: dict) -> tuple[dict, bool]:
    op = request.get("op")
    if op == "hello":
        return {"ok": True, "version": PROTOCOL_VERSION}, False
    if op == "load":
        return state.load(str(request.get("code", "")), str(request.get("fn", ""))), False
    if op == "call":
        args = request.get("args")
        if not isinstance(args, dict):
            return error_reply("ProtocolError", "call needs an args object"), False
        return state.call(args, int(request.get("seed", 0))), False
    if op == "eval":
        payload = request.get("payload")
        if not isinstance(payload, dict):
            return error_reply("ProtocolError", "eval needs a payload object"), False
        return state.eval(str(request.get("driver", "")), payload,
                          int(request.get("seed", 0))), False
    if op == "exit":
        return {"ok": True}, True
    return error_reply("ProtocolError", "unknown op %r" % op), False


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    state = WorkerState()
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request is not an object")
        except ValueError as exc:
            reply, done = error_reply("ProtocolError", "bad request line: %s" % exc), False
        else:
            try:
                reply, done = handle_request(state, request)
            except Exception:
                reply, done = error_reply("ProtocolError",
                                          traceback.format_exc(limit=3)), False
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
        if done:
            return 0
    return 0


if __name__ == "__main__":
    sys.exit(serve())
