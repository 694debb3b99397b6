"""Query oracles: built-in desk-scale classifiers, defense wrappers, remote client.

Built-in models are immutable numpy forward passes with a plain-text file
format, small enough that attack behavior can be checked against closed-form
answers.  ``MaskedOracle`` enforces the fixed-pixel-count defense contract and
``RemoteOracle`` speaks a one-request-one-query JSON protocol over HTTP or a
subprocess pipe so external classifiers can be attacked.
"""

from __future__ import annotations

import json
import select
import shlex
import subprocess
import sys
import threading
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from scipy.special import softmax

from .core import ContractError, EvaluationError, InputTensor, QueryOracle
from .sampling import descending_order, neighborhood_variance

__all__ = [
    "ModelFormatError",
    "LinearSoftmaxModel",
    "TinyMLPModel",
    "ModelOracle",
    "MaskedOracle",
    "RemoteOracle",
    "predict",
    "variance_mask",
    "load_model",
    "save_model",
    "serve_model",
    "run_pipe_server",
]


class ModelFormatError(ValueError):
    """A model file failed to parse; the message carries the offending line."""


@dataclass(frozen=True)
class LinearSoftmaxModel:
    """Logits are an affine map of the flat input: ``W x + b``.

    The target-class loss of this model has a closed-form gradient, which makes
    it the reference oracle for surrogate-model checks.
    """

    weights: np.ndarray
    biases: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        b = np.asarray(self.biases, dtype=float).ravel()
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        h, w, c = self.shape
        if W.shape != (b.size, h * w * c):
            raise ContractError(
                f"weights {W.shape} inconsistent with {b.size} classes and shape {self.shape}"
            )
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ContractError("model parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.biases.size

    @property
    def n(self) -> int:
        h, w, c = self.shape
        return h * w * c

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise ContractError(f"input has {x.size} entries, model expects {self.n}")
        return self.weights @ x + self.biases

    def loss_gradient(self, x: np.ndarray, t: int) -> np.ndarray:
        """Exact gradient of the target-class loss with respect to the input.

        Equals ``sum_{j != t} p_j w_j / sum_{j != t} p_j - w_t`` with p the
        softmax of the logits.
        """
        p = softmax(self.predict(x))
        others = np.arange(self.num_classes) != t
        weights_avg = p[others] @ self.weights[others] / p[others].sum()
        return weights_avg - self.weights[t]


_ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class TinyMLPModel:
    """A small fully-connected net: affine layers with relu or tanh between them."""

    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    activation: str
    shape: tuple[int, int, int]

    def __post_init__(self):
        Ws = tuple(np.atleast_2d(np.asarray(W, dtype=float)) for W in self.layer_weights)
        bs = tuple(np.asarray(b, dtype=float).ravel() for b in self.layer_biases)
        object.__setattr__(self, "layer_weights", Ws)
        object.__setattr__(self, "layer_biases", bs)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if len(Ws) != len(bs) or not Ws:
            raise ContractError("need matching, nonempty weight and bias lists")
        h, w, c = self.shape
        fan_in = h * w * c
        for i, (W, b) in enumerate(zip(Ws, bs)):
            if W.shape != (b.size, fan_in):
                raise ContractError(
                    f"layer {i}: weights {W.shape} inconsistent with fan-in {fan_in}"
                )
            fan_in = b.size

    @property
    def num_classes(self) -> int:
        return self.layer_biases[-1].size

    @property
    def n(self) -> int:
        h, w, c = self.shape
        return h * w * c

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise ContractError(f"input has {x.size} entries, model expects {self.n}")
        act = _ACTIVATIONS[self.activation]
        z = x
        last = len(self.layer_weights) - 1
        for i, (W, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            z = W @ z + b
            if i != last:
                z = act(z)
        return z


def predict(model, x: np.ndarray) -> np.ndarray:
    """Deterministic logits of a built-in model at a flat input point."""
    return model.predict(x)


class ModelOracle(QueryOracle):
    """Counting oracle over a built-in model.  Models are immutable, so many
    oracle instances can share one model; counters are per instance."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def _logits(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict(x)


class MaskedOracle(QueryOracle):
    """Reject any query whose perturbation touches pixels outside the mask.

    The harness gives attacks a masked coordinate view, so a rejection here
    means an attack leaked outside its allowed support; it is a safety net,
    not the mechanism.
    """

    def __init__(self, inner: QueryOracle, reference: InputTensor, mask):
        self.inner = inner
        self.reference = reference
        mask = np.unique(np.asarray(mask, dtype=int))
        if mask.size == 0 or mask[0] < 0 or mask[-1] >= reference.n:
            raise ContractError("mask must be a nonempty subset of the pixel indices")
        self.mask = mask
        off = np.ones(reference.n, dtype=bool)
        off[mask] = False
        self._off_mask = off

    @property
    def query_count(self) -> int:
        return self.inner.query_count

    def query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        delta = x - self.reference.data
        if np.any(delta[self._off_mask] != 0.0):
            raise ContractError("query perturbs pixels outside the permitted mask")
        return self.inner.query(x)


class RemoteOracle(QueryOracle):
    """Client for classifiers served over HTTP or a subprocess pipe.

    One JSON request ``{"image": [...], "shape": [h, w, c]}`` yields one reply
    ``{"logits": [...]}`` and counts as exactly one query.  The counter only
    advances after a validated reply, so a timeout or malformed answer leaves
    the accounting untouched.  Requests are serialized; ``max_concurrency``
    callers may block on the lock at a time by contract.
    """

    def __init__(
        self,
        endpoint: str,
        num_classes: int,
        shape: tuple[int, int, int],
        timeout: float = 30.0,
        max_concurrency: int = 1,
    ):
        super().__init__()
        if num_classes < 2:
            raise ContractError("remote oracle needs at least 2 classes")
        self.endpoint = endpoint
        self.num_classes = int(num_classes)
        self.shape = tuple(int(s) for s in shape)
        self.timeout = float(timeout)
        self.max_concurrency = int(max_concurrency)
        self._lock = threading.Lock()
        self._proc = None
        if endpoint.startswith("pipe:"):
            self._proc = subprocess.Popen(
                shlex.split(endpoint[len("pipe:") :]),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
        elif not endpoint.startswith(("http://", "https://")):
            raise ContractError(f"unsupported endpoint {endpoint!r}")

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        request = json.dumps({"image": x.tolist(), "shape": list(self.shape)})
        with self._lock:
            if self._proc is not None:
                reply = self._pipe_round_trip(request)
            else:
                reply = self._http_round_trip(request)
        logits = self._validate_reply(reply)
        self.query_count += 1
        return logits

    def _http_round_trip(self, request: str) -> str:
        req = urllib.request.Request(
            self.endpoint,
            data=request.encode(),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode()
        except OSError as exc:
            raise EvaluationError(f"remote oracle round-trip failed: {exc}") from exc

    def _pipe_round_trip(self, request: str) -> str:
        proc = self._proc
        if proc.poll() is not None:
            raise EvaluationError("pipe oracle process has exited")
        try:
            proc.stdin.write(request + "\n")
            proc.stdin.flush()
        except OSError as exc:
            raise EvaluationError(f"pipe oracle write failed: {exc}") from exc
        ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
        if not ready:
            raise EvaluationError(f"pipe oracle timed out after {self.timeout}s")
        line = proc.stdout.readline()
        if not line:
            raise EvaluationError("pipe oracle closed its output")
        return line

    def _validate_reply(self, reply: str) -> np.ndarray:
        try:
            payload = json.loads(reply)
            logits = np.asarray(payload["logits"], dtype=float).ravel()
        except (ValueError, KeyError, TypeError) as exc:
            raise EvaluationError(f"malformed oracle reply: {exc}") from exc
        if logits.size != self.num_classes:
            raise EvaluationError(
                f"oracle replied with {logits.size} logits, expected {self.num_classes}"
            )
        if not np.all(np.isfinite(logits)):
            raise EvaluationError("oracle replied with non-finite logits")
        return logits


def variance_mask(X: InputTensor, k: int) -> np.ndarray:
    """Indices of the k pixels with the highest neighborhood variance.

    Ties resolve to the lower flat index; the result is sorted.
    """
    if not 1 <= k <= X.n:
        raise ContractError(f"need 1 <= k <= {X.n}, got {k}")
    order = descending_order(neighborhood_variance(X))
    return np.sort(order[:k])


# --- model files -----------------------------------------------------------
#
# Plain-text format: a header naming the kind, shape and class count, then
# labeled row-major arrays, one matrix row per line, closed by "end".  Floats
# are written with 17 significant digits so save(load(p)) is byte-identical.

_MAGIC = "dfo-model"


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in row)


def save_model(model, path) -> None:
    lines = [f"{_MAGIC} {_kind_of(model)}"]
    lines.append("shape " + " ".join(str(s) for s in model.shape))
    lines.append(f"classes {model.num_classes}")
    if isinstance(model, LinearSoftmaxModel):
        rows, cols = model.weights.shape
        lines.append(f"weights {rows} {cols}")
        lines.extend(_fmt_row(r) for r in model.weights)
        lines.append(f"biases {model.num_classes}")
        lines.append(_fmt_row(model.biases))
    else:
        lines.append(f"activation {model.activation}")
        lines.append(f"layers {len(model.layer_weights)}")
        for i, (W, b) in enumerate(zip(model.layer_weights, model.layer_biases)):
            lines.append(f"weights {i} {W.shape[0]} {W.shape[1]}")
            lines.extend(_fmt_row(r) for r in W)
            lines.append(f"biases {i} {b.size}")
            lines.append(_fmt_row(b))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _kind_of(model) -> str:
    if isinstance(model, LinearSoftmaxModel):
        return "linear_softmax"
    if isinstance(model, TinyMLPModel):
        return "tiny_mlp"
    raise ContractError(f"cannot serialize {type(model).__name__}")


class _Cursor:
    """Line reader that reports positions in parse errors."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, section: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise ModelFormatError(f"truncated file: missing {section} section")

    def error(self, message: str):
        raise ModelFormatError(f"line {self.pos}: {message}")


def _parse_header(cursor: _Cursor, keyword: str, count: int) -> list[str]:
    line = cursor.next(keyword)
    parts = line.split()
    if parts[0] != keyword:
        cursor.error(f"expected {keyword!r} section, found {parts[0]!r}")
    if len(parts) != count + 1:
        cursor.error(f"{keyword} header needs {count} fields, got {len(parts) - 1}")
    return parts[1:]


def _parse_ints(cursor: _Cursor, keyword: str, count: int) -> list[int]:
    fields = _parse_header(cursor, keyword, count)
    try:
        return [int(v) for v in fields]
    except ValueError:
        cursor.error(f"{keyword} header fields must be integers: {fields}")


def _parse_row(cursor: _Cursor, section: str, width: int) -> np.ndarray:
    line = cursor.next(section)
    try:
        row = np.array([float(v) for v in line.split()])
    except ValueError:
        cursor.error(f"non-numeric value in {section}")
    if row.size != width:
        cursor.error(f"{section}: expected {width} values, got {row.size}")
    return row


def _parse_matrix(cursor: _Cursor, section: str, rows: int, cols: int) -> np.ndarray:
    return np.array([_parse_row(cursor, section, cols) for _ in range(rows)])


def load_model(path):
    """Parse a model file; raises ModelFormatError with line positions."""
    with open(path) as fh:
        cursor = _Cursor(fh.read())
    magic = cursor.next("header").split()
    if len(magic) != 2 or magic[0] != _MAGIC:
        cursor.error(f"expected '{_MAGIC} <kind>' header")
    kind = magic[1]
    shape = tuple(_parse_ints(cursor, "shape", 3))
    n = shape[0] * shape[1] * shape[2]
    (classes,) = _parse_ints(cursor, "classes", 1)

    if kind == "linear_softmax":
        rows, cols = _parse_ints(cursor, "weights", 2)
        if (rows, cols) != (classes, n):
            cursor.error(
                f"weights declared {rows}x{cols}, header implies {classes}x{n}"
            )
        W = _parse_matrix(cursor, "weights", rows, cols)
        (blen,) = _parse_ints(cursor, "biases", 1)
        if blen != classes:
            cursor.error(f"biases declared {blen}, header implies {classes}")
        b = _parse_row(cursor, "biases", blen)
        model = LinearSoftmaxModel(weights=W, biases=b, shape=shape)
    elif kind == "tiny_mlp":
        (activation,) = _parse_header(cursor, "activation", 1)
        (n_layers,) = _parse_ints(cursor, "layers", 1)
        weights, biases = [], []
        fan_in = n
        for i in range(n_layers):
            idx, rows, cols = _parse_ints(cursor, "weights", 3)
            if idx != i:
                cursor.error(f"weights out of order: expected layer {i}, got {idx}")
            if cols != fan_in:
                cursor.error(f"layer {i} declared fan-in {cols}, expected {fan_in}")
            weights.append(_parse_matrix(cursor, f"weights[{i}]", rows, cols))
            idx, blen = _parse_ints(cursor, "biases", 2)
            if idx != i or blen != rows:
                cursor.error(f"layer {i} biases declared {blen}, expected {rows}")
            biases.append(_parse_row(cursor, f"biases[{i}]", blen))
            fan_in = rows
        if fan_in != classes:
            cursor.error(f"final layer has {fan_in} outputs, header declares {classes}")
        model = TinyMLPModel(
            layer_weights=tuple(weights),
            layer_biases=tuple(biases),
            activation=activation,
            shape=shape,
        )
    else:
        cursor.error(f"unknown model kind {kind!r}")

    closing = cursor.next("end")
    if closing != "end":
        cursor.error(f"expected 'end', found {closing!r}")
    return model


# --- wire protocol helpers ---------------------------------------------------


def serve_model(model, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Serve a built-in model over the JSON wire protocol; caller runs/stops it.

    Returns a ThreadingHTTPServer bound to (host, port); the chosen port is
    ``server.server_address[1]``.
    """

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
                logits = model.predict(np.asarray(payload["image"], dtype=float))
                body = json.dumps({"logits": logits.tolist()}).encode()
                self.send_response(200)
            except Exception as exc:  # malformed request: report, keep serving
                body = json.dumps({"error": str(exc)}).encode()
                self.send_response(400)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def run_pipe_server(model, stdin=None, stdout=None) -> None:
    """Answer JSON queries line by line until stdin closes (pipe transport)."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        payload = json.loads(line)
        logits = model.predict(np.asarray(payload["image"], dtype=float))
        stdout.write(json.dumps({"logits": logits.tolist()}) + "\n")
        stdout.flush()
