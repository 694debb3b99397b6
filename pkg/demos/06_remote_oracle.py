"""Attacking a classifier behind a wire: the remote oracle protocol.

A classifier anywhere can be attacked as long as it answers the JSON protocol
(request: {"image": [...], "shape": [h, w, c]}, reply: {"logits": [...]}).
This script serves a built-in model over local HTTP, points a RemoteOracle at
it, and runs the square attack across the wire.  One round-trip is one counted
query; timeouts and malformed replies surface as evaluation errors without
touching the counter.
"""

import threading

import numpy as np

from dfoattack import BaselineConfig, RemoteOracle, square_attack
from dfoattack.core import InputTensor
from dfoattack.targets import LinearSoftmaxModel, serve_model

rng = np.random.default_rng(5)
shape, classes = (6, 6, 3), 5
n = shape[0] * shape[1] * shape[2]

model = LinearSoftmaxModel(
    weights=rng.normal(size=(classes, n)) / np.sqrt(n),
    biases=0.1 * rng.normal(size=classes),
    shape=shape,
)

server = serve_model(model)  # binds an ephemeral port on localhost
thread = threading.Thread(target=server.serve_forever, daemon=True)
thread.start()
host, port = server.server_address
endpoint = f"http://{host}:{port}/"
print(f"serving the model at {endpoint}")

try:
    oracle = RemoteOracle(endpoint, num_classes=classes, shape=shape, timeout=10.0)
    X = InputTensor.from_array(rng.uniform(-0.5, 0.5, size=shape))
    clean = int(np.argmax(oracle.query(X.data)))
    target = (clean + 2) % classes
    print(f"clean prediction over the wire: {clean}; attacking toward {target}")

    config = BaselineConfig(algorithm="square", epsilon=0.15, max_queries=800)
    result = square_attack(oracle, X, target, config, rng=1)
    print(f"success: {result.success} after {result.queries} counted round-trips")
    print(f"oracle counter: {oracle.query_count} (the attack's spend plus our manual probe)")
finally:
    server.shutdown()
    thread.join()
print("server stopped")
