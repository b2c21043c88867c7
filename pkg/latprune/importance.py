import json
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import TraceError
from .utils.io import read_json, read_lines, write_json, write_text

log = logging.getLogger(__name__)

BN_FIELDS = ("gamma", "beta", "grad_gamma", "grad_beta")


def neuron_importance(gamma, beta, grad_gamma, grad_beta):
    """|g_gamma * gamma + g_beta * beta|, elementwise for arrays"""
    terms = [np.asarray(v, dtype=np.float64)
             for v in (gamma, beta, grad_gamma, grad_beta)]
    if not all(np.all(np.isfinite(t)) for t in terms):
        raise TraceError("Importance inputs must be finite")
    score = np.abs(terms[2] * terms[0] + terms[3] * terms[1])
    if score.ndim == 0:
        return float(score)
    return score


@dataclass(frozen=True, eq=False)
class LayerBN:
    gamma: np.ndarray
    beta: np.ndarray
    grad_gamma: np.ndarray
    grad_beta: np.ndarray

    def __post_init__(self):
        lengths = set()
        for name in BN_FIELDS:
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.ndim != 1:
                raise TraceError("{} must be one-dimensional".format(name))
            lengths.add(len(values))
            object.__setattr__(self, name, values)
        if len(lengths) != 1:
            raise TraceError("BN arrays differ in length: {}".format(
                sorted(lengths)))

    def __len__(self):
        return len(self.gamma)

    def importance(self):
        return neuron_importance(self.gamma, self.beta, self.grad_gamma,
                                 self.grad_beta)

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in BN_FIELDS}


@dataclass(frozen=True, eq=False)
class BNSnapshot:
    step: int
    layers: dict

    def to_dict(self):
        return {
            "step": self.step,
            "layers": {
                str(layer_id): bn.to_dict()
                for layer_id, bn in sorted(self.layers.items())
            }
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict) or set(doc) != {"step", "layers"}:
            raise TraceError("Snapshot needs exactly `step` and `layers`")
        if not isinstance(doc["layers"], dict):
            raise TraceError("Snapshot `layers` must be an object")
        layers = {}
        for key, entry in doc["layers"].items():
            if not isinstance(entry, dict) or set(entry) != set(BN_FIELDS):
                raise TraceError("Layer {} needs fields {}".format(
                    key, ", ".join(BN_FIELDS)))
            try:
                layers[int(key)] = LayerBN(**entry)
            except (TypeError, ValueError) as e:
                raise TraceError("Layer {} is malformed: {}".format(key,
                                                                     e)) from e
        step = doc["step"]
        if not isinstance(step, int) or isinstance(step, bool):
            raise TraceError(
                "Snapshot step must be an integer, got {!r}".format(step))
        return cls(step, layers)


@dataclass(frozen=True, eq=False)
class LayerRanking:
    """Channels by descending importance; prefix_importance[p - 1] is the
    importance of the top p channels"""
    order: np.ndarray
    scores: np.ndarray
    prefix_importance: np.ndarray

    def __len__(self):
        return len(self.order)


def accumulate(window):
    """Mean per-step importance of every channel over a window"""
    if not window:
        raise TraceError("Cannot average an empty window")
    shapes = {
        layer_id: len(bn)
        for layer_id, bn in window[0].layers.items()
    }
    totals = {layer_id: np.zeros(n) for layer_id, n in shapes.items()}
    for snapshot in window:
        layout = {layer_id: len(bn) for layer_id, bn in snapshot.layers.items()}
        if layout != shapes:
            raise TraceError("Snapshot {} does not match the window "
                             "layout".format(snapshot.step))
        for layer_id, bn in snapshot.layers.items():
            totals[layer_id] += bn.importance()
    return {
        layer_id: total / len(window)
        for layer_id, total in totals.items()
    }


def rank_layer(scores, channels=None):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or not len(scores):
        raise TraceError("Cannot rank an empty layer")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise TraceError("Scores must be finite and non-negative")
    if channels is None:
        channels = np.arange(len(scores))
    channels = np.asarray(channels, dtype=np.int64)
    if channels.shape != scores.shape:
        raise TraceError("Got {} scores for {} channels".format(
            len(scores), len(channels)))
    # ties go to the lower channel index
    order = np.lexsort((channels, -scores))
    ranked = scores[order]
    return LayerRanking(channels[order], ranked, np.cumsum(ranked))


def parse_trace(lines, source="<trace>"):
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError("{} line {}: {}".format(source, number,
                                                     e)) from e
        yield BNSnapshot.from_dict(doc)


def read_trace(path):
    snapshots = list(parse_trace(read_lines(path), path))
    log.debug("Read %s snapshots from %s", len(snapshots), path)
    return snapshots


def trace_lines(snapshots):
    return "".join(
        json.dumps(snapshot.to_dict(), sort_keys=True) + "\n"
        for snapshot in snapshots)


def write_trace(snapshots, path=None):
    write_text(trace_lines(snapshots), path)


def load_scores(path):
    doc = read_json(path, TraceError)
    if not isinstance(doc, dict):
        raise TraceError("Scores file must map layer ids to score arrays")
    try:
        scores = {int(k): np.asarray(v, dtype=np.float64)
                  for k, v in doc.items()}
    except (TypeError, ValueError) as e:
        raise TraceError("Malformed scores file {}: {}".format(path, e)) from e
    for layer_id, values in scores.items():
        if values.ndim != 1 or not np.all(np.isfinite(values)) or np.any(
                values < 0):
            raise TraceError(
                "Scores of layer {} must be finite, non-negative and "
                "one-dimensional".format(layer_id))
    return scores


def save_scores(scores, path=None):
    write_json({str(k): np.asarray(v).tolist()
                for k, v in sorted(scores.items())}, path)
