import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import TraceError
from .importance import BNSnapshot, LayerBN, trace_lines
from .netmodel import spec_from_dict, spec_to_dict
from .utils.io import read_json

log = logging.getLogger(__name__)

REJECTION_ROUNDS = 200


@dataclass(frozen=True, eq=False)
class ToyNet:
    """Dense per-channel scale/shift network with a linear readout from
    every sink layer and a squared-error loss"""
    spec: object
    weights: dict
    gamma: dict
    beta: dict
    readout: dict
    inputs: np.ndarray
    targets: np.ndarray

    @classmethod
    def build(cls, spec, seed=0, samples=32, min_preactivation=0.0):
        rng = np.random.default_rng(seed)
        weights, gamma, beta, readout = {}, {}, {}, {}
        for layer in spec.layers:
            n = layer.out_channels
            weights[layer.layer_id] = rng.normal(
                0.0, np.sqrt(1.0 / layer.in_channels), (n, layer.in_channels))
            gamma[layer.layer_id] = rng.uniform(0.5, 1.5, n)
            beta[layer.layer_id] = rng.normal(0.0, 0.1, n)
        for layer_id, succ in spec.successors.items():
            if not succ:
                n = spec.layer(layer_id).out_channels
                readout[layer_id] = rng.normal(0.0, np.sqrt(1.0 / n), n)
        net = cls(spec, weights, gamma, beta, readout,
                  np.zeros((0, spec.input_channels)), np.zeros(0))
        inputs = net._draw_inputs(rng, samples, min_preactivation)
        targets = rng.normal(2.0, 0.5, len(inputs))
        return dataclasses.replace(net, inputs=inputs, targets=targets)

    def _draw_inputs(self, rng, samples, min_preactivation):
        kept = []
        total = 0
        for _ in range(REJECTION_ROUNDS):
            batch = rng.normal(size=(samples, self.spec.input_channels))
            cache = self._forward(batch)
            ok = np.ones(samples, dtype=bool)
            for z, u in cache["pre"].values():
                ok &= np.all(np.abs(u) > min_preactivation, axis=1)
            kept.append(batch[ok])
            total += int(ok.sum())
            if total >= samples:
                return np.vstack(kept)[:samples]
        log.warning("Only %s of %s samples clear a pre-activation margin of %s",
                    total, samples, min_preactivation)
        if not total:
            raise TraceError("No sample clears the pre-activation margin")
        return np.vstack(kept)

    def _layer_input(self, layer, acts, inputs):
        if not layer.predecessor_ids:
            return inputs
        parts = [acts[p] for p in layer.predecessor_ids]
        if layer.join == "concat":
            return np.hstack(parts)
        return sum(parts)

    def _forward(self, inputs):
        acts = {}
        pre = {}
        for layer_id in self.spec.topological_order():
            layer = self.spec.layer(layer_id)
            z = self._layer_input(layer, acts, inputs) @ self.weights[layer_id].T
            u = self.gamma[layer_id] * z + self.beta[layer_id]
            pre[layer_id] = (z, u)
            acts[layer_id] = np.maximum(u, 0.0)
        prediction = np.zeros(len(inputs))
        for layer_id, v in self.readout.items():
            prediction = prediction + acts[layer_id] @ v
        return {"acts": acts, "pre": pre, "prediction": prediction}

    def loss(self):
        prediction = self._forward(self.inputs)["prediction"]
        return float(np.mean((prediction - self.targets)**2))

    def gradients(self):
        """d loss / d (gamma, beta) for every layer"""
        cache = self._forward(self.inputs)
        count = len(self.inputs)
        residual = 2.0 * (cache["prediction"] - self.targets) / count
        grad_acts = {
            layer_id: np.outer(residual, v)
            for layer_id, v in self.readout.items()
        }
        grads = {}
        for layer_id in reversed(self.spec.topological_order()):
            layer = self.spec.layer(layer_id)
            z, u = cache["pre"][layer_id]
            grad_a = grad_acts.get(layer_id)
            if grad_a is None:
                grad_a = np.zeros_like(u)
            grad_u = grad_a * (u > 0)
            grads[layer_id] = ((grad_u * z).sum(axis=0), grad_u.sum(axis=0))
            grad_in = (grad_u * self.gamma[layer_id]) @ self.weights[layer_id]
            start = 0
            for pred in layer.predecessor_ids:
                if layer.join == "concat":
                    width = cache["acts"][pred].shape[1]
                    part = grad_in[:, start:start + width]
                    start += width
                else:
                    part = grad_in
                grad_acts[pred] = grad_acts.get(pred, 0) + part
        return grads

    def with_channel_zeroed(self, layer_id, channel):
        layer = self.spec.layer(layer_id)
        if not 0 <= channel < layer.out_channels:
            raise TraceError("Layer {} has no channel {}".format(
                layer_id, channel))
        gamma = dict(self.gamma)
        beta = dict(self.beta)
        gamma[layer_id] = gamma[layer_id].copy()
        beta[layer_id] = beta[layer_id].copy()
        gamma[layer_id][channel] = 0.0
        beta[layer_id][channel] = 0.0
        return dataclasses.replace(self, gamma=gamma, beta=beta)

    def perturbed(self, rng, amplitude):
        gamma, beta = {}, {}
        for layer in self.spec.layers:
            n = layer.out_channels
            gamma[layer.layer_id] = (self.gamma[layer.layer_id] +
                                     amplitude * rng.normal(size=n))
            beta[layer.layer_id] = (self.beta[layer.layer_id] +
                                    amplitude * rng.normal(size=n))
        return dataclasses.replace(self, gamma=gamma, beta=beta)

    def to_dict(self):
        def arrays(values):
            return {str(k): v.tolist() for k, v in sorted(values.items())}

        return {
            "spec": spec_to_dict(self.spec),
            "weights": arrays(self.weights),
            "gamma": arrays(self.gamma),
            "beta": arrays(self.beta),
            "readout": arrays(self.readout),
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist()
        }

    @classmethod
    def from_dict(cls, doc):
        def arrays(values):
            return {int(k): np.asarray(v, dtype=np.float64)
                    for k, v in values.items()}

        try:
            return cls(spec_from_dict(doc["spec"]), arrays(doc["weights"]),
                       arrays(doc["gamma"]), arrays(doc["beta"]),
                       arrays(doc["readout"]),
                       np.asarray(doc["inputs"], dtype=np.float64),
                       np.asarray(doc["targets"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as e:
            raise TraceError("Malformed toy net: {}".format(e)) from e


def toy_grads(net, step=0):
    grads = net.gradients()
    return BNSnapshot(
        step, {
            layer_id: LayerBN(net.gamma[layer_id], net.beta[layer_id],
                              grad_gamma, grad_beta)
            for layer_id, (grad_gamma, grad_beta) in sorted(grads.items())
        })


def toy_loss_delta(net, layer_id, channel):
    """Loss with the channel's scale and shift zeroed, minus intact loss"""
    return net.with_channel_zeroed(layer_id, channel).loss() - net.loss()


def iter_trace(spec, seed=0, amplitude=0.01, samples=32, steps=None,
               min_preactivation=0.0, net=None):
    """Snapshots of a toy net whose scales and shifts take a seeded random
    walk between steps; `net` replaces the one built from `spec`"""
    if net is None:
        net = ToyNet.build(spec, seed, samples, min_preactivation)
    rng = np.random.default_rng([seed, 1])
    step = 0
    while steps is None or step < steps:
        yield toy_grads(net, step)
        step += 1
        net = net.perturbed(rng, amplitude)


def gen_trace(seed, spec, steps, amplitude=0.01, samples=32):
    """JSON-lines trace text of `steps` snapshots"""
    if steps < 1:
        raise TraceError("A trace needs at least one step")
    return trace_lines(iter_trace(spec, seed, amplitude, samples, steps))


def load_toy_net(path):
    return ToyNet.from_dict(read_json(path, TraceError))
