import graphlib
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property

from .exceptions import SpecError
from .utils.io import read_json

log = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "group_conv", "linear")
JOIN_RULES = ("add", "concat")
LAYER_FIELDS = ("layer_id", "name", "kind", "kernel_size", "in_channels",
                "out_channels", "out_spatial", "predecessor_ids", "prunable",
                "min_keep", "join")
REQUIRED_LAYER_FIELDS = ("layer_id", "name", "kind", "kernel_size",
                         "in_channels", "out_channels")
SPEC_FIELDS = ("layers", "couplings", "input_channels")


@dataclass(frozen=True)
class LayerSpec:
    layer_id: int
    name: str
    kind: str
    kernel_size: int
    in_channels: int
    out_channels: int
    out_spatial: tuple = (1, 1)
    predecessor_ids: tuple = ()
    prunable: bool = True
    min_keep: int = None
    join: str = "add"

    def __post_init__(self):
        object.__setattr__(self, "out_spatial", tuple(self.out_spatial))
        object.__setattr__(self, "predecessor_ids",
                           tuple(self.predecessor_ids))
        if self.min_keep is None:
            # unprunable layers keep their full width
            floor = 0 if self.prunable else self.out_channels
            object.__setattr__(self, "min_keep", floor)

    @property
    def pair_macs(self):
        """MACs contributed by one (in-channel, out-channel) pair"""
        height, width = self.out_spatial
        return self.kernel_size * self.kernel_size * height * width


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    couplings: tuple = ()
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "couplings",
                           tuple(frozenset(c) for c in self.couplings))

    @cached_property
    def by_id(self):
        return {layer.layer_id: layer for layer in self.layers}

    @cached_property
    def successors(self):
        succ = {layer.layer_id: [] for layer in self.layers}
        for layer in self.layers:
            for pred in layer.predecessor_ids:
                if pred in succ:
                    succ[pred].append(layer.layer_id)
        return {k: tuple(v) for k, v in succ.items()}

    @cached_property
    def _coupling_index(self):
        index = {}
        for coupling in self.couplings:
            for layer_id in coupling:
                index[layer_id] = coupling
        return index

    def layer(self, layer_id):
        try:
            return self.by_id[layer_id]
        except KeyError:
            raise SpecError("Unknown layer {}".format(layer_id)) from None

    def coupling_of(self, layer_id):
        return self._coupling_index.get(layer_id, frozenset((layer_id, )))

    def topological_order(self):
        graph = {
            layer.layer_id: layer.predecessor_ids
            for layer in self.layers
        }
        try:
            return tuple(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError as e:
            raise SpecError("Predecessor graph has a cycle",
                            ["cycle through layers {}".format(e.args[1])])


@dataclass(frozen=True)
class ChannelAssignment:
    kept: Mapping
    channels: Mapping = None

    @classmethod
    def dense(cls, spec):
        return cls({l.layer_id: l.out_channels
                    for l in spec.layers},
                   {l.layer_id: tuple(range(l.out_channels))
                    for l in spec.layers})

    @classmethod
    def from_channels(cls, channels):
        channels = {k: tuple(sorted(v)) for k, v in channels.items()}
        return cls({k: len(v) for k, v in channels.items()}, channels)

    def count(self, layer):
        return self.kept.get(layer.layer_id, layer.out_channels)


def resolve_counts(spec, assign):
    kept = assign.kept if isinstance(assign, ChannelAssignment) else assign
    unknown = [k for k in kept if k not in spec.by_id]
    if unknown:
        raise SpecError(
            "Assignment references unknown layers {}".format(sorted(unknown)))
    return {
        layer.layer_id: kept.get(layer.layer_id, layer.out_channels)
        for layer in spec.layers
    }


def input_count(spec, layer_id, counts):
    """Kept input channels of a layer under the join rule"""
    layer = spec.layer(layer_id)
    if not layer.predecessor_ids:
        return spec.input_channels
    inputs = [
        counts.get(p, spec.layer(p).out_channels)
        for p in layer.predecessor_ids
    ]
    if layer.join == "concat":
        return sum(inputs)
    return max(inputs)


def layer_macs(layer, p_in, p_out):
    if layer.kind == "group_conv":
        # depthwise: one group per input channel
        return p_out * layer.pair_macs
    return p_in * p_out * layer.pair_macs


def total_neurons(spec):
    return sum(layer.out_channels for layer in spec.layers)


def network_flops(spec, assign):
    counts = resolve_counts(spec, assign)
    return sum(
        layer_macs(layer, input_count(spec, layer.layer_id, counts),
                   counts[layer.layer_id]) for layer in spec.layers)


def validate_spec(spec):
    violations = []
    ids = set()
    for layer in spec.layers:
        if layer.layer_id in ids:
            violations.append("duplicate layer_id {}".format(layer.layer_id))
        ids.add(layer.layer_id)
    if spec.input_channels < 1:
        violations.append("input_channels must be positive")
    dangling = False
    for index, layer in enumerate(spec.layers):
        tag = "layer {} ({})".format(layer.layer_id, layer.name)
        if layer.kind not in LAYER_KINDS:
            violations.append("{}: unknown kind {!r}".format(tag, layer.kind))
        if layer.join not in JOIN_RULES:
            violations.append("{}: unknown join {!r}".format(tag, layer.join))
        if layer.kernel_size < 1:
            violations.append("{}: kernel_size must be positive".format(tag))
        if layer.in_channels < 1 or layer.out_channels < 1:
            violations.append("{}: channel counts must be positive".format(tag))
        if len(layer.out_spatial) != 2 or min(layer.out_spatial) < 1:
            violations.append("{}: out_spatial must be two positive "
                              "integers".format(tag))
        if not 0 <= layer.min_keep <= layer.out_channels:
            violations.append("{}: min_keep {} outside [0, {}]".format(
                tag, layer.min_keep, layer.out_channels))
        if layer.kind == "group_conv" and (layer.in_channels !=
                                           layer.out_channels):
            violations.append(
                "{}: group_conv needs in_channels == out_channels".format(tag))
        if layer.kind == "linear" and (layer.kernel_size != 1
                                       or layer.out_spatial != (1, 1)):
            violations.append("{}: linear layers use kernel_size 1 and "
                              "out_spatial (1, 1)".format(tag))
        for pred in layer.predecessor_ids:
            if pred not in ids or pred == layer.layer_id:
                violations.append("{}: bad predecessor {}".format(tag, pred))
                dangling = True
        if index > 0 and not layer.predecessor_ids:
            violations.append("{}: only the first layer may have no "
                              "predecessor".format(tag))
    if not dangling:
        try:
            spec.topological_order()
        except SpecError as e:
            violations.extend(e.violations)
            dangling = True

    members = set()
    for coupling in spec.couplings:
        unknown = [m for m in coupling if m not in ids]
        if unknown:
            violations.append("coupling references unknown layers {}".format(
                sorted(unknown)))
            continue
        widths = {spec.by_id[m].out_channels for m in coupling}
        if len(widths) > 1:
            violations.append(
                "coupling {} has mismatched out_channels {}".format(
                    sorted(coupling), sorted(widths)))
        if members & coupling:
            violations.append("coupling {} overlaps another coupling".format(
                sorted(coupling)))
        members |= coupling
    if dangling:
        return violations

    dense = {layer.layer_id: layer.out_channels for layer in spec.layers}
    for layer in spec.layers:
        tag = "layer {} ({})".format(layer.layer_id, layer.name)
        preds = layer.predecessor_ids
        if layer.join == "add" and len(preds) > 1:
            if not set(preds) <= spec.coupling_of(preds[0]):
                violations.append(
                    "{}: add-join inputs {} are not coupled".format(
                        tag, list(preds)))
        if layer.kind == "group_conv" and preds:
            if not set(preds) <= spec.coupling_of(layer.layer_id):
                violations.append("{}: group_conv must be coupled with its "
                                  "predecessor".format(tag))
        resolved = input_count(spec, layer.layer_id, dense)
        if resolved != layer.in_channels:
            violations.append(
                "{}: in_channels {} but inputs provide {}".format(
                    tag, layer.in_channels, resolved))
    return violations


def validate_assignment(spec, assign):
    violations = []
    for layer_id in assign.kept:
        if layer_id not in spec.by_id:
            violations.append("unknown layer {}".format(layer_id))
    channels = assign.channels or {}
    for layer in spec.layers:
        count = assign.count(layer)
        if not layer.min_keep <= count <= layer.out_channels:
            violations.append("layer {}: kept {} outside [{}, {}]".format(
                layer.layer_id, count, layer.min_keep, layer.out_channels))
        kept = channels.get(layer.layer_id)
        if kept is not None:
            if len(kept) != count or len(set(kept)) != len(kept):
                violations.append(
                    "layer {}: channel set does not match count {}".format(
                        layer.layer_id, count))
            if any(not 0 <= c < layer.out_channels for c in kept):
                violations.append("layer {}: channel index out of "
                                  "range".format(layer.layer_id))
    for coupling in spec.couplings:
        coupled = sorted(coupling)
        counts = {assign.count(spec.layer(m)) for m in coupled}
        if len(counts) > 1:
            violations.append("coupled layers {} keep different counts "
                              "{}".format(coupled, sorted(counts)))
        sets = {channels.get(m) for m in coupled if m in channels}
        if len(sets) > 1:
            violations.append(
                "coupled layers {} keep different channels".format(coupled))
    return violations


def builtin_resnet50():
    """ResNet50 (v1.5 strides) at 224x224; downsample convs included"""
    layers = []
    couplings = []

    def add(name, kernel_size, in_channels, out_channels, spatial, preds,
            **kwargs):
        layer_id = len(layers)
        layers.append(
            LayerSpec(layer_id, name, "conv", kernel_size, in_channels,
                      out_channels, (spatial, spatial), tuple(preds),
                      **kwargs))
        return layer_id

    conv1 = add("conv1", 7, 3, 64, 112, (), prunable=False)
    inputs = (conv1, )
    in_channels = 64
    spatial = 56
    for stage, (width, blocks) in enumerate(_RESNET50_STAGES, 1):
        out_spatial = spatial if stage == 1 else spatial // 2
        expanded = width * 4
        outputs = []
        for block in range(blocks):
            prefix = "layer{}.{}".format(stage, block)
            # the stride sits on the 3x3 conv
            a = add(prefix + ".conv1", 1, in_channels, width,
                    spatial if block == 0 else out_spatial, inputs)
            b = add(prefix + ".conv2", 3, width, width, out_spatial, (a, ))
            outputs.append(
                add(prefix + ".conv3", 1, width, expanded, out_spatial,
                    (b, )))
            if block == 0:
                outputs.append(
                    add(prefix + ".downsample", 1, in_channels, expanded,
                        out_spatial, inputs))
            inputs = tuple(outputs)
            in_channels = expanded
        couplings.append(frozenset(outputs))
        spatial = out_spatial
    return NetworkSpec(tuple(layers), tuple(couplings), input_channels=3)


_RESNET50_STAGES = ((64, 3), (128, 4), (256, 6), (512, 3))

# (conv1, conv2) out-channel latency steps per bottleneck block
_INNER_STEPS = {
    1: ((32, 32), ) * 3,
    2: ((32, 32), ) * 4,
    3: ((32, 32), (32, 32), (32, 32), (32, 64), (64, 128), (128, 128)),
    4: ((64, 64), ) * 3,
}
# (conv3, downsample)
_OUTPUT_STEPS = {1: (64, 32), 2: (64, 64), 3: (128, 128), 4: (64, 64)}


def builtin_resnet50_step_sizes():
    """Reference out-channel latency step per layer of builtin_resnet50"""
    steps = {}
    for layer in builtin_resnet50().layers:
        if layer.name == "conv1":
            steps[layer.layer_id] = 32
            continue
        stage, block, part = layer.name.split(".")
        stage, block = int(stage[len("layer"):]), int(block)
        if part == "conv1":
            steps[layer.layer_id] = _INNER_STEPS[stage][block][0]
        elif part == "conv2":
            steps[layer.layer_id] = _INNER_STEPS[stage][block][1]
        elif part == "conv3":
            steps[layer.layer_id] = _OUTPUT_STEPS[stage][0]
        else:
            steps[layer.layer_id] = _OUTPUT_STEPS[stage][1]
    return steps


def builtin_mobilenet_v1():
    """MobileNetV1 at 224x224; each depthwise conv is coupled with the conv
    that feeds it"""
    layers = [
        LayerSpec(0, "conv1", "conv", 3, 3, 32, (112, 112)),
    ]
    couplings = []
    in_channels = 32
    spatial = 112
    feeder = 0
    for index, (width, stride) in enumerate(_MOBILENET_BLOCKS, 1):
        spatial //= stride
        prefix = "block{}".format(index)
        dw = len(layers)
        layers.append(
            LayerSpec(dw, prefix + ".dw", "group_conv", 3, in_channels,
                      in_channels, (spatial, spatial), (feeder, )))
        couplings.append(frozenset((feeder, dw)))
        feeder = len(layers)
        layers.append(
            LayerSpec(feeder, prefix + ".pw", "conv", 1, in_channels, width,
                      (spatial, spatial), (dw, )))
        in_channels = width
    couplings.append(frozenset((feeder, )))
    return NetworkSpec(tuple(layers), tuple(couplings), input_channels=3)


# (pointwise width, depthwise stride) per block
_MOBILENET_BLOCKS = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1),
                     (512, 2), (512, 1), (512, 1), (512, 1), (512, 1),
                     (512, 1), (1024, 2), (1024, 1))
# out-channel latency step per coupled set, input side first
_MOBILENET_SET_STEPS = (16, 32, 32, 32) + (64, ) * 10


def builtin_mobilenet_v1_step_sizes():
    """Reference out-channel latency step per layer of builtin_mobilenet_v1"""
    spec = builtin_mobilenet_v1()
    return {
        layer_id: step
        for step, coupling in zip(_MOBILENET_SET_STEPS, spec.couplings)
        for layer_id in sorted(coupling)
    }


def builtin_toy(widths=(24, 32, 48, 32), input_channels=3, spatial=8):
    layers = []
    in_channels = input_channels
    for index, width in enumerate(widths):
        preds = (index - 1, ) if index else ()
        layers.append(
            LayerSpec(index, "conv{}".format(index + 1), "conv", 3,
                      in_channels, width, (spatial, spatial), preds))
        in_channels = width
    return NetworkSpec(tuple(layers), (), input_channels=input_channels)


BUILTIN_SPECS = {
    "resnet50": builtin_resnet50,
    "mobilenet_v1": builtin_mobilenet_v1,
    "toy": builtin_toy
}
REFERENCE_STEP_SIZES = {
    "resnet50": builtin_resnet50_step_sizes,
    "mobilenet_v1": builtin_mobilenet_v1_step_sizes
}


def reference_step_sizes(spec):
    """Reference per-layer steps when `spec` is a builtin that has them"""
    for name, steps in REFERENCE_STEP_SIZES.items():
        if spec == BUILTIN_SPECS[name]():
            return steps()
    return None


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_int_list(value):
    return isinstance(value, list) and all(_is_int(v) for v in value)


def _entry_problems(index, entry):
    if not isinstance(entry, dict):
        return ["layer entry {} must be an object".format(index)]
    tag = "layer entry {}".format(index)
    problems = []
    unknown = set(entry) - set(LAYER_FIELDS)
    if unknown:
        problems.append("{}: unknown fields {}".format(tag, sorted(unknown)))
    missing = [f for f in REQUIRED_LAYER_FIELDS if f not in entry]
    if missing:
        problems.append("{}: missing fields {}".format(tag, missing))
    for name in ("layer_id", "kernel_size", "in_channels", "out_channels"):
        if name in entry and not _is_int(entry[name]):
            problems.append("{}: {} must be an integer".format(tag, name))
    for name in ("name", "kind", "join"):
        if name in entry and not isinstance(entry[name], str):
            problems.append("{}: {} must be a string".format(tag, name))
    for name in ("out_spatial", "predecessor_ids"):
        if name in entry and not _is_int_list(entry[name]):
            problems.append("{}: {} must be a list of integers".format(
                tag, name))
    if "prunable" in entry and not isinstance(entry["prunable"], bool):
        problems.append("{}: prunable must be true or false".format(tag))
    if entry.get("min_keep") is not None and not _is_int(entry["min_keep"]):
        problems.append("{}: min_keep must be an integer".format(tag))
    return problems


def spec_from_dict(doc):
    if not isinstance(doc, dict):
        raise SpecError("Network spec must be a JSON object")
    unknown = set(doc) - set(SPEC_FIELDS)
    if unknown:
        raise SpecError("Unknown spec fields {}".format(sorted(unknown)))
    entries = doc.get("layers", [])
    couplings = doc.get("couplings", [])
    input_channels = doc.get("input_channels", 3)
    problems = []
    if not isinstance(entries, list):
        problems.append("layers must be a list")
        entries = []
    for index, entry in enumerate(entries):
        problems.extend(_entry_problems(index, entry))
    if not isinstance(couplings, list) or not all(
            _is_int_list(c) for c in couplings):
        problems.append("couplings must be lists of layer ids")
    if not _is_int(input_channels):
        problems.append("input_channels must be an integer")
    if problems:
        raise SpecError("Malformed network spec", problems)
    spec = NetworkSpec(tuple(LayerSpec(**entry) for entry in entries),
                       tuple(frozenset(c) for c in couplings),
                       input_channels=input_channels)
    violations = validate_spec(spec)
    if violations:
        raise SpecError("Invalid network spec", violations)
    return spec


def spec_to_dict(spec):
    return {
        "input_channels": spec.input_channels,
        "couplings": [sorted(c) for c in spec.couplings],
        "layers": [{
            "layer_id": l.layer_id,
            "name": l.name,
            "kind": l.kind,
            "kernel_size": l.kernel_size,
            "in_channels": l.in_channels,
            "out_channels": l.out_channels,
            "out_spatial": list(l.out_spatial),
            "predecessor_ids": list(l.predecessor_ids),
            "prunable": l.prunable,
            "min_keep": l.min_keep,
            "join": l.join
        } for l in spec.layers]
    }


def load_spec(path):
    return spec_from_dict(read_json(path, SpecError))


def resolve_spec(name_or_path):
    """Builtin spec by name, otherwise a spec file"""
    builder = BUILTIN_SPECS.get(str(name_or_path).lower())
    if builder:
        return builder()
    log.debug("Loading network spec from %s", name_or_path)
    return load_spec(name_or_path)
