import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import conv
from latprune.exceptions import SpecError
from latprune.netmodel import (ChannelAssignment, LayerSpec, NetworkSpec,
                               builtin_mobilenet_v1,
                               builtin_mobilenet_v1_step_sizes,
                               builtin_resnet50, builtin_resnet50_step_sizes,
                               builtin_toy, layer_macs, network_flops,
                               reference_step_sizes, resolve_spec,
                               spec_from_dict, spec_to_dict, total_neurons,
                               validate_assignment, validate_spec)


def test_resnet50_neuron_total():
    assert total_neurons(builtin_resnet50()) == 26560


def test_total_neurons_trivial():
    assert total_neurons(NetworkSpec((conv(0, 3, 64), ))) == 64
    assert total_neurons(NetworkSpec(())) == 0


def test_total_neurons_additive(toy_spec):
    other = NetworkSpec((conv(0, 3, 10), conv(1, 10, 7, (0, ))))
    joined = NetworkSpec(toy_spec.layers + other.layers)
    assert total_neurons(joined) == total_neurons(toy_spec) + 17


def test_resnet50_layout():
    spec = builtin_resnet50()
    assert len(spec.layers) == 53
    conv1 = spec.layers[0]
    assert conv1.name == "conv1"
    assert not conv1.prunable
    assert conv1.min_keep == 64
    assert len(spec.couplings) == 4
    assert validate_spec(spec) == []


def test_resnet50_residual_inputs_are_transitive():
    spec = builtin_resnet50()
    names = {layer.name: layer.layer_id for layer in spec.layers}
    third = spec.layer(names["layer1.2.conv1"])
    assert set(third.predecessor_ids) == {
        names["layer1.0.conv3"], names["layer1.0.downsample"],
        names["layer1.1.conv3"]
    }
    assert third.in_channels == 256


def test_resnet50_dense_macs():
    spec = builtin_resnet50()
    macs = network_flops(spec, ChannelAssignment.dense(spec))
    assert macs == 4_087_136_256
    assert abs(macs - 4.1e9) <= 0.02 * 4.1e9


def test_resnet50_reference_steps():
    steps = list(builtin_resnet50_step_sizes().values())
    assert len(steps) == 53
    assert (steps.count(32), steps.count(64), steps.count(128)) == (23, 20, 10)


def test_mobilenet_v1_layout():
    spec = builtin_mobilenet_v1()
    assert len(spec.layers) == 27
    assert len(spec.couplings) == 14
    assert validate_spec(spec) == []
    depthwise = [l for l in spec.layers if l.kind == "group_conv"]
    assert len(depthwise) == 13
    for layer in depthwise:
        assert spec.coupling_of(layer.layer_id) == {
            layer.layer_id, layer.predecessor_ids[0]
        }
    assert spec.layers[-1].out_spatial == (7, 7)
    assert total_neurons(spec) == 10944


def test_mobilenet_v1_dense_macs():
    spec = builtin_mobilenet_v1()
    assert network_flops(spec, ChannelAssignment.dense(spec)) == 567_716_352


def test_mobilenet_v1_reference_steps():
    spec = builtin_mobilenet_v1()
    steps = builtin_mobilenet_v1_step_sizes()
    assert sorted(steps) == [layer.layer_id for layer in spec.layers]
    per_set = []
    for coupling in spec.couplings:
        assert len({steps[m] for m in coupling}) == 1
        per_set.append(steps[min(coupling)])
    assert per_set[0] == 16
    assert (per_set.count(16), per_set.count(32), per_set.count(64)) == (1, 3,
                                                                          10)


def test_reference_step_lookup(toy_spec):
    assert reference_step_sizes(builtin_resnet50()) == (
        builtin_resnet50_step_sizes())
    assert reference_step_sizes(builtin_mobilenet_v1()) == (
        builtin_mobilenet_v1_step_sizes())
    assert reference_step_sizes(toy_spec) is None


def test_single_conv_macs():
    spec = NetworkSpec((conv(0, 3, 16), ), input_channels=3)
    assert network_flops(spec, {0: 16}) == 27648
    assert network_flops(spec, {0: 0}) == 0


def test_depthwise_macs():
    layer = LayerSpec(0, "dw", "group_conv", 3, 8, 8, (4, 4))
    assert layer_macs(layer, 8, 8) == 8 * 9 * 16


def test_dense_flops_match_hand_sum(toy_spec):
    expected = 0
    in_channels = toy_spec.input_channels
    for layer in toy_spec.layers:
        expected += in_channels * layer.out_channels * 9 * 64
        in_channels = layer.out_channels
    assert network_flops(toy_spec,
                         ChannelAssignment.dense(toy_spec)) == expected


@settings(max_examples=50, deadline=None, derandomize=True)
@given(st.data())
def test_flops_monotone(data):
    spec = builtin_toy()
    counts = {
        layer.layer_id: data.draw(st.integers(0, layer.out_channels))
        for layer in spec.layers
    }
    layer = data.draw(st.sampled_from(spec.layers))
    grown = dict(counts)
    grown[layer.layer_id] = min(layer.out_channels,
                                counts[layer.layer_id] + 1)
    assert network_flops(spec, grown) >= network_flops(spec, counts)


def test_flops_unknown_layer(toy_spec):
    with pytest.raises(SpecError):
        network_flops(toy_spec, {99: 1})


def test_coupling_mismatch_reported():
    spec = NetworkSpec((conv(0, 3, 8), conv(1, 8, 4, (0, ))),
                       couplings=(frozenset((0, 1)), ))
    assert any("mismatched" in v for v in validate_spec(spec))


def test_cycle_reported():
    spec = NetworkSpec((conv(0, 3, 8, (1, )), conv(1, 8, 8, (0, ))))
    assert any("cycle" in v for v in validate_spec(spec))


def test_other_violations():
    spec = NetworkSpec((conv(0, 3, 8),
                        LayerSpec(1, "dw", "group_conv", 3, 8, 4, (8, 8),
                                  (0, )), conv(2, 5, 8, (0, )),
                        conv(3, 8, 8, (0, 2))))
    violations = validate_spec(spec)
    assert any("group_conv needs" in v for v in violations)
    assert any("in_channels 5" in v for v in violations)
    assert any("not coupled" in v for v in violations)


def test_missing_predecessor_reported():
    spec = NetworkSpec((conv(0, 3, 8), conv(1, 8, 8)))
    assert ("layer 1 (conv1): only the first layer may have no predecessor"
            in validate_spec(spec))


def test_assignment_violations(residual_spec):
    assign = ChannelAssignment({0: 16, 2: 12, 3: 9})
    violations = validate_assignment(residual_spec, assign)
    assert any("different counts" in v for v in violations)
    assert any("kept 9 outside" in v for v in violations)
    assert validate_assignment(residual_spec,
                               ChannelAssignment.dense(residual_spec)) == []


def test_assignment_respects_min_keep():
    spec = NetworkSpec((conv(0, 3, 8, min_keep=4), ))
    assert validate_assignment(spec, ChannelAssignment({0: 3}))
    assert not validate_assignment(spec, ChannelAssignment({0: 4}))


def test_spec_document_round_trip():
    spec = builtin_resnet50()
    assert spec_from_dict(spec_to_dict(spec)) == spec


def test_spec_document_rejects_unknown_fields(toy_spec):
    doc = spec_to_dict(toy_spec)
    doc["layers"][0]["stride"] = 2
    with pytest.raises(SpecError):
        spec_from_dict(doc)
    with pytest.raises(SpecError):
        spec_from_dict(dict(spec_to_dict(toy_spec), extra=1))


def test_invalid_document_carries_violations(toy_spec):
    doc = spec_to_dict(toy_spec)
    doc["layers"][1]["in_channels"] = 7
    with pytest.raises(SpecError) as info:
        spec_from_dict(doc)
    assert info.value.violations


def test_resolve_builtin_names():
    assert resolve_spec("toy") == builtin_toy()
    assert len(resolve_spec("ResNet50").layers) == 53
    assert resolve_spec("mobilenet_v1") == builtin_mobilenet_v1()


@pytest.mark.parametrize("field, value", [
    ("kernel_size", "3"),
    ("out_spatial", 8),
    ("predecessor_ids", [0.5]),
    ("prunable", "yes"),
    ("min_keep", 1.5),
    ("layer_id", True),
    ("name", 7),
])
def test_spec_document_field_types(toy_spec, field, value):
    doc = spec_to_dict(toy_spec)
    doc["layers"][1][field] = value
    with pytest.raises(SpecError) as info:
        spec_from_dict(doc)
    assert any(field in v for v in info.value.violations)


def test_spec_document_structure_types(toy_spec):
    for key, value in (("layers", {}), ("couplings", [[0, "1"]]),
                       ("input_channels", 3.0)):
        doc = dict(spec_to_dict(toy_spec), **{key: value})
        with pytest.raises(SpecError) as info:
            spec_from_dict(doc)
        assert any(key in v for v in info.value.violations)
