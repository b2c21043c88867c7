import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import ConfigError, PlannerIOError, TableError
from .knapsack import to_int_costs
from .netmodel import input_count, reference_step_sizes, resolve_counts
from .utils.io import write_text

log = logging.getLogger(__name__)

LUT_COLUMNS = ["layer_id", "in_channels", "out_channels", "latency_ms"]
LUT_KEY = ["layer_id", "in_channels", "out_channels"]
STEP_FALLBACK = 32


@dataclass(frozen=True, eq=False)
class LayerGrid:
    """Latencies of one layer sampled on an (in, out) channel grid"""
    in_points: np.ndarray
    out_points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        in_points = np.asarray(self.in_points, dtype=np.int64)
        out_points = np.asarray(self.out_points, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if in_points.ndim != 1 or out_points.ndim != 1 or not len(in_points):
            raise TableError("Grid sample points must be non-empty 1-D")
        if np.any(np.diff(in_points) <= 0) or np.any(np.diff(out_points) <= 0):
            raise TableError("Grid sample points must be strictly increasing")
        if values.shape != (len(in_points), len(out_points)):
            raise TableError("Grid values have shape {}, expected {}".format(
                values.shape, (len(in_points), len(out_points))))
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise TableError("Grid latencies must be finite and >= 0")
        if len(out_points) and out_points[0] == 0:
            if np.any(values[:, 0] != 0):
                raise TableError("Latency at out_channels=0 must be 0")
        else:
            out_points = np.concatenate(([0], out_points))
            values = np.hstack((np.zeros((len(in_points), 1)), values))
        object.__setattr__(self, "in_points", in_points)
        object.__setattr__(self, "out_points", out_points)
        object.__setattr__(self, "values", values)

    @property
    def max_in(self):
        return int(self.in_points[-1])

    @property
    def max_out(self):
        return int(self.out_points[-1])

    def _in_index(self, p_in):
        index = int(np.searchsorted(self.in_points, p_in, side="left"))
        if p_in < 0 or index == len(self.in_points):
            raise TableError("in_channels {} outside grid [0, {}]".format(
                p_in, self.max_in))
        return index

    def query(self, p_in, p_out):
        if p_out < 0 or p_out > self.max_out:
            raise TableError("out_channels {} outside grid [0, {}]".format(
                p_out, self.max_out))
        row = self._in_index(p_in)
        if p_out == 0:
            return 0.0
        col = int(np.searchsorted(self.out_points, p_out, side="left"))
        return float(self.values[row, col])

    def curve(self, p_in, p_out=None):
        """Latency for every out-count 0..p_out at a fixed in-count"""
        p_out = self.max_out if p_out is None else p_out
        if p_out < 0 or p_out > self.max_out:
            raise TableError("out_channels {} outside grid [0, {}]".format(
                p_out, self.max_out))
        row = self.values[self._in_index(p_in)]
        cols = np.searchsorted(self.out_points, np.arange(p_out + 1))
        return row[cols]


@dataclass(frozen=True, eq=False)
class LatencyTable:
    grids: dict

    @property
    def layer_ids(self):
        return sorted(self.grids)

    def grid(self, layer_id):
        try:
            return self.grids[layer_id]
        except KeyError:
            raise TableError(
                "Layer {} missing from latency table".format(layer_id)) from None

    def granularity(self, layer_id):
        """Smallest (in, out) sample spacing of a layer"""
        grid = self.grid(layer_id)
        return tuple(
            int(np.diff(points).min()) if len(points) > 1 else 1
            for points in (grid.in_points, grid.out_points))


@dataclass(frozen=True)
class StaircaseParams:
    base_ms: float = 0.01
    slope_ms: float = 0.002
    step_in: int = 32
    step_out: int = 32
    noise_amplitude_ms: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.base_ms < 0 or self.slope_ms <= 0:
            raise ConfigError("Staircase needs base_ms >= 0 and slope_ms > 0")
        if self.step_in < 1 or self.step_out < 1:
            raise ConfigError("Staircase step sizes must be >= 1")
        if self.noise_amplitude_ms < 0:
            raise ConfigError("Noise amplitude must be >= 0")

    def value(self, c_in, c_out):
        c_in = np.asarray(c_in, dtype=np.int64)
        c_out = np.asarray(c_out, dtype=np.int64)
        steps = -(-c_in // self.step_in) * -(-c_out // self.step_out)
        return np.where(c_out > 0, self.base_ms + self.slope_ms * steps, 0.0)


def lut_query(table, layer_id, p_in, p_out):
    return table.grid(layer_id).query(p_in, p_out)


def neuron_contribution(table, layer_id, p_in, j):
    grid = table.grid(layer_id)
    if not 1 <= j <= grid.max_out:
        raise TableError("Rank {} outside [1, {}] for layer {}".format(
            j, grid.max_out, layer_id))
    return grid.query(p_in, j) - grid.query(p_in, j - 1)


def neuron_contributions(table, layer_id, p_in, p_out=None, scale=None):
    """Contribution of every rank 1..p_out; integer units when scaled"""
    curve = table.grid(layer_id).curve(p_in, p_out)
    if scale is not None:
        curve = to_int_costs(curve, scale)
    return np.diff(curve)


def detect_step_size(table, layer_id, p_in, fallback=STEP_FALLBACK,
                     tol=1e-12):
    curve = table.grid(layer_id).curve(p_in)
    diffs = np.diff(curve)
    if len(diffs) < 2:
        return fallback
    # rank 1 always starts a step; later jumps must reach half the tallest
    threshold = max(tol, 0.5 * diffs[1:].max())
    jumps = np.flatnonzero(diffs[1:] > threshold) + 2
    if curve[1] > tol:
        jumps = np.concatenate(([1], jumps))
    if len(jumps) < 2:
        return fallback
    gaps, counts = np.unique(np.diff(jumps), return_counts=True)
    return int(gaps[np.argmax(counts)])


def gen_staircase_lut(spec, params, in_stride=1):
    """Synthesize a staircase table; `params` is one StaircaseParams or a
    mapping of layer_id to StaircaseParams"""
    if in_stride < 1:
        raise ConfigError("in_stride must be >= 1")
    grids = {}
    for layer in spec.layers:
        p = params.get(layer.layer_id) if isinstance(params, dict) else params
        if p is None:
            raise ConfigError("No staircase params for layer {}".format(
                layer.layer_id))
        in_points = np.unique(
            np.append(np.arange(0, layer.in_channels + 1, in_stride),
                      layer.in_channels))
        out_points = np.arange(layer.out_channels + 1)
        # a depthwise layer costs by its channel count alone
        c_in = (np.ones_like(in_points)
                if layer.kind == "group_conv" else in_points)
        values = p.value(c_in[:, None], out_points[None, :])
        if p.noise_amplitude_ms > 0:
            rng = np.random.default_rng([p.noise_seed, layer.layer_id])
            values = values + rng.uniform(-p.noise_amplitude_ms,
                                          p.noise_amplitude_ms, values.shape)
            values = np.clip(values, 0.0, None)
            values[:, 0] = 0.0
        grids[layer.layer_id] = LayerGrid(in_points, out_points, values)
    log.debug("Generated staircase table for %s layers", len(grids))
    return LatencyTable(grids)


def staircase_params_for(spec, base_ms=0.01, slope_ms=0.002, step_in=32,
                         step_out=32, noise_ms=0.0, seed=0,
                         reference_steps=False):
    default = StaircaseParams(base_ms, slope_ms, step_in, step_out, noise_ms,
                              seed)
    return params_from_dict(spec, {"default": dataclasses.asdict(default)},
                            reference_steps)


def params_from_dict(spec, doc, reference_steps=False):
    """Per-layer params from `{"default": {...}, "layers": {"<id>": {...}}}`;
    layer entries win over reference steps, which win over the default"""
    if not isinstance(doc, dict) or set(doc) - {"default", "layers"}:
        raise ConfigError("Params need only `default` and `layers` objects")
    fields = {f.name for f in dataclasses.fields(StaircaseParams)}
    default = doc.get("default", {})
    layers = doc.get("layers", {})
    if not isinstance(layers, dict):
        raise ConfigError("Params `layers` must map layer ids to objects")
    for entry in [default, *layers.values()]:
        if not isinstance(entry, dict) or set(entry) - fields:
            raise ConfigError("Staircase params accept only {}".format(
                ", ".join(sorted(fields))))
    unknown = set(layers) - {str(layer.layer_id) for layer in spec.layers}
    if unknown:
        raise ConfigError("Params for unknown layers {}".format(
            sorted(unknown)))
    steps = {}
    if reference_steps:
        steps = reference_step_sizes(spec)
        if steps is None:
            raise ConfigError("Reference step sizes only apply to the "
                              "builtin resnet50 and mobilenet_v1")
    params = {}
    for layer in spec.layers:
        values = dict(default)
        if layer.layer_id in steps:
            values["step_out"] = steps[layer.layer_id]
        values.update(layers.get(str(layer.layer_id), {}))
        try:
            params[layer.layer_id] = StaircaseParams(**values)
        except TypeError as e:
            raise ConfigError("Bad params for layer {}: {}".format(
                layer.layer_id, e)) from e
    return params


def layer_latencies(spec, assign, table):
    counts = resolve_counts(spec, assign)
    return {
        layer.layer_id: lut_query(table, layer.layer_id,
                                  input_count(spec, layer.layer_id, counts),
                                  counts[layer.layer_id])
        for layer in spec.layers
    }


def network_latency(spec, assign, table):
    return float(sum(layer_latencies(spec, assign, table).values()))


def load_lut(path):
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise PlannerIOError("Could not read {}: {}".format(path, e)) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise TableError("{} is not a valid LUT: {}".format(path, e)) from e
    if sorted(frame.columns) != sorted(LUT_COLUMNS):
        raise TableError("LUT header must be {}".format(",".join(LUT_COLUMNS)))
    if frame.isna().any().any():
        raise TableError("LUT has empty cells")
    for column in LUT_KEY:
        if not pd.api.types.is_integer_dtype(frame[column]):
            raise TableError("LUT column {} must hold integers".format(column))
    duplicated = frame.duplicated(LUT_KEY)
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise TableError("Duplicate LUT entry ({}, {}, {})".format(
            *(int(row[c]) for c in LUT_KEY)))
    grids = {}
    for layer_id, rows in frame.groupby("layer_id", sort=True):
        grid = rows.pivot(index="in_channels", columns="out_channels",
                          values="latency_ms").sort_index().sort_index(axis=1)
        if grid.isna().any().any():
            raise TableError("LUT grid of layer {} is incomplete".format(
                layer_id))
        grids[int(layer_id)] = LayerGrid(grid.index.to_numpy(),
                                         grid.columns.to_numpy(),
                                         grid.to_numpy())
    log.debug("Loaded LUT %s with %s layers", path, len(grids))
    return LatencyTable(grids)


def lut_frame(table):
    frames = []
    for layer_id in table.layer_ids:
        grid = table.grid(layer_id)
        c_in, c_out = np.meshgrid(grid.in_points, grid.out_points,
                                  indexing="ij")
        frames.append(
            pd.DataFrame({
                "layer_id": layer_id,
                "in_channels": c_in.ravel(),
                "out_channels": c_out.ravel(),
                "latency_ms": grid.values.ravel()
            }))
    if not frames:
        return pd.DataFrame(columns=LUT_COLUMNS)
    return pd.concat(frames, ignore_index=True)[LUT_COLUMNS]


def save_lut(table, path=None):
    write_text(lut_frame(table).to_csv(index=False, lineterminator="\n"),
               path)


def validate_table(spec, table):
    """Every layer must be queryable at its dense widths"""
    for layer in spec.layers:
        grid = table.grid(layer.layer_id)
        if grid.max_in < layer.in_channels or grid.max_out < layer.out_channels:
            raise TableError(
                "Table for layer {} covers ({}, {}), needs ({}, {})".format(
                    layer.layer_id, grid.max_in, grid.max_out,
                    layer.in_channels, layer.out_channels))
