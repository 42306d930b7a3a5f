"""Multiply and parameter accounting.

Multiply counts follow the usual convention for convolution cost formulas.
Only multiplications are counted; additions and biases are not. The output
map is taken to have the same spatial size as the input. For conv1, whose
output is strided, the actual output extent is used as the spatial factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .network import CONV1_KERNEL, DS_KERNEL, PARAM_LAYERS, ModelParams, NetworkConfig


@dataclass(frozen=True)
class CostQuery:
    width: int
    height: int
    in_channels: int
    kernel_size: int
    out_channels: int

    def __post_init__(self):
        for name in ("width", "height", "in_channels", "kernel_size", "out_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def general_conv_cost(q: CostQuery) -> int:
    return q.width * q.height * q.in_channels * q.kernel_size ** 2 * q.out_channels


def separable_conv_cost(q: CostQuery) -> int:
    return q.width * q.height * q.in_channels * (q.kernel_size ** 2 + q.out_channels)


def speedup_ratio(kernel_size: int, out_channels: int) -> Fraction:
    """General / separable cost, ``K^2 C_O / (K^2 + C_O)``, as an exact fraction."""
    if kernel_size < 1 or out_channels < 1:
        raise ValueError("kernel_size and out_channels must be >= 1")
    k2 = kernel_size ** 2
    return Fraction(k2 * out_channels, k2 + out_channels)


@dataclass
class LayerRow:
    name: str
    multiplies: int
    params: int


@dataclass
class BlockRow:
    name: str
    query: CostQuery
    separable: int
    general_equivalent: int
    ratio: Fraction


@dataclass
class CostReport:
    rows: list[LayerRow]
    blocks: list[BlockRow] = field(default_factory=list)
    size_bytes: int = 0

    @property
    def total_multiplies(self) -> int:
        return sum(r.multiplies for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    def row(self, name: str) -> LayerRow:
        return next(r for r in self.rows if r.name == name)

    def block(self, name: str) -> BlockRow:
        return next(b for b in self.blocks if b.name == name)

    def to_csv(self) -> str:
        lines = ["layer,multiplies,params"]
        lines += [f"{r.name},{r.multiplies},{r.params}" for r in self.rows]
        lines.append(f"total,{self.total_multiplies},{self.total_params}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        out = [f"{'layer':<12} {'multiplies':>14} {'params':>12}"]
        out += [f"{r.name:<12} {r.multiplies:>14,} {r.params:>12,}" for r in self.rows]
        out.append(f"{'total':<12} {self.total_multiplies:>14,} {self.total_params:>12,}")
        if self.blocks:
            out.append("")
            out.append(f"{'block':<6} {'W x H x C_I':>14} {'K':>2} {'C_O':>5} "
                       f"{'separable':>13} {'general':>13} {'ratio':>8}")
            for b in self.blocks:
                q = b.query
                dims = f"{q.width}x{q.height}x{q.in_channels}"
                out.append(f"{b.name:<6} {dims:>14} {q.kernel_size:>2} {q.out_channels:>5} "
                           f"{b.separable:>13,} {b.general_equivalent:>13,} {float(b.ratio):>8.4f}")
        if self.size_bytes:
            out.append("")
            out.append(f"estimated file size: {self.size_bytes:,} bytes "
                       f"({self.size_bytes / 2 ** 20:.2f} MiB)")
        return "\n".join(out)


def estimated_file_size(config: NetworkConfig) -> int:
    """Bytes of a saved model: header + config + tensor directory + 4 bytes per value + CRC."""
    from .model_io import file_size_for

    return file_size_for(config)


def network_cost(config: NetworkConfig) -> CostReport:
    shapes = {r.name: r for r in config.shape_table()}
    pshapes = config.param_shapes()

    def nparams(layer):
        w, b = pshapes[layer + "_w"], pshapes[layer + "_b"]
        n = 1
        for e in w:
            n *= e
        return n + b[0]

    rows, blocks = [], []
    h, w, c1 = shapes["conv1"].output
    rows.append(LayerRow("conv1", general_conv_cost(CostQuery(w, h, 3, CONV1_KERNEL, c1)),
                         nparams("conv1")))
    for i in (1, 2):
        hi, wi, ci = shapes[f"dw{i}"].input
        co = shapes[f"pw{i}"].output[2]
        q = CostQuery(wi, hi, ci, DS_KERNEL, co)
        dw_mult = wi * hi * ci * DS_KERNEL ** 2
        rows.append(LayerRow(f"dw{i}", dw_mult, nparams(f"dw{i}")))
        rows.append(LayerRow(f"pw{i}", wi * hi * ci * co, nparams(f"pw{i}")))
        blocks.append(BlockRow(f"ds{i}", q, separable_conv_cost(q), general_conv_cost(q),
                               speedup_ratio(DS_KERNEL, co)))
    for layer in ("fc1", "fc2", "head_age", "head_gender"):
        n, m = pshapes[layer + "_w"]
        rows.append(LayerRow(layer, n * m, nparams(layer)))
    assert [r.name for r in rows] == list(PARAM_LAYERS)
    return CostReport(rows, blocks, estimated_file_size(config))


def param_count(params: ModelParams) -> CostReport:
    """Like :func:`network_cost`, but parameter counts come from the actual tensors."""
    report = network_cost(params.config)
    for row in report.rows:
        row.params = int(params[row.name + "_w"].size + params[row.name + "_b"].size)
    return report
