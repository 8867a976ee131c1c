"""Analytic cost formulas, an instrumented MAC counter, and report emission.

Convention everywhere: one MAC is one multiply-accumulate, a p x q by q x r
matrix product costs p*q*r MACs, and softmax / LayerNorm / GELU / scaling
count zero. Table-style "FLOPs(G)" figures are read as GMACs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .backbone import GSA, ModelConfig, SepViT
from .errors import LayoutError
from .tensor import MacCounter, Tensor

ATTENTION = ("dwa", "pwa")


def _windows(H: int, W: int, M: int) -> int:
    if M < 1 or H % M or W % M:
        raise LayoutError(f"window side M={M} does not divide H={H}, W={W}")
    return (H * W) // (M * M)


def msa_global_cost(H: int, W: int, C: int) -> int:
    """Global multi-head self-attention: 4HWC^2 + 2(HW)^2 C."""
    return 4 * H * W * C * C + 2 * (H * W) ** 2 * C


def window_msa_cost(H: int, W: int, C: int, M: int) -> int:
    """Window multi-head self-attention: 4HWC^2 + 2 M^2 HWC."""
    _windows(H, W, M)
    return 4 * H * W * C * C + 2 * M * M * H * W * C


def dwa_cost(H: int, W: int, C: int, M: int) -> int:
    """3HWC^2 + 3NC^2 + 2N(M^2+1)^2 C with N = HW/M^2."""
    N = _windows(H, W, M)
    return 3 * H * W * C * C + 3 * N * C * C + 2 * N * (M * M + 1) ** 2 * C


def dwa_cost_without_tokens(H: int, W: int, C: int, M: int) -> int:
    N = _windows(H, W, M)
    return 3 * H * W * C * C + 2 * N * M**4 * C


def token_overhead(H: int, W: int, C: int, M: int) -> float:
    """Fraction of the DWA cost caused by the window tokens."""
    total = dwa_cost(H, W, C, M)
    return (total - dwa_cost_without_tokens(H, W, C, M)) / total


def pwa_cost(H: int, W: int, C: int, M: int) -> int:
    """HWC^2 + 2NC^2 + N^2 C + NHWC."""
    N = _windows(H, W, M)
    return H * W * C * C + 2 * N * C * C + N * N * C + N * H * W * C


def mlp_cost(H: int, W: int, C: int, mlp_ratio: int = 4) -> int:
    return 2 * H * W * C * (mlp_ratio * C)


def conv_cost(H_out: int, W_out: int, c_in: int, c_out: int, k: int, groups: int = 1) -> int:
    return H_out * W_out * c_out * (c_in // groups) * k * k


@dataclass
class ComponentCost:
    name: str
    stage: int
    analytic_macs: int
    empirical_macs: int | None = None
    params: int = 0

    @property
    def is_attention(self) -> bool:
        return self.name.rsplit("/", 1)[-1] in ATTENTION

    @property
    def exact(self) -> bool | None:
        if self.empirical_macs is None:
            return None
        return self.analytic_macs == self.empirical_macs


@dataclass
class CostReport:
    components: list[ComponentCost] = field(default_factory=list)
    geometry: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def analytic_total(self) -> int:
        return sum(c.analytic_macs for c in self.components)

    @property
    def empirical_total(self) -> int | None:
        if any(c.empirical_macs is None for c in self.components):
            return None
        return sum(c.empirical_macs for c in self.components)

    @property
    def params_total(self) -> int:
        return sum(c.params for c in self.components)

    def get(self, name: str, stage: int | None = None) -> ComponentCost:
        for c in self.components:
            if c.name == name and (stage is None or c.stage == stage):
                return c
        raise KeyError(name)

    def attention_rows(self) -> list[ComponentCost]:
        return [c for c in self.components if c.is_attention]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "stage", "analytic_macs", "empirical_macs", "params"])
        for c in self.components:
            w.writerow([c.name, c.stage, c.analytic_macs, "" if c.empirical_macs is None else c.empirical_macs, c.params])
        return buf.getvalue()

    def to_text(self) -> str:
        rows = [
            [c.name, str(c.stage), f"{c.analytic_macs:,}", "-" if c.empirical_macs is None else f"{c.empirical_macs:,}", f"{c.params:,}"]
            for c in self.components
        ]
        emp = self.empirical_total
        rows.append(["TOTAL", "", f"{self.analytic_total:,}", "-" if emp is None else f"{emp:,}", f"{self.params_total:,}"])
        text = format_table(["component", "stage", "analytic MACs", "empirical MACs", "params"], rows)
        if self.notes:
            text += "\n" + "\n".join(f"note: {n}" for n in self.notes)
        return text


def format_table(header: list[str], rows: Iterable[list[str]]) -> str:
    rows = [list(map(str, r)) for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]

    def line(cells):
        return "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    out = [line(header), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out)


def read_cost_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


_LN_NOTE = "LayerNorm, softmax, GELU and scaling are counted as 0 MACs"


def sepvit_block_cost(H: int, W: int, C: int, M: int, mlp_ratio: int = 4, group: int = 1) -> CostReport:
    """Analytic cost of one block; ``group > 1`` gives the grouped variant (side g*M)."""
    side = group * M
    report = CostReport(
        components=[
            ComponentCost("dwa", 0, dwa_cost(H, W, C, side)),
            ComponentCost("pwa", 0, pwa_cost(H, W, C, side)),
            ComponentCost("mlp", 0, mlp_cost(H, W, C, mlp_ratio)),
            ComponentCost("layernorm", 0, 0),
        ],
        geometry=[{"H": H, "W": W, "C": C, "M": side, "N": _windows(H, W, side)}],
        notes=[_LN_NOTE],
    )
    return report


def swin_two_block_cost(H: int, W: int, C: int, M: int, mlp_ratio: int = 4) -> int:
    """Two successive window-attention blocks (attention + MLP each)."""
    return 2 * (window_msa_cost(H, W, C, M) + mlp_cost(H, W, C, mlp_ratio))


@dataclass
class StageComparison:
    stage: int
    H: int
    W: int
    C: int
    M: int
    N: int
    sepvit_macs: int
    two_block_macs: int

    @property
    def ratio(self) -> float:
        return self.sepvit_macs / self.two_block_macs


def block_comparison(config: ModelConfig) -> list[StageComparison]:
    """Per-stage MACs of one (DSSA) SepViT block vs two window-MSA blocks."""
    rows = []
    for i, (s, side) in enumerate(zip(config.stages, config.stage_sides()), start=1):
        sep = sepvit_block_cost(side, side, s.channels, s.window, config.mlp_ratio).analytic_total
        two = swin_two_block_cost(side, side, s.channels, s.window, config.mlp_ratio)
        rows.append(StageComparison(i, side, side, s.channels, s.window, _windows(side, side, s.window), sep, two))
    return rows


def comparison_csv(rows: list[StageComparison], empirical: CostReport | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "H", "W", "C", "M", "N", "sepvit_block_macs", "two_window_msa_block_macs", "ratio", "attention_exact"])
    for r in rows:
        exact = ""
        if empirical is not None:
            attn = [c for c in empirical.attention_rows() if c.stage == r.stage]
            exact = str(all(c.exact for c in attn)) if attn else ""
        w.writerow([r.stage, r.H, r.W, r.C, r.M, r.N, r.sepvit_macs, r.two_block_macs, f"{r.ratio:.6f}", exact])
    return buf.getvalue()


def analytic_model_cost(config: ModelConfig, batch: int = 1) -> CostReport:
    """Analytic MACs of a full forward pass, keyed like the instrumented scopes."""
    comps: list[ComponentCost] = []
    geometry = []
    in_ch, res = config.in_chans, config.input_resolution
    for i, (s, side) in enumerate(zip(config.stages, config.stage_sides()), start=1):
        comps.append(ComponentCost("merge", i, batch * conv_cost(side, side, in_ch, s.channels, s.merge_kernel)))
        for b, kind in enumerate(s.block_pattern):
            m = s.window * (s.group if kind == GSA else 1)
            tag = f"block{b}.{kind}"
            comps.append(ComponentCost(f"{tag}/dwa", i, batch * dwa_cost(side, side, s.channels, m)))
            comps.append(ComponentCost(f"{tag}/pwa", i, batch * pwa_cost(side, side, s.channels, m)))
            comps.append(ComponentCost(f"{tag}/mlp", i, batch * mlp_cost(side, side, s.channels, config.mlp_ratio)))
        comps.append(ComponentCost("cpe", i, batch * conv_cost(side, side, s.channels, s.channels, 3, groups=s.channels)))
        geometry.append({"stage": i, "H": side, "W": side, "C": s.channels, "M": s.window, "N": _windows(side, side, s.window)})
        in_ch = s.channels
    comps.append(ComponentCost("head", 0, batch * in_ch * config.num_classes))
    return CostReport(comps, geometry, [_LN_NOTE])


def _param_owner(name: str) -> tuple[int, str]:
    """Map a parameter name to (stage, component key) as used in reports."""
    parts = name.split(".")
    if parts[0] != "stages":
        return 0, "head"
    stage = int(parts[1]) + 1
    if parts[2] == "merge":
        return stage, "merge"
    if parts[2] == "pos":
        return stage, "cpe"
    b = int(parts[3])
    field_name = parts[5]
    if field_name in ("ln1", "q", "k", "v", "window_tokens"):
        part = "dwa"
    elif field_name in ("ln_wt", "pwa_q", "pwa_k", "out_proj"):
        part = "pwa"
    else:
        part = "mlp"
    return stage, f"block{b}/{part}"


def count_params(model: SepViT) -> dict[str, int]:
    """Exact parameter totals per component plus ``"total"``.

    Every tensor held by the model counts, including fixed-zero window tokens.
    """
    table: dict[str, int] = {}
    for name, p in model.named_parameters():
        stage, comp = _param_owner(name)
        key = comp if stage == 0 else f"stage{stage}.{comp}"
        table[key] = table.get(key, 0) + p.size
    table["total"] = sum(p.size for p in model.parameters())
    return table


def count_macs_empirical(model: SepViT, input_shape: tuple[int, ...] | None = None) -> CostReport:
    """Run one instrumented forward pass and pair each scope with its analytic value."""
    cfg = model.config
    if input_shape is None:
        input_shape = (1, cfg.in_chans, cfg.input_resolution, cfg.input_resolution)
    batch = input_shape[0]
    report = analytic_model_cost(cfg, batch)
    with MacCounter() as counter:
        model(Tensor(np.zeros(input_shape, dtype=model.dtype)))

    params = count_params(model)
    kinds = {}
    for i, s in enumerate(cfg.stages, start=1):
        for b, kind in enumerate(s.block_pattern):
            kinds[(i, b)] = kind
    for c in report.components:
        key = "head" if c.stage == 0 else f"stage{c.stage}/{c.name}"
        c.empirical_macs = counter.by_scope.get(key, 0)
        if c.stage == 0:
            c.params = params.get("head", 0)
        elif "/" in c.name:
            block, part = c.name.split("/")
            c.params = params.get(f"stage{c.stage}.{block.split('.')[0]}/{part}", 0)
        else:
            c.params = params.get(f"stage{c.stage}.{c.name}", 0)
    unmatched = set(counter.by_scope) - {"head" if c.stage == 0 else f"stage{c.stage}/{c.name}" for c in report.components}
    for key in sorted(unmatched):
        report.components.append(ComponentCost(key, -1, 0, counter.by_scope[key]))
    report.notes.append(f"empirical counts from one forward pass on input {tuple(input_shape)}")
    return report
