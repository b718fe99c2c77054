"""Analytic backward-FLOPs accounting.

Every addition, subtraction, multiplication or division counts as one FLOP.
For the columnized convolution backward the count is exact:

    dense:  (B*Hout*Wout) * (4*Cin*K^2 + 1) * Cout

Dropping a fraction D of the output channels removes that fraction of the
matrix work but adds the importance-summation overhead (one reduction over
batch and space per channel), giving

    sparse: [(4*M*N + M) * (1 - D) + M] * Cout,   M = B*Hout*Wout, N = Cin*K^2

The M*Cout overhead term slightly overstates the exact (M-1)*Cout summation
count; the approximation is kept so the break-even bound below matches it.
Sorting is comparison-only and contributes no FLOPs.  Savings require

    D > 1 / (4*Cin*K^2 + 1)

which is at most 1/37 (about 3%) once Cin >= 1 and K >= 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .exceptions import ShapeError
from .schedule import DropSchedule, schedule_rates


def conv_backward_flops_dense(
    bt: int, h_out: int, w_out: int, c_in: int, c_out: int, k: int
) -> int:
    m = bt * h_out * w_out
    n = c_in * k * k
    return m * (4 * n + 1) * c_out


def conv_backward_flops_sparse(
    bt: int, h_out: int, w_out: int, c_in: int, c_out: int, k: int, d: float
) -> int:
    if not 0.0 <= d < 1.0:
        raise ValueError(f"drop rate must be in [0, 1), got {d}")
    m = bt * h_out * w_out
    n = c_in * k * k
    return round(((4 * m * n + m) * (1.0 - d) + m) * c_out)


def batchnorm_backward_flops(bt: int, h: int, w: int, c: int) -> int:
    return 12 * (bt * h * w * c) + 10 * c


def dropout_backward_flops(bt: int, h: int, w: int, c: int) -> int:
    return 2 * (bt * h * w * c)


def drop_rate_lower_bound(c_in: int, k: int) -> float:
    """Minimum drop rate above which the sparse backward beats the dense one."""
    if c_in < 1 or k < 1:
        raise ValueError(f"c_in and k must be >= 1, got {c_in}, {k}")
    return 1.0 / (4 * c_in * k * k + 1)


@dataclass
class LayerCost:
    """Backward cost of one counted layer at the report's batch size.

    ``sparse_flops`` and ``overhead_flops`` are evaluated at the schedule's
    target drop rate and only differ from the dense count for convolution
    layers; normalization and dropout costs are unaffected by sparsity.
    """

    layer_id: str
    kind: str
    dense_flops: int
    sparse_flops: int
    overhead_flops: int
    lower_bound: float | None = None
    saves_at_target: bool | None = None


@dataclass
class FlopsReport:
    layers: list[LayerCost]
    target_drop_rate: float
    batch: int
    iters_per_epoch: int
    epochs: int
    # Per-iteration totals.
    dense_per_iter: int = 0
    sparse_per_iter: int = 0
    # Whole-run totals with the drop rate resolved per iteration.
    run_dense: int = 0
    run_actual: int = 0
    run_conv_dense: int = 0
    run_conv_actual: int = 0
    per_epoch_actual: list[int] = field(default_factory=list)
    per_epoch_conv_actual: list[int] = field(default_factory=list)

    @property
    def run_ratio(self) -> float:
        return self.run_actual / self.run_dense if self.run_dense else 1.0

    @property
    def run_savings(self) -> float:
        return 1.0 - self.run_ratio

    @property
    def conv_run_ratio(self) -> float:
        return (
            self.run_conv_actual / self.run_conv_dense if self.run_conv_dense else 1.0
        )


def _conv_cost_at(geom: dict, batch: int, d: float) -> int:
    """Cost of one conv backward at drop rate d; a rate of zero means the
    selection machinery is not engaged, so no overhead is charged."""
    args = (batch, geom["h_out"], geom["w_out"], geom["c_in"], geom["c_out"], geom["k"])
    if d > 0.0:
        return conv_backward_flops_sparse(*args, d)
    return conv_backward_flops_dense(*args)


def model_flops_report(
    geometry: list[dict],
    schedule: DropSchedule,
    batch: int,
) -> FlopsReport:
    """Aggregate per-layer backward FLOPs over a whole training schedule.

    ``geometry`` is a list of layer descriptions as produced by the model
    builder: dicts with a ``kind`` key ("conv", "batchnorm", "dropout" are
    counted; anything else is ignored) plus the counted layer's resolved
    shape fields.  Run totals resolve the drop rate per iteration: normal
    iterations (rate 0) cost the dense count, sparse iterations cost the
    shrunk count plus selection overhead.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    layers: list[LayerCost] = []
    target = schedule.target
    for geom in geometry:
        kind = geom.get("kind")
        lid = geom.get("id", kind or "?")
        try:
            if kind == "conv":
                args = (
                    batch,
                    geom["h_out"],
                    geom["w_out"],
                    geom["c_in"],
                    geom["c_out"],
                    geom["k"],
                )
                dense = conv_backward_flops_dense(*args)
                sparse = conv_backward_flops_sparse(*args, target)
                overhead = batch * geom["h_out"] * geom["w_out"] * geom["c_out"]
                bound = drop_rate_lower_bound(geom["c_in"], geom["k"])
                layers.append(
                    LayerCost(
                        lid, kind, dense, sparse, overhead,
                        lower_bound=bound, saves_at_target=target > bound,
                    )
                )
            elif kind == "batchnorm":
                flops = batchnorm_backward_flops(
                    batch, geom["h"], geom["w"], geom["c"]
                )
                layers.append(LayerCost(lid, kind, flops, flops, 0))
            elif kind == "dropout":
                flops = dropout_backward_flops(batch, geom["h"], geom["w"], geom["c"])
                layers.append(LayerCost(lid, kind, flops, flops, 0))
        except KeyError as exc:
            raise ShapeError(f"layer {lid}: unresolved geometry field {exc}") from exc

    report = FlopsReport(
        layers=layers,
        target_drop_rate=target,
        batch=batch,
        iters_per_epoch=schedule.iters_per_epoch,
        epochs=schedule.total_epochs,
    )
    report.dense_per_iter = sum(c.dense_flops for c in layers)
    report.sparse_per_iter = sum(c.sparse_flops for c in layers)

    conv_geoms = [g for g in geometry if g.get("kind") == "conv"]
    other_per_iter = sum(
        c.dense_flops for c in layers if c.kind != "conv"
    )
    conv_dense_per_iter = sum(c.dense_flops for c in layers if c.kind == "conv")

    rates = schedule_rates(schedule)
    per_epoch_actual = []
    per_epoch_conv = []
    for e in range(schedule.total_epochs):
        epoch_rates = rates[e * schedule.iters_per_epoch : (e + 1) * schedule.iters_per_epoch]
        conv_actual = sum(
            _conv_cost_at(g, batch, d) for d in epoch_rates for g in conv_geoms
        )
        per_epoch_conv.append(conv_actual)
        per_epoch_actual.append(conv_actual + other_per_iter * len(epoch_rates))

    report.per_epoch_actual = per_epoch_actual
    report.per_epoch_conv_actual = per_epoch_conv
    report.run_conv_actual = sum(per_epoch_conv)
    report.run_conv_dense = conv_dense_per_iter * len(rates)
    report.run_actual = sum(per_epoch_actual)
    report.run_dense = report.dense_per_iter * len(rates)
    return report


def format_report(report: FlopsReport) -> str:
    """Human-readable text form of a FLOPs report."""
    lines = []
    lines.append(
        f"Backward FLOPs report  (batch={report.batch}, "
        f"target drop rate={report.target_drop_rate:g}, "
        f"{report.epochs} epochs x {report.iters_per_epoch} iters)"
    )
    lines.append("")
    header = (
        f"{'layer':<14}{'kind':<11}{'dense/iter':>14}{'sparse/iter':>14}"
        f"{'overhead':>10}{'bound':>8}  saves"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for c in report.layers:
        bound = f"{c.lower_bound:.4f}" if c.lower_bound is not None else "-"
        saves = (
            "-"
            if c.saves_at_target is None
            else ("yes" if c.saves_at_target else "NO (target below bound)")
        )
        lines.append(
            f"{c.layer_id:<14}{c.kind:<11}{c.dense_flops:>14,}"
            f"{c.sparse_flops:>14,}{c.overhead_flops:>10,}{bound:>8}  {saves}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'total':<25}{report.dense_per_iter:>14,}{report.sparse_per_iter:>14,}"
    )
    lines.append("")
    lines.append(f"run dense total:      {report.run_dense:,}")
    lines.append(f"run actual total:     {report.run_actual:,}")
    lines.append(f"run sparse/dense ratio: {report.run_ratio:.4f}")
    lines.append(f"run savings:          {report.run_savings:.1%}")
    lines.append(
        f"conv-only run ratio:  {report.conv_run_ratio:.4f} "
        f"({report.run_conv_actual:,} / {report.run_conv_dense:,})"
    )
    return "\n".join(lines)
