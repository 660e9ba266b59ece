"""
Chart rendering for training series and tours (SVG via kaleido)
"""

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from core.tsp import Tour

METRIC_TITLES = {
    "J_mean": "Tour cost J",
    "sigma_B": "Deviation σ_B",
    "entropy_mean": "Entropy H",
    "Q_mean": "Mean Q",
    "kl_mean": "KL(tempered ‖ pointer)",
    "q_sharpening": "Share of actions with Q > 1",
}
EPOCH_METRICS = ("J_mean", "sigma_B", "entropy_mean", "Q_mean")
POLICY_METRICS = ("kl_mean", "q_sharpening")
METHOD_COLORS = {"pqn": "#1f77b4", "ptrnet": "#ff7f0e", "benchmark": "#2ca02c"}


def _mark_window(fig: go.Figure, window: Optional[Tuple[int, int]]):
    if window is None:
        return
    first, last = window
    fig.add_vrect(x0=first, x1=last, fillcolor="red", opacity=0.12, line_width=0,
                  annotation_text="perturbed", annotation_position="top left")


def metrics_figure(frames: Dict[str, pd.DataFrame], window: Optional[Tuple[int, int]] = None,
                   metrics: Sequence[str] = EPOCH_METRICS) -> go.Figure:
    """One panel per metric over epochs, one line per method"""
    fig = make_subplots(rows=len(metrics), cols=1, shared_xaxes=True,
                        subplot_titles=[METRIC_TITLES.get(m, m) for m in metrics])
    for method, frame in frames.items():
        for row, metric in enumerate(metrics, start=1):
            fig.add_trace(
                go.Scatter(x=frame["epoch"], y=frame[metric], mode="lines", name=method,
                           line=dict(color=METHOD_COLORS.get(method)), showlegend=row == 1),
                row=row, col=1,
            )
    _mark_window(fig, window)
    fig.update_xaxes(title_text="Epoch", row=len(metrics), col=1)
    fig.update_layout(height=260 * len(metrics), width=800, template="plotly_white")
    return fig


def loss_figure(frame: pd.DataFrame, window: Optional[Tuple[int, int]] = None,
                x: str = "epoch") -> go.Figure:
    """TD and supervised loss profiles; pass a step frame with x='step' for the per-step view"""
    fig = go.Figure()
    for column, label in (("td_loss", "TD loss"), ("sup_loss", "Supervised loss")):
        if column in frame:
            fig.add_trace(go.Scatter(x=frame[x], y=frame[column], mode="lines", name=label))
    if x == "epoch":
        _mark_window(fig, window)
    fig.update_layout(
        title="Loss profiles",
        xaxis_title=x.capitalize(),
        yaxis_title="Loss",
        height=400,
        width=800,
        template="plotly_white",
    )
    return fig


def path_figure(coords: np.ndarray, tours: Dict[str, Tour], title: str = "Tours") -> go.Figure:
    """Cities as markers, each tour as a closed polyline"""
    fig = go.Figure()
    for method, tour in tours.items():
        order = list(tour.order) + [tour.order[0]]
        fig.add_trace(go.Scatter(x=coords[order, 0], y=coords[order, 1], mode="lines", name=method,
                                 line=dict(color=METHOD_COLORS.get(method))))
    fig.add_trace(go.Scatter(x=coords[:, 0], y=coords[:, 1], mode="markers+text", name="cities",
                             text=[str(i) for i in range(len(coords))], textposition="top center",
                             marker=dict(size=8, color="black")))
    fig.update_layout(title=title, height=600, width=600, template="plotly_white",
                      yaxis=dict(scaleanchor="x", scaleratio=1))
    return fig


def save_svg(fig: go.Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_image(str(path), format="svg")
    return path
