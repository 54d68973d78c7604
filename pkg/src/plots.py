"""Post-hoc plotly figures written as standalone HTML."""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)


def particle_number_figure(df: pd.DataFrame, title: str = "Particle numbers") -> go.Figure:
    """N_m(t) of the three components from a particle_numbers table."""
    long = df.melt(id_vars="t_ms", value_vars=["N_m1", "N_0", "N_p1"],
                   var_name="component", value_name="N")
    fig = px.line(
        long,
        x="t_ms",
        y="N",
        color="component",
        title=title,
        labels={"t_ms": "Time (ms)", "N": "Number of atoms", "component": "m_F"},
    )
    fig.update_layout(height=400)
    return fig


def density_figure(matrix: pd.DataFrame, title: str, colorscale: str = "Viridis") -> go.Figure:
    """Heat map of a density_slice / velocity plane matrix."""
    fig = go.Figure(data=go.Heatmap(
        z=matrix.values,
        x=matrix.columns.values,
        y=matrix.index.values,
        colorscale=colorscale,
        showscale=True,
    ))
    fig.update_layout(
        title=title,
        xaxis_title=matrix.columns.name,
        yaxis_title=matrix.index.name,
        height=500,
    )
    return fig


def heatmap_figure(pivot: pd.DataFrame, metric: str, title: Optional[str] = None) -> go.Figure:
    """Scan heat map: rows and columns are the two scan axes."""
    fig = go.Figure(data=go.Heatmap(
        z=pivot.values.astype(float),
        x=[str(c) for c in pivot.columns],
        y=[str(i) for i in pivot.index],
        colorscale="Blues",
        showscale=True,
        colorbar={"title": metric},
    ))
    fig.update_layout(
        title=title or metric,
        xaxis_title=pivot.columns.name,
        yaxis_title=pivot.index.name,
        height=500,
    )
    return fig


def curves_figure(df: pd.DataFrame, x: str, y: str, color: str, title: str) -> go.Figure:
    fig = px.line(df, x=x, y=y, color=color, title=title, markers=len(df) < 200)
    fig.update_layout(height=400)
    return fig


def write_html(fig: go.Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.debug("figure written to %s", path)
    return path


def velocity_plane_frame(vx, vz, values) -> pd.DataFrame:
    """Velocity plane as a labelled matrix in μm/s."""
    return pd.DataFrame(np.asarray(values),
                        index=pd.Index(np.round(np.asarray(vx) * 1e6, 3), name="v_x_um_s"),
                        columns=pd.Index(np.round(np.asarray(vz) * 1e6, 3), name="v_z_um_s"))
