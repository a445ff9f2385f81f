"""
This module provides functions for drawing the comparison charts of several evaluated
estimation runs: mean ADD(-S) error and overall recall against the injected noise level,
one line per strategy.

Functions:
----------
- error_vs_noise_draw(df_curves: pd.DataFrame, plots_dir: str, x_col: str='noise_px', save_name: str='error_vs_noise.svg') -> bool:
    Draws the mean pose error of every strategy against the noise level.
- recall_vs_noise_draw(df_curves: pd.DataFrame, plots_dir: str, x_col: str='noise_px', save_name: str='recall_vs_noise.svg') -> bool:
    Draws the overall ADD(-S) recall of every strategy against the noise level.
"""

import os

import matplotlib
import matplotlib.pyplot as plt

import pandas as pd
import seaborn as sns

AXIS_LABELS = {
    'noise_px'        : 'Pixel noise sigma (px)',
    'noise_mm'        : 'Object coordinate noise sigma (mm)',
    'outlier_fraction': 'Outlier fraction',
    'disparity_sigma' : 'Disparity noise sigma (px)',
}

# fixed ids and no timestamp keep the SVG output byte-stable
matplotlib.rcParams['svg.hashsalt'] = 'stereo-pose'
SVG_METADATA = {'Date': None, 'Creator': None}


def _line_chart(df_curves:pd.DataFrame, x_col:str, y_col:str, y_label:str, plots_dir:str, save_name:str) -> bool:

    if x_col not in df_curves.columns or y_col not in df_curves.columns:
        raise KeyError(f"columns {x_col} and {y_col} are required")
    if not os.path.isdir(plots_dir):
        raise FileNotFoundError(f"Plot directory does not exist: {plots_dir}")

    fig, ax = plt.subplots(figsize=(8, 5))

    sns.lineplot(
        data     =df_curves,
        x        =x_col,
        y        =y_col,
        hue      ='strategy',
        style    ='strategy',
        markers  =True,
        dashes   =False,
        errorbar =None,
        ax       =ax,
    )

    ax.set_xlabel(AXIS_LABELS.get(x_col, x_col))
    ax.set_ylabel(y_label)
    ax.grid(True, alpha=0.4)
    ax.legend(title='Strategy', fontsize='small')

    plt.tight_layout()
    fig.savefig(os.path.join(plots_dir, save_name), format='svg', metadata=SVG_METADATA)
    plt.close(fig)

    return True


def error_vs_noise_draw(df_curves:pd.DataFrame, plots_dir:str, x_col:str='noise_px', save_name:str='error_vs_noise.svg') -> bool:

    """
    Function to draw the mean ADD(-S) error per strategy against a noise level.

    Parameters:
    -----------
    df_curves : pd.DataFrame
        One row per (run, strategy) with the columns ``strategy``, ``x_col`` and ``mean_error_mm``.
    plots_dir : str
        Path to the directory to save the plot.
    x_col : str
        Noise knob on the horizontal axis.

    Returns:
    --------
    bool
    """

    return _line_chart(df_curves, x_col, 'mean_error_mm', 'Mean ADD(-S) error (mm)', plots_dir, save_name)


def recall_vs_noise_draw(df_curves:pd.DataFrame, plots_dir:str, x_col:str='noise_px', save_name:str='recall_vs_noise.svg') -> bool:

    """
    Function to draw the overall ADD(-S) recall per strategy against a noise level.

    Parameters:
    -----------
    df_curves : pd.DataFrame
        One row per (run, strategy) with the columns ``strategy``, ``x_col`` and ``recall``.
    plots_dir : str
        Path to the directory to save the plot.

    Returns:
    --------
    bool
    """

    return _line_chart(df_curves, x_col, 'recall', 'Overall ADD(-S) recall (%)', plots_dir, save_name)
