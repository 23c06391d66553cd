import os
import logging
from typing import Dict, Any, Optional, Sequence

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import seaborn as sns
import plotly.express as px
import plotly.graph_objects as go

from .experiment_tool import parse_composition

logger = logging.getLogger(__name__)


class ChartTool:
    """Tool for plotting experiment results, sweeps and theory checks."""

    name = "chart_generator"
    description = "Plot per-method returns, sweep curves, selection composition, theory slack and NCE losses"

    def __init__(self, output_dir: str = "results/charts"):
        self.output_dir = output_dir
        self.current_data: Optional[pd.DataFrame] = None
        os.makedirs(output_dir, exist_ok=True)

        plt.style.use('seaborn-v0_8-whitegrid')
        self.color_palette = px.colors.qualitative.Set2

    def load_data(self, data: pd.DataFrame) -> Dict[str, Any]:
        """Load a results frame; error rows are dropped."""
        try:
            if 'method' in data.columns:
                data = data[data['method'] != 'error']
            self.current_data = data
            return {
                'success': True,
                'message': f"Loaded {len(data)} rows for plotting"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def _save_matplotlib_chart(self, fig, filename: str) -> str:
        filepath = os.path.join(self.output_dir, filename)
        fig.savefig(filepath, dpi=150, bbox_inches='tight', facecolor='white')
        plt.close(fig)
        return filepath

    def _save_plotly_chart(self, fig, filename: str) -> str:
        """Save plotly figure as HTML."""
        html_path = os.path.join(self.output_dir, filename)
        fig.write_html(html_path, include_plotlyjs='cdn')
        return html_path

    def method_bar(self, metric: str = 'J_tar', title: Optional[str] = None) -> Dict[str, Any]:
        """Mean and standard deviation of ``metric`` per method across seeds."""
        if self.current_data is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            df = self.current_data
            stats = df.groupby('method', sort=False)[metric].agg(['mean', 'std', 'count']).reset_index()
            stats['std'] = stats['std'].fillna(0.0)
            title = title or f"{metric} by method"

            fig = px.bar(stats, x='method', y='mean', error_y='std', title=title,
                         color='method', color_discrete_sequence=self.color_palette)
            fig.update_layout(template='plotly_white', yaxis_title=metric, showlegend=False)
            html_path = self._save_plotly_chart(fig, f"methods_{metric}.html")

            mfig, ax = plt.subplots(figsize=(7, 4))
            sns.barplot(data=df, x='method', y=metric, errorbar='sd', ax=ax, palette='Set2',
                        hue='method', legend=False)
            ax.set_title(title)
            png_path = self._save_matplotlib_chart(mfig, f"methods_{metric}.png")

            return {
                'success': True,
                'chart_type': 'method_bar',
                'filepath': png_path,
                'html_path': html_path,
                'stats': stats,
                'message': f"Method chart created: {title}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def sweep_curve(self, param: str, metric: str = 'J_tar', title: Optional[str] = None) -> Dict[str, Any]:
        """Mean ``metric`` against the swept parameter with a one-std band."""
        if self.current_data is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            df = self.current_data
            if param not in df.columns:
                return {'success': False, 'error': f'Column {param} not in data'}
            stats = df.groupby(param)[metric].agg(['mean', 'std']).reset_index().sort_values(param)
            stats['std'] = stats['std'].fillna(0.0)
            title = title or f"{metric} across {param}"

            fig = go.Figure()
            fig.add_trace(go.Scatter(
                x=pd.concat([stats[param], stats[param][::-1]]),
                y=pd.concat([stats['mean'] + stats['std'], (stats['mean'] - stats['std'])[::-1]]),
                fill='toself', line=dict(width=0), fillcolor='rgba(102,194,165,0.25)',
                hoverinfo='skip', showlegend=False,
            ))
            fig.add_trace(go.Scatter(x=stats[param], y=stats['mean'], mode='lines+markers',
                                     name=metric, line=dict(color=self.color_palette[0])))
            fig.update_layout(title=title, template='plotly_white', xaxis_title=param, yaxis_title=metric)
            html_path = self._save_plotly_chart(fig, f"sweep_{param}_{metric}.html")

            mfig, ax = plt.subplots(figsize=(7, 4))
            ax.plot(stats[param], stats['mean'], marker='o')
            ax.fill_between(stats[param], stats['mean'] - stats['std'], stats['mean'] + stats['std'], alpha=0.25)
            ax.set_xlabel(param)
            ax.set_ylabel(metric)
            ax.set_title(title)
            png_path = self._save_matplotlib_chart(mfig, f"sweep_{param}_{metric}.png")

            return {
                'success': True,
                'chart_type': 'sweep',
                'filepath': png_path,
                'html_path': html_path,
                'stats': stats,
                'message': f"Sweep curve created: {title}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def composition_chart(self, title: str = "Selected source composition") -> Dict[str, Any]:
        """Stacked share of each source label in the selected set, per method."""
        if self.current_data is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            df = self.current_data
            records = []
            for method, group in df.groupby('method', sort=False):
                totals: Dict[str, int] = {}
                for text in group['composition']:
                    for label, count in parse_composition(text).items():
                        totals[label] = totals.get(label, 0) + count
                n = sum(totals.values())
                records += [{'method': method, 'label': label, 'share': count / n}
                            for label, count in sorted(totals.items()) if n]
            if not records:
                return {'success': False, 'error': 'No selection composition in data'}
            shares = pd.DataFrame(records)

            fig = px.bar(shares, x='method', y='share', color='label', title=title,
                         color_discrete_sequence=self.color_palette)
            fig.update_layout(template='plotly_white', barmode='stack')
            html_path = self._save_plotly_chart(fig, "composition.html")

            pivot = shares.pivot(index='method', columns='label', values='share').fillna(0.0)
            mfig, ax = plt.subplots(figsize=(7, 4))
            pivot.plot(kind='bar', stacked=True, ax=ax, color=sns.color_palette('Set2', pivot.shape[1]))
            ax.set_ylabel('share of selected records')
            ax.set_title(title)
            png_path = self._save_matplotlib_chart(mfig, "composition.png")

            return {
                'success': True,
                'chart_type': 'composition',
                'filepath': png_path,
                'html_path': html_path,
                'shares': shares,
                'message': f"Composition chart created for {pivot.shape[0]} methods"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def slack_chart(self, summary: pd.DataFrame, title: str = "Theory check slack") -> Dict[str, Any]:
        """Minimum slack per theory check; negative bars are failures."""
        try:
            fig = px.bar(summary, x='check', y='min_slack', title=title, color='kind',
                         color_discrete_sequence=self.color_palette)
            fig.update_layout(template='plotly_white')
            html_path = self._save_plotly_chart(fig, "theory_slack.html")
            return {
                'success': True,
                'chart_type': 'slack',
                'html_path': html_path,
                'message': f"Slack chart created for {len(summary)} checks"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def loss_curve(self, losses: Sequence[float], val_losses: Sequence[float] = (),
                   title: str = "NCE training loss", filename: str = "nce_loss.png",
                   best_epoch: Optional[int] = None) -> Dict[str, Any]:
        """Training and held-out NCE loss per epoch against the chance level log 2."""
        try:
            losses = np.asarray(losses, dtype=float)
            if losses.size == 0:
                return {'success': False, 'error': 'No losses to plot'}
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.plot(np.arange(losses.size), losses, label='train')
            if len(val_losses):
                ax.plot(np.arange(len(val_losses)), np.asarray(val_losses, dtype=float), label='held out')
            if best_epoch is not None:
                ax.axvline(best_epoch, color='black', linestyle=':', linewidth=1, label='kept epoch')
            ax.axhline(np.log(2.0), color='grey', linestyle='--', linewidth=1, label='log 2')
            ax.set_xlabel('epoch')
            ax.set_ylabel('loss')
            ax.set_title(title)
            ax.legend()
            png_path = self._save_matplotlib_chart(fig, filename)
            return {
                'success': True,
                'chart_type': 'loss',
                'filepath': png_path,
                'message': f"Loss curve created over {losses.size} epochs"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        actions = {
            'load': lambda: self.load_data(kwargs.get('data')),
            'methods': lambda: self.method_bar(kwargs.get('metric', 'J_tar'), kwargs.get('title')),
            'sweep': lambda: self.sweep_curve(kwargs.get('param', 'lambda'), kwargs.get('metric', 'J_tar'),
                                              kwargs.get('title')),
            'composition': lambda: self.composition_chart(kwargs.get('title', 'Selected source composition')),
            'slack': lambda: self.slack_chart(kwargs.get('summary'), kwargs.get('title', 'Theory check slack')),
            'loss': lambda: self.loss_curve(kwargs.get('losses', ()), kwargs.get('val_losses', ()),
                                              kwargs.get('title', 'NCE training loss'),
                                              kwargs.get('filename', 'nce_loss.png'), kwargs.get('best_epoch')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
