"""Subcommand table for the bench CLI."""

import argparse
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from tools import ChartTool, ExperimentTool, ReportTool, TheoryTool
from tools.errors import ConfigError, exit_code_for
from tools.experiment_tool import SWEEP_PARAMS, motivating_checks, sweep_checks
from tools.filter_tool import BASELINES
from tools.score_tool import load_score_model

logger = logging.getLogger(__name__)

experiment_tool = ExperimentTool()
theory_tool = TheoryTool()


class BenchArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> List[float]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    try:
        return [float(item) for item in items]
    except ValueError as e:
        raise ConfigError(f"--values must be a comma-separated list of numbers: {e}") from e


def _fail(result: Dict[str, Any]) -> int:
    logger.error(result.get('error', 'unknown failure'))
    return int(result.get('exit_code', 3))


def _load(config: str) -> Optional[Dict[str, Any]]:
    result = experiment_tool.run('load', path=config)
    return None if result['success'] else result


def cmd_stage(args: argparse.Namespace) -> int:
    failed = _load(args.config)
    if failed:
        return _fail(failed)
    result = experiment_tool.run(args.command, seed=args.seed, out_dir=args.out,
                                 method=getattr(args, 'method', 'merge_all'))
    if not result['success']:
        return _fail(result)
    print(result['message'])
    for key, path in result.get('files', {}).items():
        print(f"  {key}: {path}")
    return 0


def _print_checks(checks: Dict[str, Any]) -> None:
    for key, value in checks.items():
        print(f"  {key}: {value}")


def cmd_run(args: argparse.Namespace) -> int:
    failed = _load(args.config)
    if failed:
        return _fail(failed)
    result = experiment_tool.run('run', out_dir=args.out)
    if not result['success']:
        return _fail(result)
    print(result['message'])
    print(f"results: {result['results_path']}")
    _print_checks(result['checks'])
    if args.strict_checks and not result['checks'].get('passes', False):
        logger.error("directional self-checks did not hold")
        return 2
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    failed = _load(args.config)
    if failed:
        return _fail(failed)
    values = _float_list(args.values)
    result = experiment_tool.run('sweep', param=args.param, values=values, out_dir=args.out)
    if not result['success']:
        return _fail(result)
    print(result['message'])
    print(f"results: {result['results_path']}")
    _print_checks(result['checks'])
    if args.strict_checks and not result['checks'].get('passes', False):
        logger.error("sweep self-check did not hold")
        return 2
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    result = theory_tool.run('bench', seed=args.seed, n_instances=args.n_instances, c1_scale=args.c1_scale)
    if not result['success']:
        return _fail(result)
    summary: pd.DataFrame = result['summary']
    print(summary.to_string(index=False))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary.to_csv(out / "theory_summary.csv", index=False, float_format="%.10g", lineterminator="\n")
        ChartTool(output_dir=str(out / "charts")).run('slack', summary=summary)

    if args.c1_scale == 1.0:
        if not result['all_hold']:
            logger.error("theory checks failed")
            return 2
        print(result['message'])
        return 0
    lemma1 = summary[summary['check'] == 'lemma1']
    detected = bool((lemma1['holds_count'] < lemma1['instances']).any())
    if not detected:
        logger.error("C1 scaled by %g but no lemma1 check failed", args.c1_scale)
        return 2
    print(f"mutation self-test: C1 scaled by {args.c1_scale:g} detected")
    return 0


def _score_model_charts(paths: Sequence[str], chart_tool: ChartTool,
                        report_tool: ReportTool) -> List[Dict[str, Any]]:
    """Loss curve per saved score model plus its final and kept-epoch losses as checks."""
    charts, summary = [], {}
    for i, path in enumerate(paths):
        model = load_score_model(path)
        label = f"{i}_{Path(path).parent.name}"
        charts.append(chart_tool.run('loss', losses=model.losses, val_losses=model.val_losses,
                                     best_epoch=model.best_epoch, title=f"NCE loss ({path})",
                                     filename=f"nce_loss_{label}.png"))
        summary[label] = {'final_loss': model.final_loss, 'best_epoch': model.best_epoch,
                          'epochs': max(len(model.losses) - 1, 0)}
    if summary:
        report_tool.run('checks', section="score models", checks=summary)
    return charts


def cmd_report(args: argparse.Namespace) -> int:
    out = args.out or os.getenv('DVDF_OUTPUT_DIR', 'results')
    report_tool = ReportTool(output_dir=os.path.join(out, 'report'))
    chart_tool = ChartTool(output_dir=os.path.join(out, 'report', 'charts'))

    result = report_tool.run('load_results', paths=args.results)
    if not result['success']:
        return _fail(result)
    print(result['message'])
    data = report_tool.current_data

    chart_tool.run('load', data=data)
    charts = [chart_tool.run('methods'), chart_tool.run('composition')]
    for param in SWEEP_PARAMS:
        if data[param].nunique(dropna=True) > 1 and data['method'].eq('dvdf').all():
            charts.append(chart_tool.run('sweep', param=param))
            report_tool.run('checks', section=f"{param} sweep", checks=sweep_checks(data, param))
    charts += _score_model_charts(args.score_models, chart_tool, report_tool)
    pngs = [c['filepath'] for c in charts if c['success'] and c.get('filepath')]
    for chart in charts:
        if not chart['success']:
            logger.warning("chart skipped: %s", chart['error'])

    if data['method'].nunique() > 1:
        report_tool.run('checks', section="motivating", checks=motivating_checks(data))

    outputs = [report_tool.run('csv'), report_tool.run('summary')]
    if args.pdf:
        outputs.append(report_tool.run('pdf', charts=pngs))
    if args.excel:
        outputs.append(report_tool.run('excel'))
    for output in outputs:
        if not output['success']:
            return _fail(output)
        print(output['message'])
    return 0


def build_parser() -> BenchArgumentParser:
    parser = BenchArgumentParser(prog="dvdf-bench", description="Tabular cross-domain offline RL bench")
    parser.add_argument("--log-level", default=None, help="overrides DVDF_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def staged(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="defaults to the config's output_dir")
        p.set_defaults(func=cmd_stage)
        return p

    staged("gen", "build domains and collect datasets")
    staged("pretrain", "pre-train the source critic")
    staged("score", "train the dynamics scorer and score source records")
    staged("train", "train DVDF on target plus filtered source data")
    baseline = staged("baseline", "train one baseline")
    baseline.add_argument("--method", required=True, choices=BASELINES)

    run = sub.add_parser("run", help="full experiment over every configured seed")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--strict-checks", action="store_true", help="exit 2 when directional self-checks fail")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="DVDF across values of lambda or xi")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True, help="comma-separated, e.g. 0,0.3,0.5,0.7,0.9,1")
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--strict-checks", action="store_true")
    sweep.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("bench", help="theory bound and identity checks")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--n-instances", type=int, default=200)
    bench.add_argument("--c1-scale", type=float, default=1.0, help="mutation self-test when not 1")
    bench.add_argument("--out", default=None)
    bench.set_defaults(func=cmd_bench)

    report = sub.add_parser("report", help="merge results files into summaries and charts")
    report.add_argument("--results", nargs="+", required=True)
    report.add_argument("--out", default=None)
    report.add_argument("--pdf", action="store_true")
    report.add_argument("--excel", action="store_true")
    report.add_argument("--score-models", nargs="*", default=[], help="score_model.txt files whose loss curves to plot")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None, parser: Optional[argparse.ArgumentParser] = None) -> int:
    parser = parser or build_parser()
    try:
        args = parser.parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(args.log_level.upper())
        return args.func(args)
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        return exit_code_for(e)

