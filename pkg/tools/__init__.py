from .env_tool import EnvTool
from .learner_tool import LearnerTool
from .score_tool import ScoreTool
from .filter_tool import FilterTool
from .theory_tool import TheoryTool
from .experiment_tool import ExperimentTool
from .chart_tool import ChartTool
from .report_tool import ReportTool

__all__ = [
    'EnvTool',
    'LearnerTool',
    'ScoreTool',
    'FilterTool',
    'TheoryTool',
    'ExperimentTool',
    'ChartTool',
    'ReportTool'
]
