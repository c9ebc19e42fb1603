from istr.pipeline.config import RunConfig, load_config, parse_config
from istr.pipeline.runner import RUN_ORDER, open_run, pipeline_run, run_stage
from istr.pipeline.stages import STAGES, StageContext
from istr.pipeline.state import RunDirectory, RunState

__all__ = [
    "RunConfig", "load_config", "parse_config", "RUN_ORDER", "open_run", "pipeline_run", "run_stage",
    "STAGES", "StageContext", "RunDirectory", "RunState",
]
