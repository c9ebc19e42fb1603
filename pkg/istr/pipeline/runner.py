import json
import logging
from typing import Optional, Sequence

from istr.errors import ConfigError, IstrError, StageError
from istr.metrics.report import dumps, read_json, write_json
from istr.metrics.timing import StageTimer
from istr.pipeline.config import RunConfig
from istr.pipeline.stages import STAGES, StageContext, repair_pairs, stage_outputs
from istr.pipeline.state import RunDirectory, RunState, new_state, record_outputs

logger = logging.getLogger(__name__)

RUN_ORDER = ("poison", "train", "detect", "dms", "invert", "repair", "eval", "report")

# stages whose cost scales with the defender's clean set
_PER_SAMPLE = {"detect", "dms", "invert", "repair"}


def open_run(config: RunConfig, out=None) -> RunDirectory:
    """Create the run directory; the config echo is written once, when the run is new."""
    root = out or config.out
    if not root:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    run = RunDirectory(root).create()
    echo = config.to_dict()
    echo.pop("out", None)
    if not run.config_echo.exists():
        write_json(echo, run.config_echo)
    elif read_json(run.config_echo) != json.loads(dumps(echo)):
        logger.warning("config differs from the one %s was created with; keeping the original echo", root)
    return run


def run_stage(stage: str, ctx: StageContext, state: RunState, timer: Optional[StageTimer] = None) -> None:
    """Run one stage, recording its outputs; failures are re-raised naming the stage."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; valid stages: {', '.join(STAGES)}")
    timer = timer or ctx.timer
    logger.info("stage %s starting", stage)
    try:
        samples = len(ctx.defense) if stage in _PER_SAMPLE else None
        with timer.stage(stage, samples):
            paths = STAGES[stage](ctx)
    except StageError:
        raise
    except IstrError as e:
        raise StageError(stage, f"{type(e).__name__}: {e}") from e
    record_outputs(state, ctx.run, paths)
    state["stages"].append(stage)
    logger.info("stage %s wrote %d artifacts", stage, len(paths))


def pipeline_run(config: RunConfig, out=None, stages: Sequence[str] = RUN_ORDER, resume: bool = True,
                 model_path=None) -> RunState:
    """Run ``stages`` in order, skipping any whose outputs already exist when ``resume`` is set.

    Artifacts written before a failing stage stay on disk, so a rerun picks up
    from the stage that failed. ``model_path`` points every stage that reads
    the suspect model at an external checkpoint.
    """
    run = open_run(config, out)
    timer = StageTimer()
    ctx = StageContext(config, run, timer, model_path)
    state = new_state()
    try:
        for stage in stages:
            if resume and all(p.exists() for p in stage_outputs(run, stage)):
                logger.info("stage %s already done; skipping", stage)
                state["skipped"].append(stage)
                continue
            run_stage(stage, ctx, state, timer)
    finally:
        if timer.rows:
            timer.save(run.report("timing", ".csv"))
    detection = run.report("detection")
    if detection.exists():
        state["flagged_pairs"] = repair_pairs(read_json(detection))
    return state
