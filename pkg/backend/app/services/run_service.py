"""
运行登记服务
"""

import uuid
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import orjson
from sqlalchemy import desc
from sqlalchemy.orm import Session

from app.core.logging import add_run_sink, logger, remove_run_sink
from app.models.database import Run, RunEvent
from app.schemas import RunResponse, RunStatus


def new_run_id(command: str) -> str:
    return f"{command}-{uuid.uuid4().hex[:12]}"


class RunService:
    """运行登记表的增删改查；磁盘上的运行目录才是回放的依据"""

    def __init__(self, db: Session):
        self.db = db

    def create_run(self, run_id: str, command: str, seed: int, out_dir: str,
                   config: Optional[Dict[str, Any]] = None) -> RunResponse:
        """登记新运行"""
        try:
            run = Run(run_id=run_id, command=command, seed=seed, out_dir=out_dir,
                      config=config, status=RunStatus.PENDING.value)
            self.db.add(run)
            self.db.commit()
            self.db.refresh(run)

            logger.info(f"登记运行成功: {run_id} ({command})")
            return RunResponse.model_validate(run)

        except Exception as e:
            self.db.rollback()
            logger.error(f"登记运行失败: {str(e)}")
            raise

    def get_run(self, run_id: str) -> Optional[RunResponse]:
        """获取运行详情"""
        run = self.db.query(Run).filter(Run.run_id == run_id).first()
        return RunResponse.model_validate(run) if run else None

    def get_run_config(self, run_id: str) -> Optional[Dict[str, Any]]:
        run = self.db.query(Run).filter(Run.run_id == run_id).first()
        return run.config if run else None

    def list_runs(self, skip: int = 0, limit: int = 100, status: Optional[RunStatus] = None,
                  command: Optional[str] = None) -> List[RunResponse]:
        """获取运行列表"""
        try:
            query = self.db.query(Run)
            if status:
                query = query.filter(Run.status == RunStatus(status).value)
            if command:
                query = query.filter(Run.command == command)
            runs = query.order_by(desc(Run.created_at), desc(Run.id)).offset(skip).limit(limit).all()
            return [RunResponse.model_validate(r) for r in runs]

        except Exception as e:
            logger.error(f"获取运行列表失败: {str(e)}")
            raise

    def update_status(self, run_id: str, status: RunStatus, error_message: Optional[str] = None,
                      summary: Optional[Dict[str, Any]] = None):
        """更新运行状态"""
        try:
            run = self.db.query(Run).filter(Run.run_id == run_id).first()
            if not run:
                return

            old_status = run.status
            run.status = RunStatus(status).value
            if status == RunStatus.RUNNING and old_status != RunStatus.RUNNING.value:
                run.started_at = datetime.now()
            elif status in (RunStatus.COMPLETED, RunStatus.FAILED):
                run.completed_at = datetime.now()

            if error_message:
                run.error_message = error_message
            if summary is not None:
                run.summary = orjson.loads(orjson.dumps(summary, option=orjson.OPT_SERIALIZE_NUMPY))

            self.db.commit()
            logger.info(f"运行状态更新: {run_id} {old_status} -> {run.status}")

        except Exception as e:
            self.db.rollback()
            logger.error(f"更新运行状态失败 ({run_id}): {str(e)}")

    def log_event(self, run_id: str, message: str, level: str = "INFO", epoch: Optional[int] = None):
        """记录运行事件"""
        try:
            self.db.add(RunEvent(run_id=run_id, level=level, message=message, epoch=epoch))
            self.db.commit()
        except Exception as e:
            self.db.rollback()
            logger.error(f"记录运行事件失败 ({run_id}): {str(e)}")

    def get_events(self, run_id: str) -> List[RunEvent]:
        return self.db.query(RunEvent).filter(RunEvent.run_id == run_id).order_by(RunEvent.id).all()


class RunTracker:
    """单次运行的目录、日志文件与登记状态；registry 为空时只管理目录和日志"""

    def __init__(self, run_id: str, command: str, out_root: str, seed: int = 0,
                 registry: Optional[RunService] = None):
        self.run_id = run_id
        self.command = command
        self.seed = seed
        self.run_dir = Path(out_root) / run_id
        self.registry = registry
        self.summary: Optional[Dict[str, Any]] = None

    def event(self, message: str, level: str = "INFO", epoch: Optional[int] = None):
        logger.log(level, message)
        if self.registry:
            self.registry.log_event(self.run_id, message, level, epoch)

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.run_dir / name
        path.write_bytes(orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2))
        return path


@contextmanager
def tracked_run(command: str, out_root: str, seed: int = 0, run_id: Optional[str] = None,
                registry: Optional[RunService] = None,
                config: Optional[Dict[str, Any]] = None) -> Iterator[RunTracker]:
    """创建 <out>/<run-id>/，挂载 run.log，并在结束时更新登记状态"""
    tracker = RunTracker(run_id or new_run_id(command), command, out_root, seed, registry)
    tracker.run_dir.mkdir(parents=True, exist_ok=True)
    sink_id = add_run_sink(tracker.run_dir)

    if registry:
        if registry.get_run(tracker.run_id) is None:
            registry.create_run(tracker.run_id, command, seed, str(tracker.run_dir), config)
        registry.update_status(tracker.run_id, RunStatus.RUNNING)
    logger.info(f"开始运行 {tracker.run_id} ({command})")

    try:
        yield tracker
    except Exception as e:
        logger.error(f"运行失败 {tracker.run_id}: {str(e)}")
        if registry:
            registry.update_status(tracker.run_id, RunStatus.FAILED, error_message=str(e))
        raise
    else:
        if registry:
            registry.update_status(tracker.run_id, RunStatus.COMPLETED, summary=tracker.summary)
        logger.info(f"运行完成 {tracker.run_id}")
    finally:
        remove_run_sink(sink_id)
