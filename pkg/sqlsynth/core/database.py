import shutil
import time
from pathlib import Path
from typing import Any, List, Tuple, Union

from pydantic import BaseModel
from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.exc import DBAPIError, SQLAlchemyError
from sqlalchemy.pool import NullPool

from sqlsynth.core.config import settings
from sqlsynth.core.exceptions import DatabaseIOError, QueryFailed, QueryTimeout


PathLike = Union[str, Path]

# Virtual-machine instructions between two deadline checks
PROGRESS_STEP = 1000


def create_sqlite_engine(path: PathLike, read_only: bool = False) -> Engine:
    """Create an engine for one embedded database file with foreign keys enforced"""
    path = Path(path).resolve()
    if read_only:
        url = f"sqlite:///file:{path.as_posix()}?mode=ro&uri=true"
    else:
        url = f"sqlite:///{path.as_posix()}"
    engine = create_engine(url, poolclass=NullPool)

    @event.listens_for(engine, "connect")
    def _on_connect(dbapi_connection, connection_record):
        # Let SQLAlchemy own BEGIN so DDL stays inside the transaction
        dbapi_connection.isolation_level = None
        cursor = dbapi_connection.cursor()
        cursor.execute("PRAGMA foreign_keys=ON")
        cursor.close()

    @event.listens_for(engine, "begin")
    def _on_begin(conn):
        conn.exec_driver_sql("BEGIN")

    return engine


class QueryResult(BaseModel):
    columns: List[str] = []
    rows: List[Tuple[Any, ...]] = []


class SqliteExecutor:
    """Runs single statements against one database file under a wall-clock timeout"""

    def __init__(self, path: PathLike, timeout_secs: float = None, read_only: bool = False):
        self.path = Path(path)
        self.timeout_secs = settings.TIMEOUT_SECS if timeout_secs is None else timeout_secs
        self.read_only = read_only
        if not self.path.exists():
            raise DatabaseIOError(f"Database file not found: {self.path}", path=str(self.path))

    def execute(self, sql: str, commit: bool = True) -> QueryResult:
        """Execute one statement; commit or roll back its effects"""
        engine = create_sqlite_engine(self.path, read_only=self.read_only)
        try:
            with engine.connect() as conn:
                raw = conn.connection.dbapi_connection
                deadline = time.monotonic() + self.timeout_secs
                raw.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, PROGRESS_STEP)
                try:
                    result = conn.exec_driver_sql(sql)
                    if result.returns_rows:
                        columns = list(result.keys())
                        rows = [tuple(row) for row in result.fetchall()]
                    else:
                        columns, rows = [], []
                    if commit:
                        conn.commit()
                    else:
                        conn.rollback()
                finally:
                    raw.set_progress_handler(None, 0)
        except DBAPIError as exc:
            message = str(exc.orig) if exc.orig is not None else str(exc)
            if "interrupted" in message.lower():
                raise QueryTimeout(f"Query exceeded {self.timeout_secs}s timeout", sql=sql,
                                   timeout_secs=self.timeout_secs)
            raise QueryFailed(message, sql=sql)
        except SQLAlchemyError as exc:
            raise QueryFailed(str(exc), sql=sql)
        finally:
            engine.dispose()
        return QueryResult(columns=columns, rows=rows)

    def check(self, sql: str) -> None:
        """Execute and roll back, raising on failure"""
        self.execute(sql, commit=False)


def copy_database(source: PathLike, target: PathLike) -> Path:
    """Copy a database file to a private path"""
    try:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, target)
    except OSError as exc:
        raise DatabaseIOError(f"Cannot copy {source} to {target}: {exc}", source=str(source), target=str(target))
    return Path(target)
