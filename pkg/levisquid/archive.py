from __future__ import annotations
from .errors import tert, tressa
from .interfaces import CursorProtocol
from hashlib import sha256
from types import TracebackType
from typing import Optional, Type
import json
import packify
import sqlite3


def content_id(data: dict) -> str:
    """Hash of the packed data, used as a content address."""
    return sha256(packify.pack(data)).digest().hex()


class ArchiveContext:
    """Context manager for the sqlite report archive."""
    connection: sqlite3.Connection
    cursor: sqlite3.Cursor
    connection_info: str

    def __init__(self, connection_info: str = '') -> None:
        """Initialize the instance. Raises TypeError for non-str
            connection_info and UsageError for an empty one.
        """
        if not connection_info and hasattr(self, 'connection_info'):
            connection_info = self.connection_info
        tert(type(connection_info) is str, 'connection_info must be str')
        tressa(len(connection_info) > 0, 'cannot use with empty connection_info')
        self.connection = sqlite3.connect(connection_info)
        self.cursor = self.connection.cursor()

    def __enter__(self) -> CursorProtocol:
        """Enter the context block and return the cursor."""
        return self.cursor

    def __exit__(self, __exc_type: Optional[Type[BaseException]],
                __exc_value: Optional[BaseException],
                __traceback: Optional[TracebackType]) -> None:
        """Exit the context block. Commit or rollback as appropriate,
            then close the connection.
        """
        if __exc_type is not None:
            self.connection.rollback()
        else:
            self.connection.commit()

        self.connection.close()


class ReportArchive:
    """Reports stored by content hash. Storing an identical report twice
        keeps one row.
    """
    table: str = 'reports'

    def __init__(self, path: str, context_manager: Type[ArchiveContext] = ArchiveContext) -> None:
        self.path = path
        self.context_manager = context_manager
        with self.context_manager(self.path) as cursor:
            cursor.execute(
                f'create table if not exists {self.table} (id text primary key, '
                'command text, config_hash text, body text)'
            )

    def store(self, report: dict) -> str:
        """Insert the report and return its id."""
        tert(isinstance(report, dict), 'report must be a dict')
        id = content_id(report)
        with self.context_manager(self.path) as cursor:
            cursor.execute(
                f'insert or ignore into {self.table} (id, command, config_hash, body) '
                'values (?, ?, ?, ?)',
                [id, report.get('command', ''),
                 report.get('provenance', {}).get('config_hash', ''),
                 json.dumps(report, sort_keys=True)],
            )
        return id

    def find(self, id: str) -> dict|None:
        with self.context_manager(self.path) as cursor:
            row = cursor.execute(
                f'select body from {self.table} where id = ?', [id]
            ).fetchone()
        return json.loads(row[0]) if row else None

    def ids(self, command: str|None = None) -> list[str]:
        with self.context_manager(self.path) as cursor:
            if command is None:
                rows = cursor.execute(f'select id from {self.table} order by id').fetchall()
            else:
                rows = cursor.execute(
                    f'select id from {self.table} where command = ? order by id', [command]
                ).fetchall()
        return [r[0] for r in rows]
