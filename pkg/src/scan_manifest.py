"""SQLite manifest of scan runs, used for resume and for the results table."""
import json
import sqlite3
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

STATUS_PENDING = "pending"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"

MANIFEST_NAME = "scan_manifest.db"


def canonical_key(params: Dict[str, Any]) -> str:
    """Order-independent key of a parameter tuple."""
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


class ScanManifest:
    """One row per parameter tuple; upserts are issued by the scan orchestrator only."""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.conn = sqlite3.connect(str(self.db_path))
        self.conn.row_factory = sqlite3.Row
        self._create_schema()

    def _create_schema(self):
        cursor = self.conn.cursor()
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_key TEXT PRIMARY KEY,
                run_id TEXT NOT NULL,
                params TEXT NOT NULL,
                status TEXT NOT NULL,
                metrics TEXT,
                error TEXT,
                wall_time REAL,
                updated_at TEXT NOT NULL
            )
        """)
        cursor.execute("""
            CREATE INDEX IF NOT EXISTS idx_status ON runs(status)
        """)
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS scan (
                key TEXT PRIMARY KEY,
                value TEXT NOT NULL
            )
        """)
        self.conn.commit()

    def set_spec(self, spec_json: str):
        self.conn.execute("INSERT OR REPLACE INTO scan (key, value) VALUES ('spec', ?)", (spec_json,))
        self.conn.commit()

    def get_spec(self) -> Optional[str]:
        row = self.conn.execute("SELECT value FROM scan WHERE key = 'spec'").fetchone()
        return row["value"] if row else None

    def record(self, params: Dict[str, Any], run_id: str, status: str,
               metrics: Optional[Dict[str, Any]] = None, error: Optional[str] = None,
               wall_time: Optional[float] = None):
        """Insert or update the row of one parameter tuple."""
        self.conn.execute("""
            INSERT INTO runs (run_key, run_id, params, status, metrics, error, wall_time, updated_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            ON CONFLICT(run_key) DO UPDATE SET
                run_id = excluded.run_id,
                status = excluded.status,
                metrics = excluded.metrics,
                error = excluded.error,
                wall_time = excluded.wall_time,
                updated_at = excluded.updated_at
        """, (
            canonical_key(params),
            run_id,
            json.dumps(params, sort_keys=True),
            status,
            json.dumps(metrics) if metrics is not None else None,
            error,
            wall_time,
            datetime.now(timezone.utc).isoformat(),
        ))
        self.conn.commit()

    def status_of(self, params: Dict[str, Any]) -> Optional[str]:
        row = self.conn.execute("SELECT status FROM runs WHERE run_key = ?",
                                (canonical_key(params),)).fetchone()
        return row["status"] if row else None

    def is_complete(self, params: Dict[str, Any]) -> bool:
        return self.status_of(params) == STATUS_COMPLETE

    def rows(self, status: Optional[str] = None) -> List[Dict[str, Any]]:
        query = "SELECT * FROM runs"
        args = ()
        if status:
            query += " WHERE status = ?"
            args = (status,)
        result = []
        for row in self.conn.execute(query + " ORDER BY run_id", args).fetchall():
            result.append({
                "run_key": row["run_key"],
                "run_id": row["run_id"],
                "params": json.loads(row["params"]),
                "status": row["status"],
                "metrics": json.loads(row["metrics"]) if row["metrics"] else {},
                "error": row["error"],
                "wall_time": row["wall_time"],
            })
        return result

    def counts(self) -> Dict[str, int]:
        rows = self.conn.execute("SELECT status, COUNT(*) AS n FROM runs GROUP BY status").fetchall()
        return {row["status"]: row["n"] for row in rows}

    def close(self):
        self.conn.close()
