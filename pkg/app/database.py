"""Campaign registry using pure SQLite3."""
import json
import sqlite3
from contextlib import contextmanager
from typing import Any, Dict, List, Optional

from app.settings import get_settings


def get_db_connection():
    """Open the campaign registry at the configured database path."""
    conn = sqlite3.connect(get_settings().database_path)
    conn.row_factory = sqlite3.Row  # campaign rows by column name
    return conn


@contextmanager
def get_db():
    """Registry connection committed on success and rolled back on error."""
    conn = get_db_connection()
    try:
        yield conn
        conn.commit()
    except Exception as e:
        conn.rollback()
        raise e
    finally:
        conn.close()


def init_db():
    """Create the campaigns table if it does not exist."""
    with get_db() as conn:
        conn.execute('''
            CREATE TABLE IF NOT EXISTS campaigns (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                label TEXT,
                runs INTEGER NOT NULL,
                config TEXT NOT NULL,
                summary TEXT NOT NULL,
                output_dir TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')


def _campaign_from_row(row: sqlite3.Row) -> Dict[str, Any]:
    return {
        "id": row["id"],
        "label": row["label"],
        "runs": row["runs"],
        "config": json.loads(row["config"]),
        "summary": json.loads(row["summary"]),
        "output_dir": row["output_dir"],
        "created_at": row["created_at"],
    }


def save_campaign(label: Optional[str], runs: int, config: Dict[str, Any], summary: Dict[str, Any],
                  output_dir: Optional[str]) -> int:
    """Store a finished campaign and return its id."""
    with get_db() as conn:
        cursor = conn.execute(
            "INSERT INTO campaigns (label, runs, config, summary, output_dir) VALUES (?, ?, ?, ?, ?)",
            (label, runs, json.dumps(config), json.dumps(summary), output_dir),
        )
        return cursor.lastrowid


def get_campaign(campaign_id: int) -> Optional[Dict[str, Any]]:
    with get_db() as conn:
        row = conn.execute("SELECT * FROM campaigns WHERE id = ?", (campaign_id,)).fetchone()
    return _campaign_from_row(row) if row else None


def list_campaigns() -> List[Dict[str, Any]]:
    with get_db() as conn:
        rows = conn.execute("SELECT * FROM campaigns ORDER BY id").fetchall()
    return [_campaign_from_row(row) for row in rows]


def set_campaign_output(campaign_id: int, output_dir: str) -> None:
    with get_db() as conn:
        conn.execute("UPDATE campaigns SET output_dir = ? WHERE id = ?", (output_dir, campaign_id))
