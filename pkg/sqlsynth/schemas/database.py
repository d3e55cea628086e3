import hashlib
import json
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator


SQL_TYPES = ("INTEGER", "REAL", "TEXT", "NUMERIC", "BLOB", "DATE", "DATETIME", "BOOLEAN")


class SourceTable(BaseModel):
    """One flat table in the WikiSQL release layout"""

    id: str
    header: List[str]
    types: List[str] = []
    rows: List[List[Any]] = []
    page_title: Optional[str] = None
    section_title: Optional[str] = None
    caption: Optional[str] = None

    @property
    def title(self) -> str:
        return self.caption or self.section_title or self.page_title or self.id


class ColumnSchema(BaseModel):
    name: str
    description: str = ""
    data_type: str = "TEXT"
    nullable: bool = True

    @field_validator("data_type")
    @classmethod
    def _upper(cls, value: str) -> str:
        return value.strip().upper()


class ForeignKey(BaseModel):
    columns: List[str]
    ref_table: str
    ref_columns: List[str]


class TableSchema(BaseModel):
    name: str
    description: str = ""
    columns: List[ColumnSchema]
    primary_key: List[str] = []
    foreign_keys: List[ForeignKey] = []
    sample_rows: List[Dict[str, Any]] = []

    def column(self, name: str) -> Optional[ColumnSchema]:
        for column in self.columns:
            if column.name == name:
                return column
        return None

    @property
    def column_names(self) -> List[str]:
        return [column.name for column in self.columns]

    def column_values(self, name: str) -> List[Any]:
        """Sample values of one column, aligned with sample_rows"""
        return [row.get(name) for row in self.sample_rows]


class DatabaseSchema(BaseModel):
    id: str = ""
    scenario: str = ""
    tables: List[TableSchema] = Field(default_factory=list)

    def table(self, name: str) -> Optional[TableSchema]:
        for table in self.tables:
            if table.name == name:
                return table
        return None

    @property
    def table_names(self) -> List[str]:
        return [table.name for table in self.tables]

    def fk_edges(self) -> List[tuple]:
        """(child, parent) pairs, one per foreign key"""
        return [(table.name, fk.ref_table) for table in self.tables for fk in table.foreign_keys]

    def content_hash(self) -> str:
        """Stable hash of the canonicalized schema, id excluded"""
        canonical = self.model_dump(mode="json", exclude={"id"})
        canonical["tables"] = sorted(canonical["tables"], key=lambda table: table["name"])
        payload = json.dumps(canonical, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_content_id(self) -> "DatabaseSchema":
        return self.model_copy(update={"id": f"db_{self.content_hash()[:12]}"})

    def structure(self) -> Dict[str, Any]:
        """Names, declared types and keys in canonical order, for read-back comparison"""
        return {
            table.name: {
                "columns": [(column.name, column.data_type) for column in table.columns],
                "primary_key": sorted(table.primary_key),
                "foreign_keys": sorted((tuple(fk.columns), fk.ref_table, tuple(fk.ref_columns))
                                       for fk in table.foreign_keys),
            }
            for table in sorted(self.tables, key=lambda table: table.name)
        }

    def to_prompt(self) -> str:
        """Serialized schema as it is shown to the model"""
        return self.model_dump_json(indent=2)
