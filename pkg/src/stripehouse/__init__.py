"""stripehouse: desk-scale partitioned analytics engine.

Row-text and columnar stripe storage, a SQL-subset query engine with
parallel staged execution, per-table access control with an audit trail,
and a benchmark harness.
"""

__version__ = "0.1.0"
