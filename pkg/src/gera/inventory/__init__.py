"""Inventory snapshots, FIFO aging and anomaly detection."""

from .detectors import (
    DEFAULT_PARAMS,
    MAD_CONSTANT,
    AnomalyBaseline,
    AnomalyFlag,
    DetectionResult,
    DetectorParams,
    detect_all,
    detect_series,
    iqr_flags,
    mad_flags,
    modified_zscore,
    quartiles,
    zscore,
    zscore_flags,
)
from .fifo import AGING_BUCKETS, Lot, LotAllocation, aging_bucket, aging_report, aging_rows, bucket_totals, fifo_age, fifo_allocate
from .queue import FlagStore, QueueItem, investigation_queue
from .snapshot import InventorySnapshot, Movement, movements_from_records, snapshot_series, take_snapshot

__all__ = [
    "AGING_BUCKETS",
    "AnomalyBaseline",
    "AnomalyFlag",
    "DEFAULT_PARAMS",
    "DetectionResult",
    "DetectorParams",
    "FlagStore",
    "InventorySnapshot",
    "Lot",
    "LotAllocation",
    "MAD_CONSTANT",
    "Movement",
    "QueueItem",
    "aging_bucket",
    "aging_report",
    "aging_rows",
    "bucket_totals",
    "detect_all",
    "detect_series",
    "fifo_age",
    "fifo_allocate",
    "investigation_queue",
    "iqr_flags",
    "mad_flags",
    "modified_zscore",
    "movements_from_records",
    "quartiles",
    "snapshot_series",
    "take_snapshot",
    "zscore",
    "zscore_flags",
]
