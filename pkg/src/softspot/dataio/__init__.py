"""Dataset ingestion, feature caches, synthetic data and result export."""

from .cache import (CACHE_MAGIC, CACHE_VERSION, HEADER_SIZE, CacheFormatError, read_cache_header,
                    read_feature_array, read_feature_cache, write_feature_cache)
from .dataset import (AnnotationRecord, Dataset, DatasetError, VideoRecord, load_dataset, load_frames,
                      read_frame, read_landmarks, write_annotations, write_landmarks, write_videos)
from .export import export_report, export_timeline, load_report, read_timeline, report_json, timeline_svg
from .synthetic import (SyntheticConfig, SyntheticEvent, base_texture, canonical_landmarks,
                        generate_synthetic, place_events, render_video)

__all__ = [
    "AnnotationRecord", "CACHE_MAGIC", "CACHE_VERSION", "CacheFormatError", "Dataset", "DatasetError",
    "HEADER_SIZE", "SyntheticConfig", "SyntheticEvent", "VideoRecord", "base_texture",
    "canonical_landmarks", "export_report", "export_timeline", "generate_synthetic", "load_dataset",
    "load_frames", "load_report", "place_events", "read_cache_header", "read_feature_array",
    "read_feature_cache", "read_frame", "read_landmarks", "read_timeline", "render_video",
    "report_json", "timeline_svg", "write_annotations", "write_feature_cache", "write_landmarks",
    "write_videos",
]
