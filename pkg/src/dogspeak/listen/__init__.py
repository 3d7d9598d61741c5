"""Listening-test data collection: record storage and the HTTP service."""

from .storage import RecordLog
from .service import Experiment, build_app, load_experiment

__all__ = ["RecordLog", "Experiment", "build_app", "load_experiment"]
