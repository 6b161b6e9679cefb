"""Toolkit for building driving instruction-tuning data.

Stages: ingest segment annotations, generate grounded chain-of-thought
responses for VQA records, derive the four driving instruction tasks,
retrieve in-context exemplars by embedding similarity, and assemble
interleaved training sequences with loss masks.
"""

__version__ = "0.1.0"
