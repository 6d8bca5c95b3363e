"""sqldistill: synthesize, filter and package NL2SQL fine-tuning datasets.

Teacher LLMs generate NL questions and SQL translations per database
schema; a four-stage filter (pattern, execution, quality jury, relevance
jury) keeps only clean, on-use-case pairs; the survivors are blended
with a bootstrap set into a training-ready JSONL file. Everything runs
offline against deterministic mock backends.
"""

__version__ = "0.1.0"
