"""Local patch-based facial animation retargeting to stylized characters."""

__version__ = "0.1.0"
