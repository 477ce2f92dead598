"""Core pipeline components for pathmaps."""
