"""Batch stages: corpus preparation, diversification, similarity analysis,
signature evasion, and the full experiment that chains them."""
