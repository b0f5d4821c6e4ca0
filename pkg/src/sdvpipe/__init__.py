"""Deterministic backbone for regulation-driven vehicle software pipelines.

Modules: regdoc (clause trees), chunking (token-budgeted chunk expansion),
retrieval (BM25 + rerank), metamodel / instance (schema and conformance),
ocl (constraint evaluation), scenario (test scenarios), vehiclecode (signal
mapping, code emission, event bridge), consensus (generator backends with
majority selection) and pipeline (stage orchestration).
"""

__version__ = "0.1.0"
