"""Strategies reified into search trees, budget-aware policies, demonstrations.

The package is organized around three layers that stay decoupled:

* writing nondeterministic *strategies* (``strategy``, ``effects``) that
  reify into lazily materialized search trees (``tree``, ``refs``);
* *policies* that navigate those trees through resource-aware streams
  (``streams``, ``policies``) backed by pluggable oracles (``oracle``);
* *demonstrations* — answered queries plus navigation tests — checked by an
  interpreter (``demos``) and mined from recorded runs (``traces``).
"""

__version__ = "0.1.0"
