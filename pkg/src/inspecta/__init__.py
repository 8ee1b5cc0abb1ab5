"""Tool-augmented industrial anomaly inspection toolkit.

Subpackages and modules:

- ``trajectory``: tagged diagnostic trajectory grammar (parse, validate, render)
- ``imaging``: classical vision tools (crop, Otsu, CLAHE, Canny, measurement)
  with a compiled kernel core and a pure-Python fallback
- ``priors``: textual normalcy-prior store
- ``rewards``: accuracy-gated reward and group-relative policy math
- ``policy_gateway``: OpenAI-compatible chat policy client plus scripted mock
- ``orchestrator``: two-round tool-augmented inference loop
- ``evaluation``: metrics, dataset loading, category-disjoint filtering
- ``corpus``: reasoning-trajectory corpus construction and SFT export
- ``cli``: the ``inspecta`` command line
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
