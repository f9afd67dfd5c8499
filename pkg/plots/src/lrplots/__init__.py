"""Chart generation for benchmark CSVs produced by the inference engine.

Input is consumed only through the documented CSV schema
(``family,L,N,backend,secs_per_batch,ll_per_token,flagged``); every figure
is accompanied by a JSON sidecar holding the exact plotted values so chart
correctness is testable without image diffing.
"""

from .frontier import FrontierRow, plot_frontier, plot_ranks, read_records

__version__ = "0.1.0"
