"""Analysis and simulation of two-station EPRB time-tag data.

Typical flow: :func:`load_dataset` (or :func:`simulate`), then
:func:`match_coincidences` / :func:`window_sweep`, then
:func:`estimates_from_counts`, :func:`chsh` and :func:`hypothesis_test`.
"""

__version__ = "0.1.0"

from .coincidence import (  # noqa: E402
    CountsTable,
    Histogram,
    PairList,
    count_coincidences,
    difference_histogram,
    estimate_global_offset,
    match_coincidences,
    oracle_max_matching,
)
from .dataset import Dataset, StationStream, apply_offset, load_dataset, write_dataset  # noqa: E402
from .efficiency import (  # noqa: E402
    EffParams,
    EffSolution,
    Measured,
    consistency_table,
    forward_counts,
    forward_model,
    solve_triple,
)
from .errors import EprbError  # noqa: E402
from .sim import SimConfig, simulate  # noqa: E402
from .stats import (  # noqa: E402
    chsh,
    combine_rotated_runs,
    estimates_from_counts,
    hypothesis_test,
    window_sweep,
)
