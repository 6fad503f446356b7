"""Worst-case delay and backlog bounds for FIFO feedforward networks with shapers."""

from .analysis import (AnalysisResult, Tandem, TandemFlow, build_nesting_tree, feedforward_analyze,
                       tandem_ludbpp)
from .baselines import BaselineResult, ludb_ff_delay, sfa_fifo_delay, tfa_pp_delay
from .curves import (Mslc, RateLatency, ShapedArrival, Shaper, Stage, TokenBucket, hdev_shaped,
                     leftover_numeric, mslc_convolve, mslc_from_rate_latency, shape_tb,
                     vdev_and_output)
from .network import Flow, Server, Topology, gen_one_hop, gen_sinktree, gen_tree, validate

__version__ = "0.1.0"
