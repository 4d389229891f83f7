"""Information market over a twin resource pool for vehicular sensing, communication and computing."""
from .baselines import brute_force_optimal, exhaustive_optimal, greedy_allocator, random_allocator
from .config import BuyerTerms, MarketConfig, ProcessParams
from .graph_model import (DISTRIBUTOR, PURCHASER, EmploymentGraph, build_employment_graph,
                          build_flow_graph, fold_rsus)
from .market import (enumerate_templates, execute_round, form_contracts, place_order,
                     publish_demand, run_round, settle)
from .neural import GnnArch, PolicyParams, gnn_backward, gnn_forward, init_params
from .resource_pool import BlockRequest, TwinResourcePool, new_pool
from .scenario import Scenario, generate_scenario, load_fixture, load_scenario
from .trainer import TrainConfig, evaluate, run_episode, train

__version__ = "0.1.0"

__all__ = [
    "BlockRequest", "BuyerTerms", "DISTRIBUTOR", "EmploymentGraph", "GnnArch", "MarketConfig",
    "PURCHASER", "PolicyParams", "ProcessParams", "Scenario", "TrainConfig", "TwinResourcePool",
    "brute_force_optimal", "build_employment_graph", "build_flow_graph", "enumerate_templates",
    "evaluate", "exhaustive_optimal", "execute_round", "fold_rsus", "form_contracts",
    "generate_scenario", "gnn_backward", "gnn_forward", "greedy_allocator", "init_params",
    "load_fixture", "load_scenario", "new_pool", "place_order", "publish_demand",
    "random_allocator", "run_episode", "run_round", "settle", "train",
]
