"""Adaptive sum-of-powered-score (aSPUS) rare-variant tests for censored survival outcomes."""
from .coxnull import NullModel, fit_null, partial_loglik
from .score_engine import (WeightTable, build_weight_table, score_observed, score_permuted)
from .simgen import Scenario, build_scenario
from .spu import (GammaGrid, PermPlan, SpuResult, aspus_pvalue, empirical_pvalues,
                  run_adaptive_test, scan, spu_gene_stat, spu_pathway_stat)
from .survdata import (GeneMap, PathwayMap, SurvivalDataset, load_dataset, load_genemap,
                       load_pathwaymap)

__version__ = "0.1.0"
