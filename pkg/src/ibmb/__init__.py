"""Influence-based mini-batching for graph neural networks.

Builds training/inference batches for GNNs by partitioning output nodes,
selecting auxiliary context via approximate personalized PageRank, and
materializing induced subgraphs; ships a batch scheduler, a reference GCN
with manual gradients, exact oracles, and a CLI driving the full pipeline.
"""

from .batchgen import (
    Batch,
    build_batches,
    induce_subgraph,
    read_batch,
    select_aux_batchwise,
    select_aux_nodewise,
    write_batch,
)
from .graph import (
    CsrGraph,
    FeatureMatrix,
    NodeLabels,
    generate_sbm,
    load_edge_list,
    normalization_weights,
    preprocess,
    read_features,
    read_graph,
    read_labels,
    with_normalization,
    write_features,
    write_graph,
    write_labels,
)
from .gnnref import (
    AdamState,
    GcnModel,
    adam_step,
    evaluate,
    full_inference_chunked,
    gcn_backward,
    gcn_forward,
    influence_fd,
    influence_linear_analytic,
    init_adam,
    init_gcn,
    read_logits,
    read_model,
    train,
    write_logits,
    write_model,
)
from .partition import (
    Partition,
    distance_partition,
    edge_cut,
    multilevel_partition,
    read_partition,
    restrict_to_outputs,
    write_partition,
)
from .ppr import (
    PprConfig,
    ScoreVec,
    exact_ppr,
    heat_kernel_power,
    push_ppr,
    push_ppr_counted,
    read_scores,
    sample_degree,
    topic_ppr_power,
    topk,
    write_scores,
)
from .schedule import (
    Schedule,
    cycle_objective,
    label_distribution,
    max_tsp_anneal,
    pairwise_distances,
    read_schedule,
    weighted_epoch_order,
    write_schedule,
)

__version__ = "0.1.0"
