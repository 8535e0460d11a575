"""Neuron-level redundancy and concept analysis for transformer activations."""

from ._core import (
    AnalysisConfig,
    DataError,
    Dataset,
    InvalidArgument,
    Probe,
    ProbeConfig,
    Ranking,
    __version__,
    apply_control,
    cc_reduce,
    cka,
    cluster_neurons,
    correlation_matrix,
    evaluate,
    filter_classes,
    format_percent,
    highlight_html,
    k_sweep,
    layer_cka_map,
    layerwise,
    lca_rank,
    load_dataset,
    load_probe,
    make_control_task,
    minimal_neuron_set,
    predict,
    probeless_rank,
    results_table,
    save_dataset,
    save_probe,
    select_layers,
    select_neurons,
    selectivity,
    split,
    synth,
    table4,
    top_k,
    top_words,
    train_probe,
)
