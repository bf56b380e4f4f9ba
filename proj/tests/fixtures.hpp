#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusionfm/embedstore.hpp"
#include "fusionfm/fusion.hpp"
#include "fusionfm/metrics.hpp"
#include "fusionfm/synth.hpp"
#include "fusionfm/train.hpp"

namespace fusionfm::fixture {

inline AlignedDataset split_and_join(const SynthBenchmark& bench, const std::vector<std::string>& subset,
                                     std::uint64_t split_seed) {
    const auto split = stratified_split(bench.manifest, {}, split_seed);
    return assemble_dataset(split, bench.sets, subset);
}

struct ProbeResult {
    double best_val_auc = 0.0;
    double test_auc = 0.0;
    PredictionTable test;
    FusionModel model;
};

inline ProbeResult fit(const AlignedDataset& data, Strategy strategy, const TrainConfig& train_cfg,
                       std::size_t top_k = 1, std::size_t d_fuse = 16, std::uint64_t init_seed = 1) {
    FusionConfig cfg;
    cfg.strategy = strategy;
    cfg.expert_subset = data.expert_names;
    cfg.d_fuse = d_fuse;
    cfg.top_k = top_k;
    cfg.num_classes = data.num_classes;
    const auto model = init_model(cfg, data.dims, init_seed);
    auto result = train(model, data, train_cfg);
    ProbeResult out;
    out.best_val_auc = result.best.val_auc;
    out.model = std::move(result.best.model);
    out.test = predict(out.model, data, Split::kTest);
    out.test_auc = macro_auc_ovr(out.test);
    return out;
}

}  // namespace fusionfm::fixture
