#include "fusionfm/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fusionfm/error.hpp"

namespace fusionfm {

std::string exact_decimal(double value) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw Error(ErrorCode::kRuntime, "cannot format a real number");
    return std::string(buf, end);
}

double parse_exact_decimal(std::string_view text) {
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw Error(ErrorCode::kDataFormat, "invalid decimal '" + std::string(text) + "'");
    }
    return value;
}

ordered_json fusion_config_to_json(const FusionConfig& c) {
    return ordered_json{{"strategy", strategy_name(c.strategy)},
                        {"experts", c.expert_subset},
                        {"d_fuse", c.d_fuse},
                        {"top_k", c.top_k},
                        {"gate_hidden", c.gate_hidden},
                        {"num_classes", c.num_classes},
                        {"load_balance_coef", c.load_balance_coef}};
}

FusionConfig fusion_config_from_json(const nlohmann::json& j) {
    FusionConfig c;
    try {
        const auto name = j.at("strategy").get<std::string>();
        const auto strategy = parse_strategy(name);
        if (!strategy) throw Error(ErrorCode::kConfig, "unknown strategy '" + name + "'");
        c.strategy = *strategy;
        c.expert_subset = j.at("experts").get<std::vector<std::string>>();
        c.d_fuse = j.value("d_fuse", c.d_fuse);
        c.top_k = j.value("top_k", c.top_k);
        c.gate_hidden = j.value("gate_hidden", c.gate_hidden);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.load_balance_coef = j.value("load_balance_coef", c.load_balance_coef);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kConfig, std::string("model section: ") + e.what());
    }
    return c;
}

ordered_json train_config_to_json(const TrainConfig& c) {
    return ordered_json{{"base_lr", c.base_lr},
                        {"llrd_decay", c.llrd_decay},
                        {"epsilon_smooth", c.epsilon_smooth},
                        {"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_eps", c.adam_eps},
                        {"weight_decay", c.weight_decay},
                        {"class_balanced", c.class_balanced},
                        {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.base_lr = j.value("base_lr", c.base_lr);
        c.llrd_decay = j.value("llrd_decay", c.llrd_decay);
        c.epsilon_smooth = j.value("epsilon_smooth", c.epsilon_smooth);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.class_balanced = j.value("class_balanced", c.class_balanced);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kConfigTrain, std::string("train section: ") + e.what());
    }
    return c;
}

std::string checkpoint_to_json(const Checkpoint& checkpoint, const CheckpointMeta& meta) {
    ordered_json params = ordered_json::array();
    for (const auto& p : checkpoint.model.params) {
        ordered_json values = ordered_json::array();
        for (const double v : p.values) values.push_back(exact_decimal(v));
        params.push_back({{"name", p.name}, {"shape", p.shape}, {"depth_group", p.depth_group}, {"values", values}});
    }
    const ordered_json j{{"format", "fusionfm-checkpoint/1"},
                         {"experiment_id", meta.experiment_id},
                         {"config_hash", meta.config_hash},
                         {"seed", checkpoint.train_config.seed},
                         {"epoch", checkpoint.epoch},
                         {"best_val_auc", exact_decimal(checkpoint.val_auc)},
                         {"model", fusion_config_to_json(checkpoint.model.config)},
                         {"expert_dims", checkpoint.model.expert_dims},
                         {"train", train_config_to_json(checkpoint.train_config)},
                         {"params", params}};
    return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text, CheckpointMeta* meta) {
    Checkpoint cp;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != "fusionfm-checkpoint/1") {
            throw Error(ErrorCode::kDataFormat, "unsupported checkpoint format");
        }
        if (meta != nullptr) {
            meta->experiment_id = j.value("experiment_id", "");
            meta->config_hash = j.value("config_hash", "");
        }
        cp.epoch = j.at("epoch").get<int>();
        cp.val_auc = parse_exact_decimal(j.at("best_val_auc").get<std::string>());
        cp.model.config = fusion_config_from_json(j.at("model"));
        cp.model.expert_dims = j.at("expert_dims").get<std::vector<std::size_t>>();
        cp.train_config = train_config_from_json(j.at("train"));
        for (const auto& node : j.at("params")) {
            ParamTensor p;
            p.name = node.at("name").get<std::string>();
            p.shape = node.at("shape").get<std::vector<std::size_t>>();
            p.depth_group = node.at("depth_group").get<int>();
            for (const auto& v : node.at("values")) p.values.push_back(parse_exact_decimal(v.get<std::string>()));
            cp.model.params.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kDataFormat, std::string("malformed checkpoint: ") + e.what());
    }
    cp.model.validate();
    return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint,
                     const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
    out << checkpoint_to_json(checkpoint, meta);
    if (!out) throw Error(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kDataMissing, "cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return checkpoint_from_json(buffer.str(), meta);
}

}  // namespace fusionfm
