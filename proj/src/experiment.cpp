#include "fusionfm/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fusionfm/checkpoint.hpp"
#include "fusionfm/metrics.hpp"

namespace fusionfm {
namespace {

// Stream id for the initial model weights, derived from train.seed.
constexpr std::uint64_t kInitStream = 0x1A17;

bool filesystem_safe(const std::string& id) {
    if (id.empty() || id == "." || id == ".." || id.size() > 128) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
               c == '_' || c == '.';
    });
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string read_text(const fs::path& path, ErrorCode missing_code) {
    std::ifstream in(path);
    if (!in) throw Error(missing_code, "cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int exit_code_for(ErrorCode code) { return is_input_error(code) ? kExitInput : kExitRuntime; }

class Lockfile {
public:
    explicit Lockfile(fs::path path) : path_(std::move(path)) {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw Error(ErrorCode::kRuntime, "output directory is locked by another run ('" + path_.string() + "')");
        }
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto written = ::write(fd_, pid.data(), pid.size());
    }
    Lockfile(const Lockfile&) = delete;
    Lockfile& operator=(const Lockfile&) = delete;
    ~Lockfile() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
    int fd_ = -1;
};

// Tracks every file a run writes so a failed run can be quarantined.
class OutputDir {
public:
    explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {}

    fs::path path(const std::string& name) {
        const auto p = dir_ / name;
        if (std::find(written_.begin(), written_.end(), p) == written_.end()) written_.push_back(p);
        return p;
    }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(path(name), std::ios::trunc | std::ios::binary);
        if (!out) throw Error(ErrorCode::kIo, "cannot write '" + (dir_ / name).string() + "'");
        out << content;
        if (!out) throw Error(ErrorCode::kIo, "write to '" + (dir_ / name).string() + "' failed");
    }

    void quarantine() {
        std::error_code ec;
        const auto failed = dir_ / "failed";
        fs::create_directories(failed, ec);
        for (const auto& p : written_) {
            if (fs::exists(p, ec)) fs::rename(p, failed / p.filename(), ec);
        }
    }

private:
    fs::path dir_;
    std::vector<fs::path> written_;
};

std::string format_fixed(double v, bool signed_value = false) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), signed_value ? "%+.6f" : "%.6f", v);
    return buf;
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string ExperimentConfig::config_hash() const { return fnv1a_hex(canonical.dump()); }

ExperimentConfig parse_experiment_config(const nlohmann::json& j, const fs::path& base_dir,
                                         const CliOverrides& overrides) {
    using nlohmann::json;
    if (!j.is_object()) throw Error(ErrorCode::kConfig, "config must be a JSON object");
    ExperimentConfig cfg;
    ordered_json canonical;
    try {
        if (!j.contains("experiment_id") || !j["experiment_id"].is_string()) {
            throw Error(ErrorCode::kConfigId, "missing string field 'experiment_id'");
        }
        cfg.experiment_id = j["experiment_id"].get<std::string>();
        if (!filesystem_safe(cfg.experiment_id)) {
            throw Error(ErrorCode::kConfigId, "experiment_id '" + cfg.experiment_id +
                                                  "' must be non-empty and use only [A-Za-z0-9._-]");
        }
        canonical["experiment_id"] = cfg.experiment_id;

        if (!j.contains("data") || !j["data"].is_object()) throw Error(ErrorCode::kConfig, "missing object 'data'");
        const auto& data = j["data"];
        if (data.contains("synth")) {
            cfg.data.synth = synth_spec_from_json(data["synth"]);
            canonical["data"] = {{"synth", synth_spec_to_json(*cfg.data.synth)}};
        } else {
            if (!data.contains("manifest") || !data.contains("embeddings")) {
                throw Error(ErrorCode::kConfig, "data needs 'synth' or both 'manifest' and 'embeddings'");
            }
            const auto manifest = data.at("manifest").get<std::string>();
            const auto embeddings = data.at("embeddings").get<std::vector<std::string>>();
            cfg.data.manifest = resolve(base_dir, manifest);
            for (const auto& e : embeddings) cfg.data.embeddings.push_back(resolve(base_dir, e));
            canonical["data"] = {{"manifest", manifest}, {"embeddings", embeddings}};
        }

        if (!j.contains("split")) {
            canonical["split"] = {{"ratios", {0.7, 0.1, 0.2}}, {"seed", 0}};
        } else if (j["split"].is_string()) {
            if (j["split"].get<std::string>() != "use-manifest") {
                throw Error(ErrorCode::kConfigSplit, "split must be an object or \"use-manifest\"");
            }
            cfg.split.use_manifest = true;
            canonical["split"] = "use-manifest";
        } else {
            const auto& split = j["split"];
            const auto ratios = split.value("ratios", std::vector<double>{0.7, 0.1, 0.2});
            if (ratios.size() != 3) throw Error(ErrorCode::kConfigSplit, "split.ratios needs three values");
            cfg.split.ratios = {ratios[0], ratios[1], ratios[2]};
            cfg.split.seed = split.value("seed", std::uint64_t{0});
            canonical["split"] = {{"ratios", ratios}, {"seed", cfg.split.seed}};
        }

        if (!j.contains("model")) throw Error(ErrorCode::kConfig, "missing object 'model'");
        cfg.model = fusion_config_from_json(j["model"]);
        auto model_json = fusion_config_to_json(cfg.model);
        model_json.erase("num_classes");
        canonical["model"] = model_json;

        cfg.train = train_config_from_json(j.value("train", json::object()));
        if (overrides.seed) cfg.train.seed = *overrides.seed;
        canonical["train"] = train_config_to_json(cfg.train);

        const auto eval = j.value("eval", json::object());
        cfg.eval.n_boot = eval.value("n_boot", cfg.eval.n_boot);
        cfg.eval.alpha = eval.value("alpha", cfg.eval.alpha);
        cfg.eval.seed = eval.value("seed", cfg.eval.seed);
        canonical["eval"] = {{"n_boot", cfg.eval.n_boot}, {"alpha", cfg.eval.alpha}, {"seed", cfg.eval.seed}};

        if (overrides.out) {
            cfg.output_dir = *overrides.out;
        } else if (const char* env = std::getenv("FUSIONFM_OUT"); env != nullptr && *env != '\0') {
            cfg.output_dir = env;
        } else {
            cfg.output_dir = resolve(base_dir, j.value("output_dir", "out/" + cfg.experiment_id));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kConfig, e.what());
    }
    cfg.canonical = canonical;
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path, const CliOverrides& overrides) {
    const auto text = read_text(path, ErrorCode::kDataMissing);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
    }
    return parse_experiment_config(j, path.parent_path(), overrides);
}

LoadedData load_data(const ExperimentConfig& config) {
    LoadedData data;
    if (config.data.synth) {
        auto bench = gen_synthetic_benchmark(*config.data.synth);
        data.manifest = std::move(bench.manifest);
        data.sets = std::move(bench.sets);
        return data;
    }
    data.manifest = load_manifest(*config.data.manifest);
    for (const auto& path : config.data.embeddings) data.sets.push_back(read_embedding_set(path));
    return data;
}

AlignedDataset prepare_dataset(const ExperimentConfig& config, const LoadedData& data,
                               SampleManifest* split_manifest) {
    SampleManifest manifest;
    if (config.split.use_manifest) {
        if (!data.manifest.fully_assigned()) {
            throw Error(ErrorCode::kSplitMissing, "split is \"use-manifest\" but some entries have no split");
        }
        manifest = data.manifest;
    } else {
        manifest = stratified_split(data.manifest, config.split.ratios, config.split.seed);
    }
    if (split_manifest != nullptr) *split_manifest = manifest;
    return assemble_dataset(manifest, data.sets, config.model.expert_subset);
}

std::string test_split_hash(const AlignedDataset& dataset) {
    std::string blob = dataset.task_name;
    for (const auto i : dataset.indices_of(Split::kTest)) {
        blob += '\n';
        blob += dataset.samples[i].sample_id;
    }
    return fnv1a_hex(blob);
}

std::vector<Finding> validate_experiment(const fs::path& config_path, const CliOverrides& overrides) {
    std::vector<Finding> findings;
    auto record = [&](const Error& e) { findings.push_back({e.code(), e.what()}); };

    ExperimentConfig cfg;
    try {
        cfg = load_experiment_config(config_path, overrides);
    } catch (const Error& e) {
        record(e);
        return findings;
    }
    try {
        auto model = cfg.model;
        model.validate();
    } catch (const Error& e) {
        record(e);
    }
    try {
        cfg.train.validate();
    } catch (const Error& e) {
        record(e);
    }
    if (!cfg.split.use_manifest) {
        try {
            const std::size_t one[] = {1};
            split_counts(one, cfg.split.ratios, 0);
        } catch (const Error& e) {
            record(e);
        }
    }
    if (!(cfg.eval.alpha > 0.0 && cfg.eval.alpha < 1.0) || cfg.eval.n_boot < 10) {
        findings.push_back({ErrorCode::kConfig, "E_CONFIG: eval needs alpha in (0, 1) and n_boot >= 10"});
    }

    LoadedData data;
    bool data_ok = true;
    if (cfg.data.synth) {
        try {
            data = load_data(cfg);
        } catch (const Error& e) {
            record(e);
            data_ok = false;
        }
    } else {
        for (const auto& path : [&] {
                 std::vector<fs::path> all{*cfg.data.manifest};
                 all.insert(all.end(), cfg.data.embeddings.begin(), cfg.data.embeddings.end());
                 return all;
             }()) {
            if (!fs::exists(path)) {
                findings.push_back({ErrorCode::kDataMissing,
                                    std::string(code_name(ErrorCode::kDataMissing)) + ": file '" + path.string() +
                                        "' does not exist"});
                data_ok = false;
            }
        }
        if (data_ok) {
            try {
                data.manifest = load_manifest(*cfg.data.manifest);
            } catch (const Error& e) {
                record(e);
                data_ok = false;
            }
            for (const auto& path : cfg.data.embeddings) {
                try {
                    data.sets.push_back(read_embedding_set(path));
                } catch (const Error& e) {
                    record(e);
                    data_ok = false;
                }
            }
        }
    }
    if (data_ok) {
        try {
            const auto dataset = prepare_dataset(cfg, data);
            for (const auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
                if (dataset.indices_of(split).empty()) {
                    findings.push_back({ErrorCode::kSplitMissing,
                                        std::string(code_name(ErrorCode::kSplitMissing)) + ": split '" +
                                            std::string(split_name(split)) + "' is empty after the join"});
                }
            }
        } catch (const Error& e) {
            record(e);
        }
    }
    return findings;
}

int cmd_validate(const fs::path& config_path, std::ostream& out, const CliOverrides& overrides) {
    const auto findings = validate_experiment(config_path, overrides);
    for (const auto& f : findings) out << f.message << '\n';
    if (findings.empty()) {
        out << "OK: " << config_path.string() << " is valid\n";
        return kExitOk;
    }
    out << "INVALID: " << findings.size() << " finding(s)\n";
    return kExitInput;
}

int cmd_run(const fs::path& config_path, std::ostream& out, std::ostream& err, const CliOverrides& overrides) {
    ExperimentConfig cfg;
    try {
        cfg = load_experiment_config(config_path, overrides);
        auto model = cfg.model;
        model.validate();
        cfg.train.validate();
    } catch (const Error& e) {
        err << e.what() << '\n';
        return exit_code_for(e.code());
    }

    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) {
        err << code_name(ErrorCode::kIo) << ": cannot create '" << cfg.output_dir.string() << "'\n";
        return kExitRuntime;
    }
    std::optional<Lockfile> lock;
    try {
        lock.emplace(cfg.output_dir / ".lock");
    } catch (const Error& e) {
        err << e.what() << '\n';
        return kExitRuntime;
    }

    const auto started_at = iso8601_now();
    const auto started = std::chrono::steady_clock::now();
    const auto hash = cfg.config_hash();
    OutputDir output(cfg.output_dir);
    try {
        const auto data = load_data(cfg);
        SampleManifest split_manifest;
        const auto dataset = prepare_dataset(cfg, data, &split_manifest);
        if (!dataset.dropped_ids.empty()) {
            err << "warning: " << dataset.dropped_ids.size() << " manifest sample(s) missing from an expert were dropped\n";
        }
        const ordered_json tags{{"experiment_id", cfg.experiment_id},
                                {"config_hash", hash},
                                {"train_seed", cfg.train.seed},
                                {"split_seed", cfg.split.seed},
                                {"eval_seed", cfg.eval.seed}};
        if (!cfg.split.use_manifest) write_manifest(output.path(kSplitManifestFile), split_manifest, tags);

        auto model_cfg = cfg.model;
        model_cfg.num_classes = dataset.num_classes;
        const auto model = init_model(model_cfg, dataset.dims, derive_seed(cfg.train.seed, kInitStream));

        std::ofstream log(output.path(kTrainLogFile), std::ios::trunc);
        if (!log) throw Error(ErrorCode::kIo, "cannot write the training log");
        const auto result = train(model, dataset, cfg.train, macro_auc_ovr, [&](const EpochRecord& record) {
            auto line = tags;
            const auto fields = ordered_json::parse(epoch_record_json(record));
            for (const auto& [key, value] : fields.items()) line[key] = value;
            log << line.dump() << '\n';
            log.flush();
        });

        const CheckpointMeta meta{cfg.experiment_id, hash};
        output.write(kCheckpointFile, checkpoint_to_json(result.best, meta));

        const auto table = predict(result.best.model, dataset, Split::kTest);
        auto report = evaluate_report(table, cfg.eval.n_boot, cfg.eval.alpha, cfg.eval.seed);
        report.experiment_id = cfg.experiment_id;
        report.strategy = std::string(strategy_name(cfg.model.strategy));
        report.expert_subset = cfg.model.expert_subset;
        report.task = dataset.task_name;
        report.config_hash = hash;
        report.test_split_hash = test_split_hash(dataset);
        report.train_seed = cfg.train.seed;
        report.split_seed = cfg.split.seed;
        output.write(kReportFile, report_to_json(report));
        output.write(kReportCsvFile, report_to_csv(report));

        const ordered_json run_meta{
            {"experiment_id", cfg.experiment_id},
            {"config_hash", hash},
            {"status", "ok"},
            {"started_at", started_at},
            {"finished_at", iso8601_now()},
            {"wall_ms", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count()},
            {"best_epoch", result.best.epoch},
            {"dropped_ids", dataset.dropped_ids},
        };
        output.write(kRunMetaFile, run_meta.dump(2) + "\n");

        out << cfg.experiment_id << ": best epoch " << result.best.epoch << ", val auc "
            << format_fixed(result.best.val_auc) << ", test auc " << format_fixed(report.auc.point) << " ["
            << format_fixed(report.auc.low) << ", " << format_fixed(report.auc.high) << "]\n";
        return kExitOk;
    } catch (const std::exception& e) {
        const auto code = [&] {
            if (const auto* fe = dynamic_cast<const Error*>(&e)) return fe->code();
            return ErrorCode::kRuntime;
        }();
        err << e.what() << '\n';
        try {
            const ordered_json run_meta{{"experiment_id", cfg.experiment_id},
                                        {"config_hash", hash},
                                        {"status", "failed"},
                                        {"error_code", code_name(code)},
                                        {"error", e.what()},
                                        {"started_at", started_at},
                                        {"finished_at", iso8601_now()}};
            output.write(kRunMetaFile, run_meta.dump(2) + "\n");
        } catch (const Error&) {
        }
        output.quarantine();
        return exit_code_for(code);
    }
}

int cmd_compare(const std::vector<fs::path>& reports, std::ostream& out, std::ostream& err,
                const std::optional<fs::path>& csv_path) {
    std::vector<MetricReport> loaded;
    try {
        if (reports.empty()) throw Error(ErrorCode::kConfig, "compare needs at least one report");
        for (const auto& path : reports) {
            loaded.push_back(report_from_json(read_text(path, ErrorCode::kDataMissing)));
        }
        for (const auto& r : loaded) {
            if (r.task != loaded.front().task) {
                throw Error(ErrorCode::kCompareMixed, "reports cover different tasks ('" + loaded.front().task +
                                                          "' vs '" + r.task + "')");
            }
            if (r.test_split_hash != loaded.front().test_split_hash) {
                throw Error(ErrorCode::kCompareMixed, "reports '" + loaded.front().experiment_id + "' and '" +
                                                          r.experiment_id + "' use different test splits");
            }
        }
    } catch (const Error& e) {
        err << e.what() << '\n';
        return exit_code_for(e.code());
    }

    std::ostringstream csv;
    csv << "kind,experiment_id,other_id,metric,point,low,high,delta,best\n";
    for (const auto metric : {Metric::kAuc, Metric::kF1, Metric::kAcc}) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < loaded.size(); ++i) {
            if (loaded[i].get(metric).point > loaded[best].get(metric).point) best = i;
        }
        for (std::size_t i = 0; i < loaded.size(); ++i) {
            const auto& s = loaded[i].get(metric);
            csv << "estimate," << loaded[i].experiment_id << ",," << metric_name(metric) << ','
                << format_fixed(s.point) << ',' << format_fixed(s.low) << ',' << format_fixed(s.high) << ",,"
                << (i == best ? 1 : 0) << '\n';
        }
        for (std::size_t i = 0; i < loaded.size(); ++i) {
            for (std::size_t k = i + 1; k < loaded.size(); ++k) {
                const double delta = loaded[k].get(metric).point - loaded[i].get(metric).point;
                csv << "delta," << loaded[i].experiment_id << ',' << loaded[k].experiment_id << ','
                    << metric_name(metric) << ",,,," << format_fixed(delta, true) << ",\n";
            }
        }
    }
    if (csv_path) {
        std::ofstream file(*csv_path, std::ios::trunc);
        if (!file || !(file << csv.str())) {
            err << code_name(ErrorCode::kIo) << ": cannot write '" << csv_path->string() << "'\n";
            return kExitRuntime;
        }
    } else {
        out << csv.str();
    }
    return kExitOk;
}

int cmd_synth(const fs::path& config_path, std::ostream& out, std::ostream& err, const CliOverrides& overrides) {
    try {
        const auto cfg = load_experiment_config(config_path, overrides);
        if (!cfg.data.synth) throw Error(ErrorCode::kConfig, "config has no data.synth section");
        const auto bench = gen_synthetic_benchmark(*cfg.data.synth);
        fs::create_directories(cfg.output_dir);
        const auto manifest_path = cfg.output_dir / "manifest.jsonl";
        write_manifest(manifest_path, bench.manifest);
        out << manifest_path.string() << '\n';
        for (const auto& set : bench.sets) {
            const auto path = cfg.output_dir / (set.expert_name + ".emb");
            write_embedding_set(path, set);
            out << path.string() << '\n';
        }
        return kExitOk;
    } catch (const Error& e) {
        err << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace fusionfm
