#include "fusionfm/embedstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fusionfm/error.hpp"

namespace fusionfm {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::kDataInvariant, "string too long for the embedding format");
    }
    put_le(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string(const char* what) {
        const auto len = get_le<std::uint32_t>(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw Error(ErrorCode::kDataTruncated,
                        std::string("file ends inside ") + what + " (need " + std::to_string(n) +
                            " bytes, have " + std::to_string(remaining()) + ")");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void check_unique(const std::vector<std::string>& ids, ErrorCode code, const std::string& where) {
    std::unordered_set<std::string> seen;
    seen.reserve(ids.size());
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw Error(code, where + ": duplicate sample_id '" + id + "'");
        }
    }
}

}  // namespace

void EmbeddingSet::validate() const {
    if (dim < 1) {
        throw Error(ErrorCode::kDataInvariant, "embedding set '" + expert_name + "' has dim 0");
    }
    if (vectors.size() != sample_ids.size() * static_cast<std::size_t>(dim)) {
        throw Error(ErrorCode::kDataInvariant,
                    "embedding set '" + expert_name + "' row count does not match sample_ids");
    }
    check_unique(sample_ids, ErrorCode::kDataInvariant, "embedding set '" + expert_name + "'");
    if (!all_finite(std::span<const float>(vectors))) {
        throw Error(ErrorCode::kDataInvariant,
                    "embedding set '" + expert_name + "' contains a non-finite value");
    }
}

std::vector<std::uint8_t> encode_embedding_set(const EmbeddingSet& set) {
    set.validate();
    std::vector<std::uint8_t> out(kEmbeddingMagic.begin(), kEmbeddingMagic.end());
    out.reserve(32 + set.sample_ids.size() * 16 + set.vectors.size() * 4);
    put_le(out, kEmbeddingVersion);
    put_string(out, set.expert_name);
    put_le(out, set.dim);
    put_le(out, static_cast<std::uint64_t>(set.sample_ids.size()));
    for (const auto& id : set.sample_ids) put_string(out, id);
    for (const float v : set.vectors) put_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

EmbeddingSet decode_embedding_set(std::span<const std::uint8_t> bytes) {
    ByteReader reader(bytes);
    const auto magic = reader.take(kEmbeddingMagic.size(), "magic");
    if (!std::equal(magic.begin(), magic.end(), kEmbeddingMagic.begin())) {
        std::string shown;
        for (const auto b : magic) {
            shown += (b >= 0x20 && b < 0x7f) ? static_cast<char>(b) : '?';
        }
        throw Error(ErrorCode::kDataFormat, "bad magic '" + shown + "', expected 'FUSEMB01'");
    }
    const auto version = reader.get_le<std::uint32_t>("version");
    if (version != kEmbeddingVersion) {
        throw Error(ErrorCode::kDataFormat, "unsupported version " + std::to_string(version));
    }
    EmbeddingSet set;
    set.expert_name = reader.get_string("expert name");
    set.dim = reader.get_le<std::uint32_t>("dim");
    if (set.dim == 0) {
        throw Error(ErrorCode::kDataFormat, "dim must be positive");
    }
    const auto count = reader.get_le<std::uint64_t>("count");
    // Each id record takes at least 4 bytes; reject absurd counts before reserving.
    if (count > reader.remaining() / 4) {
        throw Error(ErrorCode::kDataTruncated,
                    "declared count " + std::to_string(count) + " exceeds file size");
    }
    set.sample_ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) set.sample_ids.push_back(reader.get_string("sample id"));
    const std::size_t payload = static_cast<std::size_t>(count) * set.dim * 4;
    const auto raw = reader.take(payload, "vector payload");
    if (reader.remaining() != 0) {
        throw Error(ErrorCode::kDataFormat,
                    std::to_string(reader.remaining()) + " trailing bytes after payload");
    }
    set.vectors.resize(static_cast<std::size_t>(count) * set.dim);
    for (std::size_t i = 0; i < set.vectors.size(); ++i) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
        set.vectors[i] = std::bit_cast<float>(bits);
    }
    check_unique(set.sample_ids, ErrorCode::kDataFormat, "embedding file");
    set.validate();
    return set;
}

void write_embedding_set(const std::filesystem::path& path, const EmbeddingSet& set) {
    const auto bytes = encode_embedding_set(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

EmbeddingSet read_embedding_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kDataMissing, "cannot open embedding file '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_embedding_set(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string_view split_name(Split split) noexcept {
    switch (split) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
        case Split::kUnassigned: return "unassigned";
    }
    return "unassigned";
}

std::optional<Split> parse_split(std::string_view name) noexcept {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    if (name == "unassigned") return Split::kUnassigned;
    return std::nullopt;
}

void SampleManifest::validate() const {
    if (num_classes < 2) {
        throw Error(ErrorCode::kManifest, "num_classes must be at least 2");
    }
    std::unordered_set<std::string> seen;
    std::vector<std::size_t> per_class(static_cast<std::size_t>(num_classes), 0);
    for (const auto& e : entries) {
        if (!seen.insert(e.sample_id).second) {
            throw Error(ErrorCode::kManifest, "duplicate sample_id '" + e.sample_id + "'");
        }
        if (e.label < 0 || e.label >= num_classes) {
            throw Error(ErrorCode::kManifest, "label " + std::to_string(e.label) + " of '" +
                                                  e.sample_id + "' is outside [0, " +
                                                  std::to_string(num_classes) + ")");
        }
        ++per_class[static_cast<std::size_t>(e.label)];
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] == 0) {
            throw Error(ErrorCode::kManifest, "class " + std::to_string(c) + " has no samples");
        }
    }
}

bool SampleManifest::fully_assigned() const noexcept {
    return std::none_of(entries.begin(), entries.end(),
                        [](const ManifestEntry& e) { return e.split == Split::kUnassigned; });
}

SampleManifest parse_manifest(std::string_view text) {
    using nlohmann::json;
    SampleManifest manifest;
    std::unordered_set<std::string> seen;
    bool have_header = false;
    std::size_t line_no = 0;
    std::istringstream lines{std::string(text)};
    std::string line;
    auto fail = [&](const std::string& msg) {
        throw Error(ErrorCode::kManifest, "line " + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(std::string("invalid JSON (") + e.what() + ")");
        }
        if (!obj.is_object()) fail("expected a JSON object");
        if (!have_header) {
            if (!obj.contains("task") || !obj["task"].is_string()) fail("header lacks string field 'task'");
            if (!obj.contains("num_classes") || !obj["num_classes"].is_number_integer()) {
                fail("header lacks integer field 'num_classes'");
            }
            manifest.task_name = obj["task"].get<std::string>();
            const auto k = obj["num_classes"].get<long long>();
            if (k < 2 || k > std::numeric_limits<int>::max()) fail("num_classes must be at least 2");
            manifest.num_classes = static_cast<int>(k);
            have_header = true;
            continue;
        }
        ManifestEntry entry;
        if (!obj.contains("id") || !obj["id"].is_string()) fail("missing string field 'id'");
        if (!obj.contains("label") || !obj["label"].is_number_integer()) fail("missing integer field 'label'");
        entry.sample_id = obj["id"].get<std::string>();
        const auto label = obj["label"].get<long long>();
        if (label < 0 || label >= manifest.num_classes) {
            fail("label " + std::to_string(label) + " is outside [0, " +
                 std::to_string(manifest.num_classes) + ")");
        }
        entry.label = static_cast<int>(label);
        if (obj.contains("split")) {
            if (!obj["split"].is_string()) fail("field 'split' must be a string");
            const auto split = parse_split(obj["split"].get<std::string>());
            if (!split) fail("unknown split '" + obj["split"].get<std::string>() + "'");
            entry.split = *split;
        }
        if (!seen.insert(entry.sample_id).second) fail("duplicate sample_id '" + entry.sample_id + "'");
        manifest.entries.push_back(std::move(entry));
    }
    if (!have_header) {
        throw Error(ErrorCode::kManifest, "manifest is empty (no header line)");
    }
    manifest.validate();
    return manifest;
}

SampleManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kDataMissing, "cannot open manifest '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_manifest(buffer.str());
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void write_manifest(const std::filesystem::path& path, const SampleManifest& manifest,
                    const nlohmann::ordered_json& header_extra) {
    using nlohmann::ordered_json;
    manifest.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
    ordered_json header{{"task", manifest.task_name}, {"num_classes", manifest.num_classes}};
    for (const auto& [key, value] : header_extra.items()) header[key] = value;
    out << header.dump() << '\n';
    for (const auto& e : manifest.entries) {
        ordered_json line{{"id", e.sample_id}, {"label", e.label}};
        if (e.split != Split::kUnassigned) line["split"] = split_name(e.split);
        out << line.dump() << '\n';
    }
    if (!out) throw Error(ErrorCode::kIo, "write to '" + path.string() + "' failed");
}

namespace {

// Largest-remainder apportionment of `total` units over weights summing to 1.
// Ties go to the lower index.
std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double quota = ratios[s] * static_cast<double>(total);
        counts[s] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        frac[s] = std::max(0.0, quota - static_cast<double>(counts[s]));
        assigned += counts[s];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

// Successive-shortest-path min-cost flow on the tiny bipartite graph
// source → class → split → sink, with unit capacity on class→split edges.
class SplitFlow {
public:
    explicit SplitFlow(std::size_t nodes) : adj_(nodes) {}

    void add_edge(std::size_t from, std::size_t to, long long cap, long long cost) {
        adj_[from].push_back(edges_.size());
        edges_.push_back({to, cap, cost});
        adj_[to].push_back(edges_.size());
        edges_.push_back({from, 0, -cost});
    }

    long long run(std::size_t source, std::size_t sink) {
        long long flow = 0;
        const auto n = adj_.size();
        constexpr long long kInf = std::numeric_limits<long long>::max() / 4;
        while (true) {
            std::vector<long long> dist(n, kInf);
            std::vector<std::size_t> via(n, edges_.size());
            dist[source] = 0;
            // Bellman-Ford; residual graphs of SSP have no negative cycles.
            for (std::size_t round = 0; round + 1 < n; ++round) {
                bool changed = false;
                for (std::size_t u = 0; u < n; ++u) {
                    if (dist[u] == kInf) continue;
                    for (const auto id : adj_[u]) {
                        const auto& e = edges_[id];
                        if (e.cap > 0 && dist[u] + e.cost < dist[e.to]) {
                            dist[e.to] = dist[u] + e.cost;
                            via[e.to] = id;
                            changed = true;
                        }
                    }
                }
                if (!changed) break;
            }
            if (dist[sink] == kInf) return flow;
            for (auto v = sink; v != source; v = edges_[via[v] ^ 1].to) {
                edges_[via[v]].cap -= 1;
                edges_[via[v] ^ 1].cap += 1;
            }
            ++flow;
        }
    }

    long long residual(std::size_t edge_id) const { return edges_[edge_id].cap; }

private:
    struct Edge {
        std::size_t to;
        long long cap;
        long long cost;
    };
    std::vector<std::vector<std::size_t>> adj_;
    std::vector<Edge> edges_;
};

}  // namespace

std::vector<std::array<std::size_t, 3>> split_counts(std::span<const std::size_t> class_sizes,
                                                     const SplitRatios& ratios,
                                                     std::uint64_t seed) {
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    for (const double v : r) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw Error(ErrorCode::kConfigSplit, "split ratios must be finite and nonnegative");
        }
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
        throw Error(ErrorCode::kConfigSplit, "split ratios must sum to 1");
    }
    const std::size_t classes = class_sizes.size();
    const std::size_t total = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
    const auto targets = apportion(total, r);

    std::vector<std::array<std::size_t, 3>> counts(classes);
    std::vector<std::array<long long, 3>> frac_units(classes);
    std::vector<long long> row_extra(classes, 0);
    std::array<long long, 3> col_extra{};
    for (std::size_t s = 0; s < 3; ++s) col_extra[s] = static_cast<long long>(targets[s]);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t floors = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double quota = r[s] * static_cast<double>(class_sizes[c]);
            counts[c][s] = static_cast<std::size_t>(std::floor(quota + 1e-9));
            frac_units[c][s] = std::llround(std::max(0.0, quota - static_cast<double>(counts[c][s])) * 1e9);
            floors += counts[c][s];
            col_extra[s] -= static_cast<long long>(counts[c][s]);
        }
        row_extra[c] = static_cast<long long>(class_sizes[c] - floors);
    }

    // Seeded class priority decides between cells with equal remainders.
    std::vector<std::size_t> priority(classes);
    std::iota(priority.begin(), priority.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x5EED5EEDULL));
    rng.shuffle(priority);
    std::vector<long long> rank_of(classes);
    for (std::size_t k = 0; k < classes; ++k) rank_of[priority[k]] = static_cast<long long>(k);

    const auto cells = static_cast<long long>(3 * classes);
    const long long scale = cells * cells + 1;
    const std::size_t source = 0;
    const std::size_t sink = classes + 4;
    SplitFlow flow(classes + 5);
    std::vector<std::array<std::size_t, 3>> cell_edge(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        flow.add_edge(source, 1 + c, row_extra[c], 0);
        for (std::size_t s = 0; s < 3; ++s) {
            cell_edge[c][s] = 2 * (1 + c * 4 + s);  // id of the forward edge added next
            const long long cost = -frac_units[c][s] * scale + rank_of[c] * 3 + static_cast<long long>(s);
            flow.add_edge(1 + c, classes + 1 + s, 1, cost);
        }
    }
    long long needed = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        if (col_extra[s] < 0) throw Error(ErrorCode::kRuntime, "split apportionment underflow");
        flow.add_edge(classes + 1 + s, sink, col_extra[s], 0);
        needed += col_extra[s];
    }
    if (flow.run(source, sink) != needed) {
        throw Error(ErrorCode::kRuntime, "no split table matches the target totals");
    }
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < 3; ++s) {
            if (flow.residual(cell_edge[c][s]) == 0) ++counts[c][s];
        }
    }
    return counts;
}

SampleManifest stratified_split(const SampleManifest& manifest, const SplitRatios& ratios,
                                std::uint64_t seed) {
    if (manifest.entries.empty()) {
        throw Error(ErrorCode::kManifest, "cannot split an empty manifest");
    }
    manifest.validate();
    const auto classes = static_cast<std::size_t>(manifest.num_classes);
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        members[static_cast<std::size_t>(manifest.entries[i].label)].push_back(i);
    }
    std::vector<std::size_t> sizes(classes);
    for (std::size_t c = 0; c < classes; ++c) sizes[c] = members[c].size();
    const auto counts = split_counts(sizes, ratios, seed);

    SampleManifest out = manifest;
    for (std::size_t c = 0; c < classes; ++c) {
        auto& idx = members[c];
        Rng rng(derive_seed(seed, c));
        rng.shuffle(idx);
        std::size_t k = 0;
        for (std::size_t j = 0; j < counts[c][0]; ++j) out.entries[idx[k++]].split = Split::kTrain;
        for (std::size_t j = 0; j < counts[c][1]; ++j) out.entries[idx[k++]].split = Split::kVal;
        for (std::size_t j = 0; j < counts[c][2]; ++j) out.entries[idx[k++]].split = Split::kTest;
    }
    return out;
}

std::vector<std::size_t> AlignedDataset::indices_of(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].split == split) out.push_back(i);
    }
    return out;
}

AlignedDataset assemble_dataset(const SampleManifest& manifest, std::span<const EmbeddingSet> sets,
                                std::span<const std::string> expert_subset) {
    if (expert_subset.empty()) {
        throw Error(ErrorCode::kConfig, "expert subset is empty");
    }
    std::vector<const EmbeddingSet*> chosen;
    for (const auto& name : expert_subset) {
        const EmbeddingSet* found = nullptr;
        for (const auto& set : sets) {
            if (set.expert_name != name) continue;
            if (found != nullptr) {
                throw Error(ErrorCode::kDataInvariant, "expert '" + name + "' supplied more than once");
            }
            found = &set;
        }
        if (found == nullptr) {
            throw Error(ErrorCode::kDataMissing, "no embeddings for expert '" + name + "'");
        }
        chosen.push_back(found);
    }

    std::vector<std::unordered_map<std::string, std::size_t>> row_of(chosen.size());
    for (std::size_t e = 0; e < chosen.size(); ++e) {
        row_of[e].reserve(chosen[e]->size());
        for (std::size_t i = 0; i < chosen[e]->size(); ++i) row_of[e].emplace(chosen[e]->sample_ids[i], i);
    }

    AlignedDataset data;
    data.task_name = manifest.task_name;
    data.num_classes = manifest.num_classes;
    data.expert_names.assign(expert_subset.begin(), expert_subset.end());
    for (const auto* set : chosen) data.dims.push_back(set->dim);
    for (const auto& entry : manifest.entries) {
        std::vector<std::size_t> rows;
        rows.reserve(chosen.size());
        for (const auto& index : row_of) {
            const auto it = index.find(entry.sample_id);
            if (it == index.end()) break;
            rows.push_back(it->second);
        }
        if (rows.size() != chosen.size()) {
            data.dropped_ids.push_back(entry.sample_id);
            continue;
        }
        AlignedSample sample{entry.sample_id, {}, entry.label, entry.split};
        sample.features.reserve(chosen.size());
        for (std::size_t e = 0; e < chosen.size(); ++e) {
            const auto row = chosen[e]->row(rows[e]);
            sample.features.emplace_back(row.begin(), row.end());
        }
        data.samples.push_back(std::move(sample));
    }
    if (data.samples.empty()) {
        throw Error(ErrorCode::kDataJoin, "no sample id is shared by the manifest and every expert");
    }
    return data;
}

}  // namespace fusionfm
