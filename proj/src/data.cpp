#include "bamnet/data.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <thread>

#include "bamnet/image.hpp"
#include "bamnet/random.hpp"

namespace bamnet {
namespace fs = std::filesystem;

namespace {

constexpr std::array<ClassLabel, 2> kLabels{ClassLabel::Fractured, ClassLabel::NonFractured};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string to_string(ClassLabel label) { return label == ClassLabel::Fractured ? "Fractured" : "NonFractured"; }

ClassLabel label_from_string(const std::string& s) {
    if (s == "Fractured") return ClassLabel::Fractured;
    if (s == "NonFractured") return ClassLabel::NonFractured;
    throw DataError("unknown class label '" + s + "'");
}

std::string class_directory(ClassLabel label) {
    return label == ClassLabel::Fractured ? "Fractured" : "Non_fractured";
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

nlohmann::json to_json(const DatasetManifest& m, bool with_timestamp) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"path", e.path}, {"label", to_string(e.label)}, {"bytes", e.bytes}});
    }
    nlohmann::json j{{"root", m.root.string()}, {"entries", entries}};
    if (with_timestamp) j["scanned_at"] = m.scanned_at;
    return j;
}

DatasetManifest scan_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
    DatasetManifest m;
    m.root = root;
    m.scanned_at = utc_now();
    for (ClassLabel label : kLabels) {
        const fs::path dir = root / class_directory(label);
        if (!fs::is_directory(dir)) {
            throw DataError("missing class directory '" + class_directory(label) + "' under " + root.string());
        }
        std::vector<DatasetEntry> found;
        for (const auto& item : fs::recursive_directory_iterator(dir, fs::directory_options::follow_directory_symlink)) {
            if (!item.is_regular_file() || !is_image_file(item.path())) continue;
            found.push_back({fs::relative(item.path(), root).generic_string(), label, item.file_size()});
        }
        if (found.empty()) throw DataError("class directory '" + class_directory(label) + "' holds no images");
        m.entries.insert(m.entries.end(), found.begin(), found.end());
    }
    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return m;
}

PruneResult prune_corrupted(const DatasetManifest& manifest, std::size_t workers) {
    const std::size_t n = manifest.entries.size();
    std::vector<std::string> reasons(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const auto path = manifest.root / manifest.entries[i].path;
            try {
                (void)decode_image(read_file_bytes(path), path.string());
            } catch (const ImageError& e) {
                reasons[i] = e.reason();
            }
        }
    };
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    PruneResult r;
    r.accepted.root = manifest.root;
    r.accepted.scanned_at = manifest.scanned_at;
    for (std::size_t i = 0; i < n; ++i) {
        if (reasons[i].empty()) {
            r.accepted.entries.push_back(manifest.entries[i]);
        } else {
            r.rejected.push_back({manifest.entries[i].path, reasons[i]});
        }
    }
    return r;
}

std::array<std::size_t, 3> largest_remainder(std::size_t total, const std::array<double, 3>& weights) {
    const double wsum = weights[0] + weights[1] + weights[2];
    if (!(wsum > 0.0)) throw DataError("apportionment weights must have a positive sum");
    std::array<std::size_t, 3> out{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (weights[k] < 0.0) throw DataError("apportionment weights must be non-negative");
        const double exact = static_cast<double>(total) * weights[k] / wsum;
        out[k] = static_cast<std::size_t>(std::floor(exact));
        rem[k] = exact - static_cast<double>(out[k]);
        used += out[k];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; used < total; ++i, ++used) ++out[order[i % 3]];
    return out;
}

std::array<std::size_t, 3> SplitManifest::counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& e : entries) ++c[static_cast<std::size_t>(e.split)];
    return c;
}

std::vector<SplitEntry> SplitManifest::entries_in(Split split) const {
    std::vector<SplitEntry> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e);
    return out;
}

SplitManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed,
                            const FixedAssignments& fixed) {
    const auto r = ratios.as_array();
    if (r[0] <= 0.0 || r[1] <= 0.0 || r[2] <= 0.0) throw DataError("split ratios must be positive");
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");

    SplitManifest out;
    out.root = manifest.root.string();
    out.seed = seed;
    out.ratios = ratios;
    out.entries.reserve(manifest.entries.size());

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        if (!index.emplace(e.path, i).second) throw DataError("duplicate path '" + e.path + "' in manifest");
        out.entries.push_back({e.path, e.label, Split::Train});
    }
    std::array<std::size_t, 3> fixed_count{};
    std::vector<bool> is_fixed(out.entries.size(), false);
    for (const auto& [path, split] : fixed) {
        auto it = index.find(path);
        if (it == index.end()) throw DataError("fixed assignment names unknown path '" + path + "'");
        out.entries[it->second].split = split;
        is_fixed[it->second] = true;
        ++fixed_count[static_cast<std::size_t>(split)];
    }

    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < out.entries.size(); ++i)
        if (!is_fixed[i]) free.push_back(i);
    Rng rng(seed);
    rng.shuffle(free);

    // Fill each split up to its target; if fixed entries overshoot a target
    // the free entries are apportioned over the remaining deficits.
    const auto target = largest_remainder(out.entries.size(), r);
    std::array<double, 3> deficit{};
    std::size_t deficit_sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t d = target[k] > fixed_count[k] ? target[k] - fixed_count[k] : 0;
        deficit[k] = static_cast<double>(d);
        deficit_sum += d;
    }
    std::array<std::size_t, 3> take{};
    if (!free.empty()) {
        take = deficit_sum == free.size() ? std::array<std::size_t, 3>{static_cast<std::size_t>(deficit[0]),
                                                                       static_cast<std::size_t>(deficit[1]),
                                                                       static_cast<std::size_t>(deficit[2])}
                                          : largest_remainder(free.size(), deficit_sum > 0 ? deficit : r);
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < take[k]; ++i) out.entries[free[pos++]].split = static_cast<Split>(k);
    }
    return out;
}

FixedAssignments load_fixed_assignments(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fixed assignments '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("fixed assignments '" + path.string() + "': " + e.what());
    }
    if (!j.is_object()) throw DataError("fixed assignments must be a JSON object of path -> split");
    FixedAssignments out;
    for (const auto& [k, v] : j.items()) out[k] = split_from_string(v.get<std::string>());
    return out;
}

nlohmann::json to_json(const SplitManifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"path", e.path}, {"label", to_string(e.label)}, {"split", to_string(e.split)}});
    }
    nlohmann::json rejected = nlohmann::json::array();
    for (const auto& r : m.rejected) rejected.push_back({{"path", r.path}, {"reason", r.reason}});
    const auto c = m.counts();
    return {{"root", m.root},
            {"seed", m.seed},
            {"ratios", {m.ratios.train, m.ratios.val, m.ratios.test}},
            {"channels", m.channels},
            {"counts", {{"train", c[0]}, {"val", c[1]}, {"test", c[2]}}},
            {"entries", entries},
            {"rejected", rejected}};
}

SplitManifest split_manifest_from_json(const nlohmann::json& j) {
    try {
        SplitManifest m;
        m.root = j.at("root").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto& r = j.at("ratios");
        m.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
        m.channels = j.value("channels", std::size_t{3});
        for (const auto& e : j.at("entries")) {
            m.entries.push_back({e.at("path").get<std::string>(), label_from_string(e.at("label").get<std::string>()),
                                 split_from_string(e.at("split").get<std::string>())});
        }
        for (const auto& r2 : j.at("rejected")) {
            m.rejected.push_back({r2.at("path").get<std::string>(), r2.at("reason").get<std::string>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed split manifest: ") + e.what());
    }
}

void save_split_manifest(const fs::path& path, const SplitManifest& m) {
    std::ofstream out(path);
    out << to_json(m).dump(2) << '\n';
    if (!out) throw DataError("cannot write split manifest '" + path.string() + "'");
}

SplitManifest load_split_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open split manifest '" + path.string() + "'");
    try {
        return split_manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("split manifest '" + path.string() + "': " + e.what());
    }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch, bool drop_last) {
    if (batch_size == 0) throw DataError("batch size must be at least 1");
    if (count == 0) throw DataError("cannot batch an empty split");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t end = std::min(count, start + batch_size);
        if (drop_last && end - start < batch_size) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace bamnet
