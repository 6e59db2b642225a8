#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bamnet {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Class index 0 is the positive class.
enum class ClassLabel { Fractured = 0, NonFractured = 1 };
inline constexpr std::size_t kNumClasses = 2;

std::string to_string(ClassLabel label);
ClassLabel label_from_string(const std::string& s);
/// On-disk directory of a class: "Fractured" / "Non_fractured".
std::string class_directory(ClassLabel label);

struct DatasetEntry {
    std::string path;  // relative to the root, '/' separated
    ClassLabel label = ClassLabel::Fractured;
    std::uintmax_t bytes = 0;

    friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<DatasetEntry> entries;
    std::string scanned_at;  // UTC, ISO 8601
};

nlohmann::json to_json(const DatasetManifest& m, bool with_timestamp = true);

/// Recursively collects .png/.jpg/.jpeg files (case-insensitive) under
/// root/Fractured and root/Non_fractured, sorted by relative path.
DatasetManifest scan_dataset(const std::filesystem::path& root);

struct Rejection {
    std::string path;
    std::string reason;

    friend bool operator==(const Rejection&, const Rejection&) = default;
};

struct PruneResult {
    DatasetManifest accepted;
    std::vector<Rejection> rejected;
};

/// Fully decodes every entry; failures move to the rejection log. Work fans
/// out over `workers` threads (0 = hardware concurrency); output order
/// follows the manifest regardless.
PruneResult prune_corrupted(const DatasetManifest& manifest, std::size_t workers = 0);

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct SplitRatios {
    double train = 0.80;
    double val = 0.115;
    double test = 0.085;

    [[nodiscard]] std::array<double, 3> as_array() const { return {train, val, test}; }
    friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

/// Integer apportionment of `total` by `weights`: floors first, then the
/// leftover units go to the largest fractional remainders, ties to the
/// lower index.
std::array<std::size_t, 3> largest_remainder(std::size_t total, const std::array<double, 3>& weights);

struct SplitEntry {
    std::string path;
    ClassLabel label = ClassLabel::Fractured;
    Split split = Split::Train;

    friend bool operator==(const SplitEntry&, const SplitEntry&) = default;
};

struct SplitManifest {
    std::string root;
    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::size_t channels = 3;
    std::vector<SplitEntry> entries;  // manifest order
    std::vector<Rejection> rejected;

    [[nodiscard]] std::array<std::size_t, 3> counts() const;
    [[nodiscard]] std::vector<SplitEntry> entries_in(Split split) const;

    friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

using FixedAssignments = std::map<std::string, Split>;

/// Entries named in `fixed` keep their split; the rest are shuffled with
/// the seed and fill each split up to its largest-remainder target over the
/// whole accepted total.
SplitManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed,
                            const FixedAssignments& fixed = {});

/// {"relative/path.png": "train" | "val" | "test", ...}
FixedAssignments load_fixed_assignments(const std::filesystem::path& path);

nlohmann::json to_json(const SplitManifest& m);
SplitManifest split_manifest_from_json(const nlohmann::json& j);
void save_split_manifest(const std::filesystem::path& path, const SplitManifest& m);
SplitManifest load_split_manifest(const std::filesystem::path& path);

/// Index lists into a split of `count` entries for one epoch. The order is
/// a seeded permutation keyed by (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch, bool drop_last = false);

}  // namespace bamnet
