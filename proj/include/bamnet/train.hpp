#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bamnet/data.hpp"
#include "bamnet/model.hpp"
#include "bamnet/tensor.hpp"
#include "bamnet/tensor_io.hpp"

namespace bamnet {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Reduce-on-plateau over a minimized quantity.
struct PlateauConfig {
    double factor = 0.1;
    std::size_t patience = 10;
    double min_lr = 1e-6;

    friend bool operator==(const PlateauConfig&, const PlateauConfig&) = default;
};

/// Architecture knobs of the trained network.
struct ModelConfig {
    std::size_t width = 32;
    std::size_t image_extent = 224;
    bool attention = true;
    std::size_t reduction = 16;
    std::size_t dilation = 4;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    AdamConfig adam;
    PlateauConfig plateau;
    std::uint64_t seed = 0;
    /// Global L2 norm bound on the gradient; 0 disables clipping.
    double grad_clip = 0.0;
    /// Decoded samples kept in memory, in bytes; the rest are decoded per batch.
    std::size_t cache_bytes = std::size_t{1} << 30;
    ModelConfig model;

    /// Throws TrainError on the first invalid field. `allow_frozen` admits a
    /// zero learning rate, which train() accepts for diagnostic runs.
    void validate(bool allow_frozen = false) const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Backbone, attention at the three bottlenecks (unless disabled) and the
/// default head, for `channels`-channel square inputs.
ModelSpec build_model_spec(const ModelConfig& c, std::size_t channels);

/// First and second moment estimates, one per parameter, and the step count.
struct AdamState {
    std::vector<Tensor<double>> m;
    std::vector<Tensor<double>> v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update, computed in double. Empty state is
/// zero-initialized on first use; an empty gradient counts as zero.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, AdamState& state,
               double lr, const AdamConfig& cfg);

class PlateauScheduler {
public:
    PlateauScheduler(const PlateauConfig& cfg, double lr);

    /// Feeds one epoch's monitored loss and returns the learning rate for
    /// the next epoch. Only strict improvements reset the wait counter.
    double step(double loss);

    [[nodiscard]] double lr() const { return lr_; }
    [[nodiscard]] double best() const { return best_; }
    [[nodiscard]] std::size_t wait() const { return wait_; }
    void restore(double lr, double best, std::size_t wait);

private:
    PlateauConfig cfg_;
    double lr_;
    double best_;
    std::size_t wait_ = 0;
};

/// Learning rate after each entry of `losses`, starting from `lr`.
std::vector<double> plateau_schedule(const std::vector<double>& losses, double lr, const PlateauConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;  // rate used during the epoch
    double seconds = 0.0;

    /// Compares everything but the wall-clock time.
    friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
        return a.epoch == b.epoch && a.train_loss == b.train_loss && a.train_acc == b.train_acc &&
               a.val_loss == b.val_loss && a.val_acc == b.val_acc && a.lr == b.lr;
    }
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    static constexpr const char* kHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

    /// Shortest round-trip decimal form; wall-clock time is left out so the
    /// file is reproducible.
    [[nodiscard]] std::string to_csv() const;
    /// Throws TrainError naming the 1-based line of the first malformed row.
    static TrainLog from_csv(const std::string& text);

    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Labeled images of one split, resized to the model input.
class ImageDataset {
public:
    ImageDataset(std::filesystem::path root, std::vector<SplitEntry> entries, std::size_t extent,
                 std::size_t channels, std::size_t cache_bytes = 0);

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] const std::vector<SplitEntry>& entries() const { return entries_; }
    [[nodiscard]] Shape sample_shape() const { return {channels_, extent_, extent_}; }

    [[nodiscard]] Tensor<float> sample(std::size_t i) const;
    /// N x C x H x W images and N x 2 one-hot targets.
    [[nodiscard]] Tensor<float> images(const std::vector<std::size_t>& indices) const;
    [[nodiscard]] Tensor<float> targets(const std::vector<std::size_t>& indices) const;

private:
    std::filesystem::path root_;
    std::vector<SplitEntry> entries_;
    std::size_t extent_;
    std::size_t channels_;
    std::vector<Tensor<float>> cache_;
};

/// Files of a checkpoint directory.
struct CheckpointPaths {
    std::filesystem::path dir;
    [[nodiscard]] std::filesystem::path model() const { return dir / "model.json"; }
    [[nodiscard]] std::filesystem::path params() const { return dir / "params.tnsr"; }
    [[nodiscard]] std::filesystem::path optimizer() const { return dir / "optimizer.tnsr"; }
    [[nodiscard]] std::filesystem::path log() const { return dir / "log.csv"; }
};

/// Loads model.json and params.tnsr into a ready model.
Model<float> load_checkpoint_model(const std::filesystem::path& dir);

struct TrainResult {
    TrainLog log;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on softmax cross-entropy with per-epoch shuffling, a validation pass
/// and the plateau schedule on validation loss. The parameters of the
/// lowest-validation-loss epoch are written to `checkpoint_dir` (when not
/// empty) and restored into the model before returning.
TrainResult train(Model<float>& model, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainConfig& config, const std::filesystem::path& checkpoint_dir = {},
                  const EpochCallback& on_epoch = nullptr);

/// Mean cross-entropy and accuracy of the eval-mode model.
struct LossAccuracy {
    double loss = 0.0;
    double accuracy = 0.0;
};
LossAccuracy loss_and_accuracy(Model<float>& model, const ImageDataset& set, std::size_t batch_size);

/// Index of the largest logit; ties go to the lower index.
std::size_t argmax_row(const Tensor<float>& logits, std::size_t row);

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;
    ClassLabel positive = ClassLabel::Fractured;

    [[nodiscard]] std::uint64_t total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts for the positive class over paired predictions and labels.
ConfusionCounts tally(const std::vector<ClassLabel>& predicted, const std::vector<ClassLabel>& actual,
                      ClassLabel positive = ClassLabel::Fractured);

/// Eval-mode predictions for every entry of the set, in order.
std::vector<ClassLabel> predict(Model<float>& model, const ImageDataset& set, std::size_t batch_size);

ConfusionCounts evaluate(Model<float>& model, const ImageDataset& set, std::size_t batch_size = 32);

enum class Averaging { PerClass, Macro, Micro };
std::string to_string(Averaging a);

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    Averaging averaging = Averaging::Micro;
    /// Set when a precision, recall or F1 denominator was zero and the
    /// value was defined as 0.
    bool degenerate = false;
};

/// Per-class reports the positive class. Macro averages both classes'
/// precision and recall and takes F1 as their harmonic mean. Micro pools the
/// counts of both classes, so precision, recall and F1 equal accuracy.
MetricsReport metrics_from_counts(const ConfusionCounts& counts, Averaging averaging = Averaging::Micro);

nlohmann::json to_json(const ConfusionCounts& c);
ConfusionCounts confusion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace bamnet
