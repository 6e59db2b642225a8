#include "bamnet/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "bamnet/image.hpp"
#include "bamnet/ops.hpp"
#include "bamnet/random.hpp"

namespace bamnet {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw TrainError("invalid training config: " + what);
}

// Reads the keys of `j` into `out`, rejecting keys it does not know.
class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw TrainError(where_ + ": expected an object");
    }

    template <typename V>
    JsonReader& read(const char* key, V& out) {
        seen_.insert(key);
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                out = it->get<V>();
            } catch (const nlohmann::json::exception& e) {
                throw TrainError(where_ + "." + key + ": " + e.what());
            }
        }
        return *this;
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw TrainError(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw TrainError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Tensor<double> scalar(double v) { return Tensor<double>({1}, v); }

std::size_t class_index(ClassLabel label) { return static_cast<std::size_t>(label); }

}  // namespace

void TrainConfig::validate(bool allow_frozen) const {
    require(std::isfinite(learning_rate) && (learning_rate > 0.0 || (allow_frozen && learning_rate == 0.0)),
            "learning_rate must be positive");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(epochs >= 1, "epochs must be at least 1");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "adam.beta1 must lie in [0, 1)");
    require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam.beta2 must lie in [0, 1)");
    require(adam.epsilon > 0.0, "adam.epsilon must be positive");
    require(plateau.factor > 0.0 && plateau.factor < 1.0, "plateau.factor must lie in (0, 1)");
    require(plateau.patience >= 1, "plateau.patience must be at least 1");
    require(plateau.min_lr >= 0.0, "plateau.min_lr must be non-negative");
    require(std::isfinite(grad_clip) && grad_clip >= 0.0, "grad_clip must be non-negative");
    require(model.width >= 1, "model.width must be at least 1");
    require(model.reduction >= 1, "model.reduction must be at least 1");
    require(model.dilation >= 1, "model.dilation must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
        {"plateau", {{"factor", c.plateau.factor}, {"patience", c.plateau.patience}, {"min_lr", c.plateau.min_lr}}},
        {"seed", c.seed},
        {"grad_clip", c.grad_clip},
        {"cache_bytes", c.cache_bytes},
        {"model",
         {{"width", c.model.width},
          {"image_extent", c.model.image_extent},
          {"attention", c.model.attention},
          {"reduction", c.model.reduction},
          {"dilation", c.model.dilation}}},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    JsonReader r(j, "config");
    r.read("learning_rate", c.learning_rate)
        .read("batch_size", c.batch_size)
        .read("epochs", c.epochs)
        .read("seed", c.seed)
        .read("grad_clip", c.grad_clip)
        .read("cache_bytes", c.cache_bytes);
    if (const auto* a = r.child("adam")) {
        JsonReader ar(*a, "config.adam");
        ar.read("beta1", c.adam.beta1).read("beta2", c.adam.beta2).read("epsilon", c.adam.epsilon).finish();
    }
    if (const auto* p = r.child("plateau")) {
        JsonReader pr(*p, "config.plateau");
        pr.read("factor", c.plateau.factor)
            .read("patience", c.plateau.patience)
            .read("min_lr", c.plateau.min_lr)
            .finish();
    }
    if (const auto* m = r.child("model")) {
        JsonReader mr(*m, "config.model");
        mr.read("width", c.model.width)
            .read("image_extent", c.model.image_extent)
            .read("attention", c.model.attention)
            .read("reduction", c.model.reduction)
            .read("dilation", c.model.dilation)
            .finish();
    }
    r.finish();
    c.validate();
    return c;
}

ModelSpec build_model_spec(const ModelConfig& c, std::size_t channels) {
    ModelSpec spec = build_backbone(c.width, channels, c.image_extent);
    if (c.attention) spec = insert_attention(spec, c.reduction, c.dilation);
    spec = attach_head(spec, default_head());
    spec.name = c.attention ? "BAM-Inception" : "Inception";
    return spec;
}

// ---------------------------------------------------------------------------
// Adam and the plateau schedule

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, AdamState& state,
               double lr, const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.m.empty() && state.v.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(state.m[i].shape(), params[i]->shape(), "adam_step first moment");
        require_same_shape(state.v[i].shape(), params[i]->shape(), "adam_step second moment");
        if (!grads[i]->empty()) require_same_shape(grads[i]->shape(), params[i]->shape(), "adam_step gradient");
    }
    state.t += 1;
    const auto t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& w = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<double>& m = state.m[i];
        Tensor<double>& v = state.v[i];
        for (std::size_t k = 0; k < w.numel(); ++k) {
            const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            const double step = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
            w[k] = static_cast<T>(static_cast<double>(w[k]) - step);
        }
    }
}

template void adam_step<float>(const std::vector<Tensor<float>*>&, const std::vector<const Tensor<float>*>&,
                               AdamState&, double, const AdamConfig&);
template void adam_step<double>(const std::vector<Tensor<double>*>&, const std::vector<const Tensor<double>*>&,
                                AdamState&, double, const AdamConfig&);

PlateauScheduler::PlateauScheduler(const PlateauConfig& cfg, double lr)
    : cfg_(cfg), lr_(lr), best_(std::numeric_limits<double>::infinity()) {
    if (cfg.patience < 1) throw TrainError("plateau patience must be at least 1");
}

double PlateauScheduler::step(double loss) {
    if (loss < best_) {
        best_ = loss;
        wait_ = 0;
        return lr_;
    }
    if (++wait_ >= cfg_.patience) {
        const double reduced = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        if (reduced < lr_) {
            lr_ = reduced;
            wait_ = 0;
        }
    }
    return lr_;
}

void PlateauScheduler::restore(double lr, double best, std::size_t wait) {
    lr_ = lr;
    best_ = best;
    wait_ = wait;
}

std::vector<double> plateau_schedule(const std::vector<double>& losses, double lr, const PlateauConfig& cfg) {
    PlateauScheduler s(cfg, lr);
    std::vector<double> out;
    out.reserve(losses.size());
    for (double l : losses) out.push_back(s.step(l));
    return out;
}

// ---------------------------------------------------------------------------
// Training log

std::string TrainLog::to_csv() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& e : epochs) {
        out += fmt::format("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.lr);
    }
    return out;
}

TrainLog TrainLog::from_csv(const std::string& text) {
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != kHeader) throw TrainError("log line 1: expected header '" + std::string(kHeader) + "'");
            continue;
        }
        if (line.empty()) continue;
        const auto bad = [&](const std::string& why) {
            return TrainError("log line " + std::to_string(line_no) + ": " + why);
        };
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 6) throw bad("expected 6 fields, got " + std::to_string(fields.size()));
        EpochRecord r;
        {
            const auto f = fields[0];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), r.epoch);
            if (ec != std::errc() || ptr != f.data() + f.size()) throw bad("malformed epoch '" + std::string(f) + "'");
        }
        double* slots[] = {&r.train_loss, &r.train_acc, &r.val_loss, &r.val_acc, &r.lr};
        for (std::size_t k = 0; k < 5; ++k) {
            const auto f = fields[k + 1];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), *slots[k]);
            if (ec != std::errc() || ptr != f.data() + f.size()) throw bad("malformed number '" + std::string(f) + "'");
        }
        log.epochs.push_back(r);
    }
    if (line_no == 0) throw TrainError("log line 1: missing header");
    return log;
}

// ---------------------------------------------------------------------------
// Data

ImageDataset::ImageDataset(fs::path root, std::vector<SplitEntry> entries, std::size_t extent, std::size_t channels,
                           std::size_t cache_bytes)
    : root_(std::move(root)), entries_(std::move(entries)), extent_(extent), channels_(channels) {
    if (channels_ != 1 && channels_ != 3) throw DataError("image channels must be 1 or 3");
    if (extent_ == 0) throw DataError("image extent must be positive");
    const std::size_t per_sample = channels_ * extent_ * extent_ * sizeof(float);
    const std::size_t cached = std::min(entries_.size(), cache_bytes / per_sample);
    cache_.reserve(cached);
    for (std::size_t i = 0; i < cached; ++i) cache_.push_back(load_and_resize(root_ / entries_[i].path, extent_, extent_, channels_));
}

Tensor<float> ImageDataset::sample(std::size_t i) const {
    if (i < cache_.size()) return cache_[i];
    return load_and_resize(root_ / entries_.at(i).path, extent_, extent_, channels_);
}

Tensor<float> ImageDataset::images(const std::vector<std::size_t>& indices) const {
    const std::size_t per = channels_ * extent_ * extent_;
    Tensor<float> out({indices.size(), channels_, extent_, extent_});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i < cache_.size()) {
            std::copy(cache_[i].data().begin(), cache_[i].data().end(), out.ptr() + k * per);
        } else {
            const Tensor<float> s = sample(i);
            std::copy(s.data().begin(), s.data().end(), out.ptr() + k * per);
        }
    }
    return out;
}

Tensor<float> ImageDataset::targets(const std::vector<std::size_t>& indices) const {
    Tensor<float> out({indices.size(), kNumClasses});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out[k * kNumClasses + class_index(entries_.at(indices[k]).label)] = 1.0F;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void check_input(const Model<float>& model, const ImageDataset& set, const char* which) {
    const auto& in = model.spec().input_shape;
    const Shape want{in[0], in[1], in[2]};
    if (set.sample_shape() != want) {
        throw DataError(std::string(which) + " samples have shape " + shape_str(set.sample_shape()) +
                        " but the model expects " + shape_str(want));
    }
}

NamedTensors optimizer_state(Model<float>& model, const AdamState& adam, const PlateauScheduler& sched) {
    NamedTensors out;
    const auto params = model.named_parameters();
    for (std::size_t i = 0; i < params.size() && i < adam.m.size(); ++i) {
        out.emplace_back("adam.m/" + params[i].first, adam.m[i]);
        out.emplace_back("adam.v/" + params[i].first, adam.v[i]);
    }
    out.emplace_back("adam.t", scalar(static_cast<double>(adam.t)));
    out.emplace_back("lr", scalar(sched.lr()));
    out.emplace_back("plateau.best", scalar(sched.best()));
    out.emplace_back("plateau.wait", scalar(static_cast<double>(sched.wait())));
    return out;
}

void save_checkpoint(const CheckpointPaths& paths, Model<float>& model, const NamedTensors& state,
                     const NamedTensors& optimizer) {
    fs::create_directories(paths.dir);
    write_text(paths.model(), to_json(model.spec()).dump(2) + "\n");
    save_container(paths.params(), state);
    save_container(paths.optimizer(), optimizer);
}

}  // namespace

Model<float> load_checkpoint_model(const fs::path& dir) {
    const CheckpointPaths paths{dir};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(paths.model()));
    } catch (const nlohmann::json::exception& e) {
        throw TrainError(paths.model().string() + ": " + e.what());
    }
    Model<float> model(spec_from_json(j));
    model.load_state(load_container(paths.params()));
    return model;
}

// ---------------------------------------------------------------------------
// Training

std::size_t argmax_row(const Tensor<float>& logits, std::size_t row) {
    const std::size_t k = logits.dim(1);
    const float* r = logits.ptr() + row * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (r[j] > r[best]) best = j;
    }
    return best;
}

LossAccuracy loss_and_accuracy(Model<float>& model, const ImageDataset& set, std::size_t batch_size) {
    if (set.size() == 0) throw DataError("cannot evaluate an empty split");
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
        const Tensor<float> y = set.targets(idx);
        Tape<float> tape;
        auto logits = model.forward(tape, tape.leaf(set.images(idx)), Mode::Eval);
        loss += static_cast<double>(softmax_cross_entropy(logits, y).value()[0]) * static_cast<double>(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (argmax_row(logits.value(), k) == class_index(set.entries()[idx[k]].label)) ++correct;
        }
    }
    const auto n = static_cast<double>(set.size());
    return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train(Model<float>& model, const ImageDataset& train_set, const ImageDataset& val_set,
                  const TrainConfig& config, const fs::path& checkpoint_dir, const EpochCallback& on_epoch) {
    config.validate(true);
    if (train_set.size() == 0) throw DataError("training split is empty");
    if (val_set.size() == 0) throw DataError("validation split is empty");
    check_input(model, train_set, "training");
    check_input(model, val_set, "validation");

    const auto named = model.named_parameters();
    std::vector<Tensor<float>*> values;
    std::vector<const Tensor<float>*> grads;
    for (auto& [name, p] : named) {
        values.push_back(&p->value);
        grads.push_back(&p->grad);
    }

    AdamState adam;
    PlateauScheduler sched(config.plateau, config.learning_rate);
    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    NamedTensors best_state;
    const std::optional<CheckpointPaths> paths =
        checkpoint_dir.empty() ? std::nullopt : std::optional<CheckpointPaths>(CheckpointPaths{checkpoint_dir});
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double lr = sched.lr();
        double loss_sum = 0.0;
        std::size_t correct = 0;
        const auto batches = make_batches(train_set.size(), config.batch_size, config.seed, epoch - 1);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& idx = batches[b];
            const Tensor<float> y = train_set.targets(idx);
            model.zero_grad();
            Tape<float> tape;
            auto logits = model.forward(tape, tape.leaf(train_set.images(idx)), Mode::Train,
                                        mix_seed(config.seed, step++));
            auto loss = softmax_cross_entropy(logits, y);
            const double l = loss.value()[0];
            if (!std::isfinite(l)) {
                throw TrainError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b + 1));
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (argmax_row(logits.value(), k) == class_index(train_set.entries()[idx[k]].label)) ++correct;
            }
            loss_sum += l * static_cast<double>(idx.size());
            tape.backward(loss);
            if (config.grad_clip > 0.0) {
                double sq = 0.0;
                for (const auto* g : grads) {
                    for (float v : g->data()) sq += static_cast<double>(v) * v;
                }
                const double norm = std::sqrt(sq);
                if (norm > config.grad_clip) {
                    const auto factor = static_cast<float>(config.grad_clip / norm);
                    for (auto& [name, p] : named) {
                        for (auto& v : p->grad.data()) v *= factor;
                    }
                }
            }
            adam_step(values, grads, adam, lr, config.adam);
        }

        const LossAccuracy val = loss_and_accuracy(model, val_set, config.batch_size);
        if (!std::isfinite(val.loss)) {
            throw TrainError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        const auto n = static_cast<double>(train_set.size());
        EpochRecord rec{epoch, loss_sum / n, static_cast<double>(correct) / n, val.loss, val.accuracy, lr, 0.0};
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.epochs.push_back(rec);

        const bool improved = val.loss < result.best_val_loss;
        sched.step(val.loss);
        if (improved) {
            result.best_val_loss = val.loss;
            result.best_epoch = epoch;
            best_state = model.state();
            if (paths) save_checkpoint(*paths, model, best_state, optimizer_state(model, adam, sched));
        }
        if (paths) write_text(paths->log(), result.log.to_csv());
        if (on_epoch) on_epoch(rec);
    }
    model.load_state(best_state);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation and metrics

ConfusionCounts tally(const std::vector<ClassLabel>& predicted, const std::vector<ClassLabel>& actual,
                      ClassLabel positive) {
    if (predicted.size() != actual.size()) {
        throw std::invalid_argument("tally: " + std::to_string(predicted.size()) + " predictions for " +
                                    std::to_string(actual.size()) + " labels");
    }
    ConfusionCounts c;
    c.positive = positive;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool pred_pos = predicted[i] == positive;
        const bool is_pos = actual[i] == positive;
        if (pred_pos && is_pos) ++c.tp;
        else if (pred_pos) ++c.fp;
        else if (is_pos) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::vector<ClassLabel> predict(Model<float>& model, const ImageDataset& set, std::size_t batch_size) {
    if (set.size() == 0) throw DataError("cannot evaluate an empty split");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    check_input(model, set, "evaluation");
    std::vector<ClassLabel> out;
    out.reserve(set.size());
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
        const Tensor<float> logits = model.predict(set.images(idx));
        for (std::size_t k = 0; k < idx.size(); ++k) out.push_back(static_cast<ClassLabel>(argmax_row(logits, k)));
    }
    return out;
}

ConfusionCounts evaluate(Model<float>& model, const ImageDataset& set, std::size_t batch_size) {
    std::vector<ClassLabel> actual;
    actual.reserve(set.size());
    for (const auto& e : set.entries()) actual.push_back(e.label);
    return tally(predict(model, set, batch_size), actual);
}

std::string to_string(Averaging a) {
    switch (a) {
        case Averaging::PerClass: return "per-class";
        case Averaging::Macro: return "macro";
        case Averaging::Micro: return "micro";
    }
    return "?";
}

namespace {

struct Prf {
    double precision, recall, f1;
    bool degenerate;
};

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
    if (den == 0) {
        degenerate = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

// Harmonic mean; exact when both inputs agree.
double harmonic(double p, double r, bool& degenerate) {
    if (p + r == 0.0) {
        degenerate = true;
        return 0.0;
    }
    if (p == r) return p;
    return 2.0 * p * r / (p + r);
}

Prf prf(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    Prf r{};
    r.precision = ratio(tp, tp + fp, r.degenerate);
    r.recall = ratio(tp, tp + fn, r.degenerate);
    r.f1 = harmonic(r.precision, r.recall, r.degenerate);
    return r;
}

}  // namespace

MetricsReport metrics_from_counts(const ConfusionCounts& c, Averaging averaging) {
    const std::uint64_t total = c.total();
    if (total == 0) throw std::invalid_argument("metrics_from_counts: no samples");
    MetricsReport m;
    m.averaging = averaging;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    Prf r{};
    switch (averaging) {
        case Averaging::PerClass:
            r = prf(c.tp, c.fp, c.fn);
            break;
        case Averaging::Macro: {
            const Prf pos = prf(c.tp, c.fp, c.fn);
            const Prf neg = prf(c.tn, c.fn, c.fp);
            r.precision = (pos.precision + neg.precision) / 2.0;
            r.recall = (pos.recall + neg.recall) / 2.0;
            r.degenerate = pos.degenerate || neg.degenerate;
            r.f1 = harmonic(r.precision, r.recall, r.degenerate);
            break;
        }
        case Averaging::Micro:
            // Every sample is a true positive of its own class or a false
            // positive of the other one (and a false negative of its own).
            r = prf(c.tp + c.tn, c.fp + c.fn, c.fn + c.fp);
            break;
    }
    m.precision = r.precision;
    m.recall = r.recall;
    m.f1 = r.f1;
    m.degenerate = r.degenerate;
    return m;
}

nlohmann::json to_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}, {"positive", to_string(c.positive)}};
}

ConfusionCounts confusion_from_json(const nlohmann::json& j) {
    ConfusionCounts c;
    c.tp = j.at("tp").get<std::uint64_t>();
    c.fp = j.at("fp").get<std::uint64_t>();
    c.tn = j.at("tn").get<std::uint64_t>();
    c.fn = j.at("fn").get<std::uint64_t>();
    c.positive = label_from_string(j.at("positive").get<std::string>());
    return c;
}

nlohmann::json to_json(const MetricsReport& m) {
    return {{"accuracy", m.accuracy},   {"precision", m.precision},           {"recall", m.recall},
            {"f1", m.f1},               {"averaging", to_string(m.averaging)}, {"degenerate", m.degenerate}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport m;
    m.accuracy = j.at("accuracy").get<double>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    const auto a = j.at("averaging").get<std::string>();
    if (a == "per-class") m.averaging = Averaging::PerClass;
    else if (a == "macro") m.averaging = Averaging::Macro;
    else if (a == "micro") m.averaging = Averaging::Micro;
    else throw std::invalid_argument("unknown averaging '" + a + "'");
    m.degenerate = j.at("degenerate").get<bool>();
    return m;
}

}  // namespace bamnet
