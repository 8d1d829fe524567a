#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgkd/corpus.hpp"
#include "pgkd/errors.hpp"
#include "pgkd/featurizer.hpp"
#include "pgkd/rng.hpp"

namespace pgkd {

// Training hyperparameters for the reference student. The epoch, batch-size
// and patience defaults follow the original fine-tuning protocol (30 epochs,
// batch 64, patience 5); the learning rate is the grid winner for this linear
// student on the fixture corpus, since 2e-5 is a transformer fine-tuning value
// that does not transfer across architectures.
struct StudentConfig {
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.2;
    int patience = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw Error("epochs must be positive");
        if (batch_size < 1) throw Error("batch_size must be positive");
        if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
        if (patience < 0) throw Error("patience must be >= 0");
    }
};

struct TrainingLog {
    std::vector<double> train_loss;  // mean batch loss per epoch
    std::vector<double> val_loss;    // per epoch
    int stopped_epoch = 0;           // 1-based count of completed epochs
    int best_epoch = 0;              // 1-based argmin of val_loss
};

// Multinomial logistic regression over hashed n-gram counts. Immutable once
// trained; predict/loss are safe for concurrent readers.
class StudentModel {
public:
    StudentModel() = default;

    StudentModel(Taxonomy taxonomy, FeaturizerConfig featurizer)
        : taxonomy_(std::move(taxonomy)), featurizer_(std::move(featurizer)) {
        featurizer_.validate();
        weights_.assign(static_cast<std::size_t>(taxonomy_.size()) * featurizer_.dimension, 0.0);
        bias_.assign(static_cast<std::size_t>(taxonomy_.size()), 0.0);
    }

    const Taxonomy& taxonomy() const { return taxonomy_; }
    const FeaturizerConfig& featurizer() const { return featurizer_; }
    int num_classes() const { return taxonomy_.size(); }

    std::span<const double> weights_row(int class_id) const {
        return {weights_.data() + static_cast<std::size_t>(class_id) * featurizer_.dimension,
                featurizer_.dimension};
    }
    std::vector<double>& weights() { return weights_; }
    const std::vector<double>& weights() const { return weights_; }
    std::vector<double>& bias() { return bias_; }
    const std::vector<double>& bias() const { return bias_; }

    std::vector<double> logits(const SparseVector& features) const {
        const int c = num_classes();
        std::vector<double> z(bias_.begin(), bias_.end());
        for (const auto& [index, count] : features.entries) {
            const double x = count;
            for (int k = 0; k < c; ++k) {
                z[static_cast<std::size_t>(k)] +=
                    weights_[static_cast<std::size_t>(k) * featurizer_.dimension + index] * x;
            }
        }
        return z;
    }

    std::vector<double> predict_proba(const SparseVector& features) const {
        std::vector<double> z = logits(features);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - zmax);
            sum += v;
        }
        for (double& v : z) v /= sum;
        return z;
    }

    std::vector<double> predict_proba(const std::string& text) const {
        return predict_proba(featurize(text, featurizer_));
    }

    // Argmax with ties broken toward the lower class id.
    int predict(const SparseVector& features) const {
        const std::vector<double> z = logits(features);
        int best = 0;
        for (int k = 1; k < num_classes(); ++k) {
            if (z[static_cast<std::size_t>(k)] > z[static_cast<std::size_t>(best)]) best = k;
        }
        return best;
    }

    int predict(const std::string& text) const { return predict(featurize(text, featurizer_)); }

    void save(const std::filesystem::path& path) const {
        nlohmann::ordered_json doc;
        doc["format"] = "pgkd-student-v1";
        doc["taxonomy"] = taxonomy_.classes();
        doc["featurizer"] = {{"ngram_orders", featurizer_.ngram_orders},
                             {"dimension", featurizer_.dimension},
                             {"hash_seed", featurizer_.hash_seed},
                             {"max_tokens", featurizer_.max_tokens}};
        doc["weights"] = weights_;
        doc["bias"] = bias_;
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write checkpoint: " + path.string());
        out << doc.dump() << '\n';
    }

    static StudentModel load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open checkpoint: " + path.string());
        nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
        if (doc.is_discarded() || doc.value("format", "") != "pgkd-student-v1") {
            throw Error("not a student checkpoint: " + path.string());
        }
        FeaturizerConfig fc;
        fc.ngram_orders = doc.at("featurizer").at("ngram_orders").get<std::vector<int>>();
        fc.dimension = doc.at("featurizer").at("dimension").get<std::uint32_t>();
        fc.hash_seed = doc.at("featurizer").at("hash_seed").get<std::uint64_t>();
        fc.max_tokens = doc.at("featurizer").at("max_tokens").get<int>();
        StudentModel model(Taxonomy::from_names(doc.at("taxonomy").get<std::vector<std::string>>()),
                           fc);
        auto weights = doc.at("weights").get<std::vector<double>>();
        auto bias = doc.at("bias").get<std::vector<double>>();
        if (weights.size() != model.weights_.size() || bias.size() != model.bias_.size()) {
            throw Error("checkpoint weight shape mismatch: " + path.string());
        }
        model.weights_ = std::move(weights);
        model.bias_ = std::move(bias);
        return model;
    }

private:
    Taxonomy taxonomy_;
    FeaturizerConfig featurizer_;
    std::vector<double> weights_;  // row-major |classes| x dimension
    std::vector<double> bias_;
};

// Mean categorical cross-entropy over pre-featurized samples, computed via
// log-sum-exp so probabilities never underflow to zero.
inline double mean_cross_entropy(const StudentModel& model,
                                 std::span<const SparseVector> features,
                                 std::span<const int> labels) {
    if (features.empty()) throw EmptyDataset();
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        std::vector<double> z = model.logits(features[i]);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - zmax);
        const double log_sum_exp = zmax + std::log(sum);
        total += log_sum_exp - z[static_cast<std::size_t>(labels[i])];
    }
    return total / static_cast<double>(features.size());
}

inline double loss(const StudentModel& model, const std::vector<LabeledSample>& samples) {
    if (samples.empty()) throw EmptyDataset();
    std::vector<SparseVector> features;
    std::vector<int> labels;
    features.reserve(samples.size());
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        features.push_back(featurize(s.text, model.featurizer()));
        labels.push_back(s.label);
    }
    return mean_cross_entropy(model, features, labels);
}

// Gradient of the mean cross-entropy over a batch. dW is dense row-major
// |classes| x dimension, matching the weight layout.
struct Gradient {
    std::vector<double> d_weights;
    std::vector<double> d_bias;
};

inline Gradient batch_gradient(const StudentModel& model,
                               std::span<const SparseVector> features,
                               std::span<const int> labels) {
    if (features.empty()) throw EmptyDataset();
    const int c = model.num_classes();
    const std::uint32_t dim = model.featurizer().dimension;
    Gradient g;
    g.d_weights.assign(static_cast<std::size_t>(c) * dim, 0.0);
    g.d_bias.assign(static_cast<std::size_t>(c), 0.0);
    const double inv_n = 1.0 / static_cast<double>(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        std::vector<double> p = model.predict_proba(features[i]);
        p[static_cast<std::size_t>(labels[i])] -= 1.0;  // p - onehot
        for (int k = 0; k < c; ++k) {
            const double dz = p[static_cast<std::size_t>(k)] * inv_n;
            g.d_bias[static_cast<std::size_t>(k)] += dz;
            for (const auto& [index, count] : features[i].entries) {
                g.d_weights[static_cast<std::size_t>(k) * dim + index] += dz * count;
            }
        }
    }
    return g;
}

struct TrainResult {
    StudentModel model;
    TrainingLog log;
};

// Mini-batch gradient descent on mean categorical cross-entropy with early
// stopping on validation loss. Training halts once the loss has failed to
// improve for patience+1 consecutive epochs; the returned model is the
// snapshot from the best epoch.
inline TrainResult train(const Taxonomy& taxonomy, const FeaturizerConfig& featurizer_config,
                         const std::vector<LabeledSample>& train_samples,
                         const std::vector<LabeledSample>& val_samples,
                         const StudentConfig& config) {
    config.validate();
    if (train_samples.empty() || val_samples.empty()) throw EmptyDataset();

    std::vector<SparseVector> train_x;
    std::vector<int> train_y;
    train_x.reserve(train_samples.size());
    train_y.reserve(train_samples.size());
    for (const auto& s : train_samples) {
        train_x.push_back(featurize(s.text, featurizer_config));
        train_y.push_back(s.label);
    }
    std::vector<SparseVector> val_x;
    std::vector<int> val_y;
    val_x.reserve(val_samples.size());
    val_y.reserve(val_samples.size());
    for (const auto& s : val_samples) {
        val_x.push_back(featurize(s.text, featurizer_config));
        val_y.push_back(s.label);
    }

    StudentModel model(taxonomy, featurizer_config);
    const int c = model.num_classes();
    const std::uint32_t dim = featurizer_config.dimension;

    TrainingLog log;
    Rng rng(config.seed);
    std::vector<std::size_t> order(train_x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    StudentModel best_model = model;
    double best_val = std::numeric_limits<double>::infinity();
    int no_improve = 0;

    // Per-batch scratch: softmax residuals (p - onehot) for every sample,
    // computed against the pre-update weights, then applied sparsely. The
    // mean-loss update touches only features present in the batch.
    std::vector<std::vector<double>> residuals;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double inv_b = 1.0 / static_cast<double>(end - start);

            residuals.clear();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                std::vector<double> z = model.logits(train_x[order[i]]);
                const double zmax = *std::max_element(z.begin(), z.end());
                double sum = 0.0;
                for (double v : z) sum += std::exp(v - zmax);
                const double lse = zmax + std::log(sum);
                batch_loss += lse - z[static_cast<std::size_t>(train_y[order[i]])];
                for (double& v : z) v = std::exp(v - lse);
                z[static_cast<std::size_t>(train_y[order[i]])] -= 1.0;
                residuals.push_back(std::move(z));
            }
            epoch_loss += batch_loss * inv_b;
            ++batches;

            auto& w = model.weights();
            auto& b = model.bias();
            for (std::size_t i = start; i < end; ++i) {
                const SparseVector& x = train_x[order[i]];
                const std::vector<double>& r = residuals[i - start];
                for (int k = 0; k < c; ++k) {
                    const double step = config.learning_rate * r[static_cast<std::size_t>(k)] * inv_b;
                    b[static_cast<std::size_t>(k)] -= step;
                    double* row = w.data() + static_cast<std::size_t>(k) * dim;
                    for (const auto& [index, count] : x.entries) {
                        row[index] -= step * count;
                    }
                }
            }
        }
        log.train_loss.push_back(epoch_loss / static_cast<double>(batches));

        const double vloss = mean_cross_entropy(model, val_x, val_y);
        log.val_loss.push_back(vloss);
        log.stopped_epoch = epoch;
        if (vloss < best_val) {
            best_val = vloss;
            best_model = model;
            log.best_epoch = epoch;
            no_improve = 0;
        } else {
            ++no_improve;
            if (no_improve > config.patience) break;
        }
    }
    return {std::move(best_model), std::move(log)};
}

}  // namespace pgkd
