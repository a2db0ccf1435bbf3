#pragma once

// Fully-connected autoencoder teachers: min-max normalization, mini-batch
// gradient descent on the reconstruction MSE, RMSE thresholds and weighted
// ensembles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "traffic.hpp"

namespace flowsift {

struct DenseLayer {
    std::vector<double> weights;  // row-major, out x in
    std::vector<double> biases;
    size_t in = 0, out = 0;

    double& w(size_t r, size_t c) { return weights[r * in + c]; }
    double w(size_t r, size_t c) const { return weights[r * in + c]; }
};

struct AutoencoderModel {
    std::vector<size_t> layer_sizes;  // input, hidden..., output
    std::vector<DenseLayer> layers;
    std::string activation = "tanh";  // hidden layers; output is linear
    std::vector<double> norm_min, norm_max;  // per-feature training range
    double rmse_threshold = 0.0;

    size_t input_size() const { return layer_sizes.front(); }
};

inline std::vector<size_t> default_ae_arch(size_t m) {
    return {m, (m + 1) / 2, (m + 3) / 4, (m + 1) / 2, m};
}

namespace detail {

inline double activate(double z, const std::string& act) {
    if (act == "tanh") return std::tanh(z);
    if (act == "sigmoid") return 1.0 / (1.0 + std::exp(-z));
    throw std::invalid_argument("unknown activation: " + act);
}

inline double activate_grad(double a, const std::string& act) {
    if (act == "tanh") return 1.0 - a * a;           // in terms of the output
    if (act == "sigmoid") return a * (1.0 - a);
    throw std::invalid_argument("unknown activation: " + act);
}

}  // namespace detail

// Maps a raw sample into [0,1] with the stored training range; out-of-range
// inference inputs clamp. Zero-variance features map to the constant 0.
inline std::vector<double> normalize_input(const AutoencoderModel& model,
                                           const FeatureVector& x) {
    if (x.size() != model.input_size())
        throw std::invalid_argument("sample does not match autoencoder input size");
    std::vector<double> z(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double span = model.norm_max[i] - model.norm_min[i];
        if (span <= 0.0) {
            z[i] = 0.0;
            continue;
        }
        z[i] = std::clamp((x[i] - model.norm_min[i]) / span, 0.0, 1.0);
    }
    return z;
}

// Forward pass in normalized space; returns per-layer activations
// (activations[0] is the input).
inline std::vector<std::vector<double>> forward_pass(const AutoencoderModel& model,
                                                     const std::vector<double>& normalized) {
    std::vector<std::vector<double>> acts;
    acts.push_back(normalized);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const DenseLayer& layer = model.layers[l];
        std::vector<double> next(layer.out);
        bool last = l + 1 == model.layers.size();
        for (size_t r = 0; r < layer.out; ++r) {
            double z = layer.biases[r];
            for (size_t c = 0; c < layer.in; ++c) z += layer.w(r, c) * acts.back()[c];
            next[r] = last ? z : detail::activate(z, model.activation);
        }
        acts.push_back(std::move(next));
    }
    return acts;
}

inline std::vector<double> reconstruct(const AutoencoderModel& model, const FeatureVector& x) {
    return forward_pass(model, normalize_input(model, x)).back();
}

// RMSE between a sample and its reconstruction, in normalized space.
inline double reconstruction_error(const AutoencoderModel& model, const FeatureVector& x) {
    std::vector<double> z = normalize_input(model, x);
    std::vector<double> out = forward_pass(model, z).back();
    double sq = 0.0;
    for (size_t i = 0; i < z.size(); ++i) sq += (out[i] - z[i]) * (out[i] - z[i]);
    return std::sqrt(sq / double(z.size()));
}

namespace detail {

// Gradient of the squared-error loss 1/m * sum (out - target)^2 for one
// normalized sample, accumulated into grads (same shapes as layers).
inline double backprop_sample(const AutoencoderModel& model, const std::vector<double>& z,
                              std::vector<DenseLayer>& grads) {
    auto acts = forward_pass(model, z);
    const std::vector<double>& out = acts.back();
    size_t m = z.size();
    double loss = 0.0;
    std::vector<double> delta(out.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double diff = out[i] - z[i];
        loss += diff * diff;
        delta[i] = 2.0 * diff / double(m);  // linear output layer
    }
    loss /= double(m);

    for (int l = int(model.layers.size()) - 1; l >= 0; --l) {
        const DenseLayer& layer = model.layers[l];
        DenseLayer& g = grads[l];
        const std::vector<double>& a_in = acts[l];
        for (size_t r = 0; r < layer.out; ++r) {
            g.biases[r] += delta[r];
            for (size_t c = 0; c < layer.in; ++c) g.w(r, c) += delta[r] * a_in[c];
        }
        if (l == 0) break;
        std::vector<double> prev(layer.in, 0.0);
        for (size_t c = 0; c < layer.in; ++c) {
            double s = 0.0;
            for (size_t r = 0; r < layer.out; ++r) s += layer.w(r, c) * delta[r];
            prev[c] = s * activate_grad(a_in[c], model.activation);
        }
        delta = std::move(prev);
    }
    return loss;
}

}  // namespace detail

// Squared-error loss of one normalized sample (the quantity training descends).
inline double sample_loss(const AutoencoderModel& model, const std::vector<double>& z) {
    auto out = forward_pass(model, z).back();
    double sq = 0.0;
    for (size_t i = 0; i < z.size(); ++i) sq += (out[i] - z[i]) * (out[i] - z[i]);
    return sq / double(z.size());
}

// Analytic gradients of sample_loss w.r.t. every weight and bias.
inline std::vector<DenseLayer> sample_gradients(const AutoencoderModel& model,
                                                const std::vector<double>& z,
                                                double* loss_out = nullptr) {
    std::vector<DenseLayer> grads;
    for (const auto& layer : model.layers) {
        DenseLayer g;
        g.in = layer.in;
        g.out = layer.out;
        g.weights.assign(layer.weights.size(), 0.0);
        g.biases.assign(layer.biases.size(), 0.0);
        grads.push_back(std::move(g));
    }
    double loss = detail::backprop_sample(model, z, grads);
    if (loss_out) *loss_out = loss;
    return grads;
}

struct TrainOptions {
    std::vector<size_t> arch;  // empty -> default_ae_arch(m)
    uint32_t epochs = 400;
    double learning_rate = 0.05;
    double momentum = 0.9;
    uint32_t batch_size = 16;
    std::string activation = "tanh";
    // Deterministic multi-start: retry with derived seeds when a run lands on
    // a plateau, keep the best final loss.
    uint32_t restarts = 8;
    double good_enough_ratio = 0.05;  // final/initial loss that stops retrying
};

struct TrainDiagnostics {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

struct RunResult {
    std::vector<DenseLayer> layers;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// One optimization run from a fresh init.
inline RunResult train_run(AutoencoderModel& model, const std::vector<std::vector<double>>& Z,
                           const TrainOptions& opts, uint64_t run_seed,
                           const std::vector<double>& target_mean) {
    size_t m = model.layer_sizes.front();
    std::mt19937_64 rng(run_seed);
    model.layers.clear();
    for (size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        DenseLayer layer;
        layer.in = model.layer_sizes[l];
        layer.out = model.layer_sizes[l + 1];
        layer.weights.resize(layer.in * layer.out);
        layer.biases.assign(layer.out, 0.0);
        double bound = std::sqrt(6.0 / double(layer.in + layer.out));
        std::uniform_real_distribution<double> init(-bound, bound);
        for (auto& w : layer.weights) w = init(rng);
        model.layers.push_back(std::move(layer));
    }
    // Output bias starts at the target mean.
    for (size_t i = 0; i < m; ++i) model.layers.back().biases[i] = target_mean[i];

    std::vector<size_t> order(Z.size());
    std::iota(order.begin(), order.end(), 0);

    auto dataset_loss = [&]() {
        double total = 0.0;
        for (const auto& z : Z) {
            auto out = forward_pass(model, z).back();
            double sq = 0.0;
            for (size_t i = 0; i < m; ++i) sq += (out[i] - z[i]) * (out[i] - z[i]);
            total += sq / double(m);
        }
        return total / double(Z.size());
    };

    std::vector<DenseLayer> velocity;
    for (const auto& layer : model.layers) {
        DenseLayer v;
        v.in = layer.in;
        v.out = layer.out;
        v.weights.assign(layer.weights.size(), 0.0);
        v.biases.assign(layer.biases.size(), 0.0);
        velocity.push_back(std::move(v));
    }

    RunResult res;
    res.initial_loss = dataset_loss();
    for (uint32_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t start = 0; start < order.size(); start += opts.batch_size) {
            size_t end = std::min(order.size(), start + opts.batch_size);
            std::vector<DenseLayer> grads;
            for (const auto& layer : model.layers) {
                DenseLayer g;
                g.in = layer.in;
                g.out = layer.out;
                g.weights.assign(layer.weights.size(), 0.0);
                g.biases.assign(layer.biases.size(), 0.0);
                grads.push_back(std::move(g));
            }
            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i)
                batch_loss += backprop_sample(model, Z[order[i]], grads);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_autoencoder: loss diverged (non-finite)");
            double scale = opts.learning_rate / double(end - start);
            for (size_t l = 0; l < model.layers.size(); ++l) {
                for (size_t k = 0; k < model.layers[l].weights.size(); ++k) {
                    double& v = velocity[l].weights[k];
                    v = opts.momentum * v - scale * grads[l].weights[k];
                    model.layers[l].weights[k] += v;
                }
                for (size_t k = 0; k < model.layers[l].biases.size(); ++k) {
                    double& v = velocity[l].biases[k];
                    v = opts.momentum * v - scale * grads[l].biases[k];
                    model.layers[l].biases[k] += v;
                }
            }
        }
    }
    res.final_loss = dataset_loss();
    res.layers = model.layers;
    return res;
}

}  // namespace detail

inline AutoencoderModel train_autoencoder(const std::vector<FeatureVector>& X,
                                          const TrainOptions& opts, uint64_t seed,
                                          TrainDiagnostics* diag = nullptr) {
    if (X.size() < 10) throw std::invalid_argument("train_autoencoder: need at least 10 samples");
    size_t m = X[0].size();
    for (const auto& x : X)
        if (x.size() != m) throw std::invalid_argument("inconsistent sample width");

    AutoencoderModel model;
    model.layer_sizes = opts.arch.empty() ? default_ae_arch(m) : opts.arch;
    if (model.layer_sizes.front() != m || model.layer_sizes.back() != m)
        throw std::invalid_argument("autoencoder input and output sizes must equal m");
    model.activation = opts.activation;

    model.norm_min.assign(m, std::numeric_limits<double>::infinity());
    model.norm_max.assign(m, -std::numeric_limits<double>::infinity());
    for (const auto& x : X)
        for (size_t i = 0; i < m; ++i) {
            model.norm_min[i] = std::min(model.norm_min[i], x[i]);
            model.norm_max[i] = std::max(model.norm_max[i], x[i]);
        }
    for (size_t i = 0; i < m; ++i)
        if (model.norm_max[i] <= model.norm_min[i] && diag)
            diag->warnings.push_back("feature " + std::to_string(i) +
                                     " has zero variance; normalized to constant 0");

    std::vector<std::vector<double>> Z(X.size());
    for (size_t i = 0; i < X.size(); ++i) Z[i] = normalize_input(model, X[i]);
    std::vector<double> target_mean(m, 0.0);
    for (const auto& z : Z)
        for (size_t i = 0; i < m; ++i) target_mean[i] += z[i];
    for (auto& v : target_mean) v /= double(Z.size());

    detail::RunResult best;
    bool have_best = false;
    uint32_t runs = std::max<uint32_t>(1, opts.restarts);
    for (uint32_t r = 0; r < runs; ++r) {
        uint64_t run_seed = r == 0 ? seed : detail::mix64(seed + 0x9e3779b97f4a7c15ULL * r);
        detail::RunResult res = detail::train_run(model, Z, opts, run_seed, target_mean);
        if (!have_best || res.final_loss < best.final_loss) {
            best = std::move(res);
            have_best = true;
        }
        if (best.final_loss <= best.initial_loss * opts.good_enough_ratio) break;
    }
    model.layers = std::move(best.layers);
    if (diag) {
        diag->initial_loss = best.initial_loss;
        diag->final_loss = best.final_loss;
    }
    return model;
}

// T = (1 - target_fpr) quantile of benign validation reconstruction errors.
inline double calibrate_threshold(const AutoencoderModel& model,
                                  const std::vector<FeatureVector>& X_val, double target_fpr) {
    if (target_fpr <= 0.0 || target_fpr >= 1.0)
        throw std::invalid_argument("target_fpr must lie in (0,1)");
    if (X_val.empty()) throw std::invalid_argument("calibrate_threshold: empty validation set");
    std::vector<double> res;
    res.reserve(X_val.size());
    for (const auto& x : X_val) res.push_back(reconstruction_error(model, x));
    std::sort(res.begin(), res.end());
    size_t allowed = size_t(target_fpr * double(res.size()));
    size_t idx = res.size() - 1 - std::min(allowed, res.size() - 1);
    return res[idx];
}

struct Ensemble {
    std::vector<AutoencoderModel> members;
    std::vector<double> weights;

    void validate() const {
        if (members.size() != weights.size())
            throw std::invalid_argument("ensemble weights/members mismatch");
        double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
        for (double w : weights)
            if (w < 0.0 || w > 1.0) throw std::invalid_argument("ensemble weight outside [0,1]");
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("ensemble weights must sum to 1");
    }
    size_t size() const { return members.size(); }
};

inline Ensemble train_ensemble(const std::vector<FeatureVector>& X_train,
                               const std::vector<FeatureVector>& X_val, size_t r,
                               const TrainOptions& opts, double target_fpr, uint64_t seed) {
    Ensemble ens;
    for (size_t u = 0; u < r; ++u) {
        AutoencoderModel member =
            train_autoencoder(X_train, opts, detail::mix64(seed + u * 0x9e3779b97f4a7c15ULL));
        member.rmse_threshold = calibrate_threshold(member, X_val, target_fpr);
        ens.members.push_back(std::move(member));
    }
    ens.weights.assign(r, 1.0 / double(r));
    return ens;
}

struct EnsembleVote {
    std::vector<int> indicators;  // l_u = 1{RE_u > T_u}
    int label = 0;                // 1{sum w_u l_u > 0.5}
};

inline EnsembleVote ensemble_label(const Ensemble& ens, const FeatureVector& x) {
    ens.validate();
    EnsembleVote v;
    double agg = 0.0;
    for (size_t u = 0; u < ens.size(); ++u) {
        int l = reconstruction_error(ens.members[u], x) > ens.members[u].rmse_threshold ? 1 : 0;
        v.indicators.push_back(l);
        agg += ens.weights[u] * l;
    }
    v.label = agg > 0.5 ? 1 : 0;
    return v;
}

// Indicator aggregation shared with leaf labeling: strict > 0.5.
inline int weighted_indicator_label(const std::vector<int>& indicators,
                                    const std::vector<double>& weights) {
    double agg = 0.0;
    for (size_t u = 0; u < indicators.size(); ++u) agg += weights[u] * indicators[u];
    return agg > 0.5 ? 1 : 0;
}

}  // namespace flowsift
