#pragma once

#include <json.hpp>

#include "veinpipe/autodiff.hpp"
#include "veinpipe/dataset.hpp"
#include "veinpipe/eval.hpp"
#include "veinpipe/unet.hpp"

namespace veinpipe {

/// Training protocol constants. Batch 8 and 10 epochs are the defaults the
/// comparison protocol fixes; the optimizer is Adam and its settings are
/// recorded in the log for transparency.
struct TrainConfig {
    int batch_size = 8;
    int epochs = 10;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int checkpoint_every = 0;  // epochs; 0 disables
    std::string checkpoint_prefix;

    void validate() const {
        require(batch_size >= 1, "batch_size must be >= 1");
        require(epochs >= 1, "epochs must be >= 1");
        require(learning_rate >= 0.0, "learning_rate must be non-negative");
    }
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double mean_bce = 0.0;
    double mean_mse = 0.0;
    double val_iou = 0.0;
    double val_mae_deg = 0.0;
    double val_mae_px = 0.0;
};

struct TrainLog {
    std::string optimizer = "adam";
    double learning_rate = 0.0;
    int batch_size = 0;
    std::uint64_t seed = 0;
    std::vector<EpochStats> epochs;
};

inline nlohmann::json to_json(const TrainLog& log) {
    nlohmann::json j;
    j["optimizer"] = log.optimizer;
    j["learning_rate"] = log.learning_rate;
    j["batch_size"] = log.batch_size;
    j["seed"] = log.seed;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : log.epochs)
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"mean_loss", e.mean_loss},
                               {"mean_bce", e.mean_bce},
                               {"mean_mse", e.mean_mse},
                               {"val_iou", e.val_iou},
                               {"val_mae_deg", e.val_mae_deg},
                               {"val_mae_px", e.val_mae_px}});
    return j;
}

namespace traindetail {

template <typename T>
struct TapeCtx {
    using Act = typename Tape<T>::VarId;
    Tape<T>& tape;
    const std::unordered_map<std::string, Act>& params;
    Act batch_var;

    Act p(const std::string& name) const { return params.at(name); }

    Act input() { return batch_var; }
    Act conv_relu(const std::string& n, Act x) {
        return tape.relu(tape.conv2d(x, p(n + ".w"), p(n + ".b"), 1, Padding::Same));
    }
    Act conv_linear(const std::string& n, Act x) {
        return tape.conv2d(x, p(n + ".w"), p(n + ".b"), 1, Padding::Same);
    }
    Act maxpool(const std::string&, Act x) { return tape.maxpool2d(x); }
    Act upconv(const std::string& n, Act x) { return tape.transposed_conv2d(x, p(n + ".w"), 2); }
    Act concat(const std::string&, Act a, Act b) { return tape.concat_channels(a, b); }
    Act global_pool(const std::string&, Act x) { return tape.global_avg_pool(x); }
    Act dense_relu(const std::string& n, Act x) {
        return tape.relu(tape.dense(x, p(n + ".w"), p(n + ".b")));
    }
    Act dense_sigmoid(const std::string& n, Act x) {
        return tape.sigmoid(tape.dense(x, p(n + ".w"), p(n + ".b")));
    }
};

}  // namespace traindetail

struct TrainStepResult {
    double loss = 0.0, bce = 0.0, mse = 0.0;
    std::map<std::string, Tensor<double>> grads;
};

/// Forward + backward of the multitask loss on one batch; no weight update.
inline TrainStepResult train_step(const ModelWeights<double>& weights, const Batch<double>& batch) {
    Tape<double> tape;
    std::unordered_map<std::string, int> params;
    for (const auto& [name, t] : weights.tensors) params.emplace(name, tape.param(name, t));
    const int batch_var = tape.constant(batch.images);
    traindetail::TapeCtx<double> ctx{tape, params, batch_var};
    auto out = run_unet(ctx, weights.config);
    const int bce_var = tape.bce_with_logits(out.logits, batch.vein_masks);
    const int mse_var = tape.mse_loss(out.fossa, batch.fossa);
    const int loss_var = tape.add(bce_var, mse_var);
    TrainStepResult r;
    r.bce = tape.value(bce_var)[0];
    r.mse = tape.value(mse_var)[0];
    r.loss = tape.value(loss_var)[0];
    r.grads = tape.backward(loss_var);
    return r;
}

/// Adam on the multitask loss. Deterministic under (config, data, seed): the
/// epoch shuffles come from the seed and every reduction is ordered.
inline std::pair<ModelWeights<float>, TrainLog> train(const ModelWeights<float>& initial,
                                                      const Dataset& train_set,
                                                      const Dataset& val_set,
                                                      const TrainConfig& config) {
    config.validate();
    require(!train_set.empty(), "train requires a non-empty training set");
    const int s = initial.config.input_size;
    for (const auto& sample : train_set)
        require(sample.image.width == s && sample.image.height == s,
                "sample '" + sample.id + "' is " + std::to_string(sample.image.width) + "x" +
                    std::to_string(sample.image.height) + " but the model expects " +
                    std::to_string(s) + "x" + std::to_string(s));
    for (const auto& sample : val_set)
        require(sample.image.width == s && sample.image.height == s,
                "validation sample '" + sample.id + "' does not match the model input size");

    ModelWeights<double> weights = initial.cast<double>();
    std::vector<Tensor<double>> m, v;
    m.reserve(weights.tensors.size());
    v.reserve(weights.tensors.size());
    for (const auto& [name, t] : weights.tensors) {
        m.push_back(Tensor<double>::zeros(t.shape));
        v.push_back(Tensor<double>::zeros(t.shape));
    }

    TrainLog log;
    log.learning_rate = config.learning_rate;
    log.batch_size = config.batch_size;
    log.seed = config.seed;

    const Dataset& eval_set = val_set.empty() ? train_set : val_set;
    std::int64_t step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        deterministic_shuffle(order, rng);

        double loss_sum = 0.0, bce_sum = 0.0, mse_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                   order.begin() + static_cast<std::ptrdiff_t>(end));
            const auto batch = make_batch<double>(train_set, indices);
            const auto result = train_step(weights, batch);

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t ti = 0; ti < weights.tensors.size(); ++ti) {
                auto& [name, w] = weights.tensors[ti];
                const Tensor<double>& g = result.grads.at(name);
                for (std::int64_t i = 0; i < w.numel(); ++i) {
                    m[ti][i] = config.beta1 * m[ti][i] + (1.0 - config.beta1) * g[i];
                    v[ti][i] = config.beta2 * v[ti][i] + (1.0 - config.beta2) * g[i] * g[i];
                    const double mhat = m[ti][i] / bc1;
                    const double vhat = v[ti][i] / bc2;
                    w[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
                }
            }
            const auto nb = static_cast<double>(indices.size());
            loss_sum += result.loss * nb;
            bce_sum += result.bce * nb;
            mse_sum += result.mse * nb;
            seen += indices.size();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(seen);
        stats.mean_bce = bce_sum / static_cast<double>(seen);
        stats.mean_mse = mse_sum / static_cast<double>(seen);
        const EvalReport er = evaluate_model(weights, eval_set);
        stats.val_iou = er.iou;
        stats.val_mae_deg = er.mae_deg.value_or(0.0);
        stats.val_mae_px = er.mae_px.value_or(0.0);
        log.epochs.push_back(stats);

        if (config.checkpoint_every > 0 && !config.checkpoint_prefix.empty() &&
            epoch % config.checkpoint_every == 0)
            save_weights(weights.cast<float>(), config.checkpoint_prefix + "_epoch" +
                                                    std::to_string(epoch) + ".veinw");
    }
    return {weights.cast<float>(), log};
}

}  // namespace veinpipe
