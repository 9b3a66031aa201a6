#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include <json.hpp>

#include "veinpipe/tensor.hpp"

namespace veinpipe {

/// Mean binary cross entropy of pre-sigmoid scores against {0,1} targets.
/// The sigmoid output is clamped to [1e-7, 1 - 1e-7] before the logs.
template <typename T>
double bce(const Tensor<T>& logits, const Tensor<T>& targets) {
    require(logits.shape == targets.shape,
            "bce shape mismatch: logits " + shape_to_string(logits.shape) + " vs targets " +
                shape_to_string(targets.shape));
    const double lo = 1e-7, hi = 1.0 - 1e-7;
    double acc = 0.0;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const double y = static_cast<double>(targets[i]);
        const double f = std::clamp(sigmoid_scalar(static_cast<double>(logits[i])), lo, hi);
        acc -= y * std::log(f) + (1.0 - y) * std::log(1.0 - f);
    }
    return acc / static_cast<double>(logits.numel());
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape == b.shape, "mse shape mismatch: " + shape_to_string(a.shape) + " vs " +
                                    shape_to_string(b.shape));
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

template <typename T>
double mae(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape == b.shape, "mae shape mismatch: " + shape_to_string(a.shape) + " vs " +
                                    shape_to_string(b.shape));
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return acc / static_cast<double>(a.numel());
}

/// Unweighted BCE + MSE.
template <typename T>
double multitask_loss(const Tensor<T>& logits, const Tensor<T>& mask_target,
                      const Tensor<T>& fossa_pred, const Tensor<T>& fossa_target) {
    return bce(logits, mask_target) + mse(fossa_pred, fossa_target);
}

struct ConfusionCounts {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::int64_t total() const { return tp + tn + fp + fn; }
};

/// Pixel confusion between two binary masks (values strictly 0 or 1).
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& gt) {
    require(pred.shape == gt.shape, "confusion shape mismatch: " + shape_to_string(pred.shape) +
                                        " vs " + shape_to_string(gt.shape));
    ConfusionCounts c;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const T p = pred[i], g = gt[i];
        require((p == T(0) || p == T(1)) && (g == T(0) || g == T(1)),
                "confusion requires binary (0/1) masks");
        if (p == T(1) && g == T(1))
            ++c.tp;
        else if (p == T(0) && g == T(0))
            ++c.tn;
        else if (p == T(1))
            ++c.fp;
        else
            ++c.fn;
    }
    return c;
}

struct LatencyStats {
    double median_s = 0.0;
    double fps = 0.0;
    int runs = 0;
    int warmup = 0;
};

/// Metric bundle for one (model, dataset, scheme) evaluation.
/// mse/mae are the normalized regression values; the _px/_deg variants carry
/// the same errors in pixels and degrees.
struct EvalReport {
    double iou = 0.0;
    double dice = 0.0;
    double psnr_db = 0.0;
    double pixel_accuracy = 0.0;
    double f1 = 0.0;
    std::optional<double> mse;
    std::optional<double> mae;
    std::optional<double> mse_px, mae_px;
    std::optional<double> mse_deg, mae_deg;
    std::optional<double> multitask_loss;
    std::optional<LatencyStats> latency;
};

struct SegmentationMetrics {
    double iou = 0.0, dice = 0.0, f1 = 0.0, pixel_accuracy = 0.0, psnr_db = 0.0;
};

/// Accuracy/IoU/Dice/F1 from pixel counts, PSNR from the 0/255-scaled mask MSE.
/// An empty union counts as perfect agreement (IoU = Dice = F1 = 1).
inline SegmentationMetrics segmentation_metrics(const ConfusionCounts& c) {
    require(c.tp >= 0 && c.tn >= 0 && c.fp >= 0 && c.fn >= 0 && c.total() > 0,
            "segmentation_metrics requires non-empty counts");
    SegmentationMetrics m;
    const double total = static_cast<double>(c.total());
    m.pixel_accuracy = static_cast<double>(c.tp + c.tn) / total;
    const std::int64_t uni = c.tp + c.fp + c.fn;
    m.iou = uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
    const std::int64_t dice_den = 2 * c.tp + c.fp + c.fn;
    m.dice = dice_den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(dice_den);
    m.f1 = m.dice;
    // masks scaled to 0/255, so each mismatched pixel contributes 255^2
    const double mse255 = 255.0 * 255.0 * static_cast<double>(c.fp + c.fn) / total;
    m.psnr_db = mse255 == 0.0 ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(255.0 * 255.0 / mse255);
    return m;
}

template <typename T>
EvalReport metrics(const ConfusionCounts& counts, const Tensor<T>& pred, const Tensor<T>& gt) {
    require(pred.shape == gt.shape, "metrics mask shape mismatch");
    const SegmentationMetrics m = segmentation_metrics(counts);
    EvalReport r;
    r.iou = m.iou;
    r.dice = m.dice;
    r.f1 = m.f1;
    r.pixel_accuracy = m.pixel_accuracy;
    r.psnr_db = m.psnr_db;
    return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["iou"] = r.iou;
    j["dice"] = r.dice;
    j["psnr_db"] = std::isinf(r.psnr_db) ? nlohmann::json("inf") : nlohmann::json(r.psnr_db);
    j["pixel_accuracy"] = r.pixel_accuracy;
    j["f1"] = r.f1;
    auto put = [&j](const char* key, const std::optional<double>& v) {
        j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    put("mse", r.mse);
    put("mae", r.mae);
    put("mse_px", r.mse_px);
    put("mae_px", r.mae_px);
    put("mse_deg", r.mse_deg);
    put("mae_deg", r.mae_deg);
    put("multitask_loss", r.multitask_loss);
    if (r.latency) {
        j["latency"] = {{"median_s", r.latency->median_s},
                        {"fps", r.latency->fps},
                        {"runs", r.latency->runs},
                        {"warmup", r.latency->warmup}};
    }
    return j;
}

}  // namespace veinpipe
