#pragma once

#include "veinpipe/dataset.hpp"
#include "veinpipe/losses.hpp"
#include "veinpipe/unet.hpp"

namespace veinpipe {

/// Orientation error between two angles in [0, 180), in degrees.
inline double axial_distance_deg(double a, double b) {
    double d = std::abs(a - b);
    d = std::fmod(d, 180.0);
    return std::min(d, 180.0 - d);
}

/// Evaluate any forward function over a dataset, one single-image batch per
/// sample. Segmentation metrics are aggregated over all pixels of the split;
/// regression errors are averaged per sample. `fwd` maps a 1 x 1 x S x S float
/// batch to a ForwardResult<T>.
template <typename T, typename FwdFn>
EvalReport evaluate_dataset(FwdFn&& fwd, const Dataset& ds) {
    require(!ds.empty(), "evaluate_dataset requires a non-empty dataset");
    ConfusionCounts counts;
    double bce_sum = 0.0;
    double mse_norm_sum = 0.0, mae_norm_sum = 0.0;
    double mse_px_sum = 0.0, mae_px_sum = 0.0;
    double mse_deg_sum = 0.0, mae_deg_sum = 0.0;
    const int s = ds.front().image.width;

    for (const auto& sample : ds) {
        const auto batch = make_batch<T>(ds, {static_cast<std::size_t>(&sample - ds.data())});
        const ForwardResult<T> out = fwd(batch.images);
        const GrayImage pred_mask = logits_to_mask(out.logits);
        const auto pred_t = mask_to_tensor<T>(pred_mask);
        const auto c = confusion(pred_t, batch.vein_masks);
        counts.tp += c.tp;
        counts.tn += c.tn;
        counts.fp += c.fp;
        counts.fn += c.fn;
        bce_sum += bce(out.logits, batch.vein_masks);
        mse_norm_sum += mse(out.fossa, batch.fossa);
        mae_norm_sum += mae(out.fossa, batch.fossa);

        const double pcx = static_cast<double>(out.fossa.at2(0, 0)) * s;
        const double pcy = static_cast<double>(out.fossa.at2(0, 1)) * s;
        double pdeg = static_cast<double>(out.fossa.at2(0, 2)) * 180.0;
        if (pdeg >= 180.0) pdeg = 0.0;
        const double dx = pcx - sample.cx, dy = pcy - sample.cy;
        mae_px_sum += (std::abs(dx) + std::abs(dy)) / 2.0;
        mse_px_sum += (dx * dx + dy * dy) / 2.0;
        const double ddeg = axial_distance_deg(pdeg, sample.angle_deg);
        mae_deg_sum += ddeg;
        mse_deg_sum += ddeg * ddeg;
    }

    const double n = static_cast<double>(ds.size());
    const auto seg = segmentation_metrics(counts);
    EvalReport r;
    r.iou = seg.iou;
    r.dice = seg.dice;
    r.f1 = seg.f1;
    r.pixel_accuracy = seg.pixel_accuracy;
    r.psnr_db = seg.psnr_db;
    r.mse = mse_norm_sum / n;
    r.mae = mae_norm_sum / n;
    r.mse_px = mse_px_sum / n;
    r.mae_px = mae_px_sum / n;
    r.mse_deg = mse_deg_sum / n;
    r.mae_deg = mae_deg_sum / n;
    r.multitask_loss = bce_sum / n + mse_norm_sum / n;
    return r;
}

template <typename T>
EvalReport evaluate_model(const ModelWeights<T>& weights, const Dataset& ds) {
    return evaluate_dataset<T>(
        [&weights](const Tensor<T>& batch) { return forward(weights, batch); }, ds);
}

/// Segmentation-only metrics for externally produced masks (any predictor's
/// output) against the dataset's ground truth.
inline EvalReport evaluate_external_masks(const Dataset& ds,
                                          const std::filesystem::path& mask_dir) {
    require(!ds.empty(), "evaluate_external_masks requires a non-empty dataset");
    ConfusionCounts counts;
    for (const auto& sample : ds) {
        const auto path = mask_dir / (sample.id + ".png");
        GrayImage pred = read_gray_png(path);
        require(pred.width == sample.image.width && pred.height == sample.image.height,
                "mask " + path.string() + " does not match sample dimensions");
        // external masks may be anti-aliased; binarize at 128
        for (auto& p : pred.pixels) p = p >= 128 ? 255 : 0;
        const auto c = confusion(mask_to_tensor<float>(pred), mask_to_tensor<float>(sample.vein_mask));
        counts.tp += c.tp;
        counts.tn += c.tn;
        counts.fp += c.fp;
        counts.fn += c.fn;
    }
    const auto seg = segmentation_metrics(counts);
    EvalReport r;
    r.iou = seg.iou;
    r.dice = seg.dice;
    r.f1 = seg.f1;
    r.pixel_accuracy = seg.pixel_accuracy;
    r.psnr_db = seg.psnr_db;
    return r;
}

}  // namespace veinpipe
