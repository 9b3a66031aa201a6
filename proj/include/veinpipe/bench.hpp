#pragma once

#include <chrono>
#include <functional>

#include "veinpipe/eval.hpp"
#include "veinpipe/quantize.hpp"

namespace veinpipe {

/// Median of the measured run durations; FPS is its reciprocal.
inline LatencyStats latency_from_durations(const std::vector<double>& measured_s, int warmup) {
    require(!measured_s.empty(), "latency stats need at least one measured run");
    std::vector<double> sorted = measured_s;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    LatencyStats s;
    s.median_s = median;
    s.fps = 1.0 / median;
    s.runs = static_cast<int>(n);
    s.warmup = warmup;
    return s;
}

/// Run `fn(i)` warmup times (discarded), then `runs` measured times.
template <typename Fn>
LatencyStats measure_latency(Fn&& fn, int warmup, int runs) {
    require(runs >= 1, "measure_latency requires at least one run");
    for (int i = 0; i < warmup; ++i) fn(i);
    std::vector<double> durations;
    durations.reserve(static_cast<std::size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn(warmup + i);
        const auto t1 = std::chrono::steady_clock::now();
        durations.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return latency_from_durations(durations, warmup);
}

struct SchemeRow {
    Scheme scheme = Scheme::Float32;
    bool skipped = false;
    std::string skip_reason;
    LatencyStats latency;
    std::uint64_t model_bytes = 0;
    EvalReport eval;
};

struct BenchReport {
    std::vector<SchemeRow> rows;
    int threads = 1;
    int input_size = 0;
    int warmup = 0;
    int runs = 0;
    int eval_samples = 0;
};

struct BenchOptions {
    std::vector<Scheme> schemes = {Scheme::Float32, Scheme::DynamicRange, Scheme::Float16,
                                   Scheme::FullInteger, Scheme::FloatFallback};
    int warmup = 5;
    int runs = 20;
    int calib_batches = 8;
};

/// Latency + metric sweep over the requested schemes. Latency runs use
/// single-image batches cycling through the eval split; the measured region is
/// strictly the forward call (full-integer inputs are pre-quantized, matching
/// its int8 I/O contract).
inline BenchReport run_bench(const ModelWeights<float>& weights, const Dataset& eval_split,
                             const Dataset& calib_split, const BenchOptions& opts = {}) {
    require(!eval_split.empty(), "bench requires a non-empty eval split");
    require(opts.warmup >= 0 && opts.runs >= 1, "bench needs runs >= 1 and warmup >= 0");

    BenchReport report;
    report.threads = thread_count();
    report.input_size = weights.config.input_size;
    report.warmup = opts.warmup;
    report.runs = opts.runs;
    report.eval_samples = static_cast<int>(eval_split.size());

    std::vector<Tensor<float>> batches;
    batches.reserve(eval_split.size());
    for (std::size_t i = 0; i < eval_split.size(); ++i)
        batches.push_back(make_batch<float>(eval_split, {i}).images);

    const bool needs_calib =
        std::any_of(opts.schemes.begin(), opts.schemes.end(), [](Scheme s) {
            return s == Scheme::FullInteger || s == Scheme::FloatFallback;
        });
    CalibTable calib;
    if (needs_calib) {
        std::vector<Tensor<float>> calib_batches;
        const Dataset& source = calib_split.empty() ? eval_split : calib_split;
        const std::size_t n = std::min<std::size_t>(
            source.size(), static_cast<std::size_t>(std::max(1, opts.calib_batches)));
        for (std::size_t i = 0; i < n; ++i)
            calib_batches.push_back(make_batch<float>(source, {i}).images);
        calib = calibrate(weights, calib_batches);
    }

    for (Scheme scheme : opts.schemes) {
        SchemeRow row;
        row.scheme = scheme;
        if (scheme == Scheme::Float32) {
            row.model_bytes = serialize_weights(weights).size();
            row.latency = measure_latency(
                [&](int i) { forward(weights, batches[static_cast<std::size_t>(i) % batches.size()]); },
                opts.warmup, opts.runs);
            row.eval = evaluate_dataset<float>(
                [&](const Tensor<float>& b) { return forward(weights, b); }, eval_split);
        } else {
            const QuantizedModel qm =
                apply_scheme(weights, scheme, needs_calib ? &calib : nullptr);
            row.model_bytes = serialize_quantized(qm).size();
            if (scheme == Scheme::FullInteger) {
                std::vector<QuantAct> qbatches;
                qbatches.reserve(batches.size());
                const QuantParams in_qp = qm.activation_params("input");
                for (const auto& b : batches) qbatches.push_back(quantize_activation(b, in_qp));
                row.latency = measure_latency(
                    [&](int i) {
                        quantized_forward_int8(qm,
                                               qbatches[static_cast<std::size_t>(i) % qbatches.size()]);
                    },
                    opts.warmup, opts.runs);
            } else {
                row.latency = measure_latency(
                    [&](int i) {
                        quantized_forward(qm, batches[static_cast<std::size_t>(i) % batches.size()]);
                    },
                    opts.warmup, opts.runs);
            }
            row.eval = evaluate_dataset<float>(
                [&](const Tensor<float>& b) { return quantized_forward(qm, b); }, eval_split);
        }
        row.eval.latency = row.latency;
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline nlohmann::json to_json(const BenchReport& r) {
    nlohmann::json j;
    j["environment"] = {{"threads", r.threads},
                        {"input_size", r.input_size},
                        {"warmup", r.warmup},
                        {"runs", r.runs},
                        {"eval_samples", r.eval_samples}};
    j["schemes"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json rj;
        rj["scheme"] = scheme_name(row.scheme);
        if (row.skipped) {
            rj["skipped"] = true;
            rj["reason"] = row.skip_reason;
        } else {
            rj["median_latency_s"] = row.latency.median_s;
            rj["fps"] = row.latency.fps;
            rj["model_bytes"] = row.model_bytes;
            rj["metrics"] = to_json(row.eval);
        }
        j["schemes"].push_back(std::move(rj));
    }
    return j;
}

inline std::string bench_table(const BenchReport& r) {
    char line[256];
    std::string out;
    std::snprintf(line, sizeof line, "%-16s %12s %8s %12s %8s %8s %10s %10s\n", "scheme",
                  "median_s", "fps", "bytes", "iou", "dice", "mae_px", "mae_deg");
    out += line;
    out += std::string(90, '-') + "\n";
    for (const auto& row : r.rows) {
        if (row.skipped) {
            std::snprintf(line, sizeof line, "%-16s skipped: %s\n", scheme_name(row.scheme),
                          row.skip_reason.c_str());
            out += line;
            continue;
        }
        std::snprintf(line, sizeof line, "%-16s %12.6f %8.3f %12llu %8.4f %8.4f %10.3f %10.3f\n",
                      scheme_name(row.scheme), row.latency.median_s, row.latency.fps,
                      static_cast<unsigned long long>(row.model_bytes), row.eval.iou, row.eval.dice,
                      row.eval.mae_px.value_or(0.0), row.eval.mae_deg.value_or(0.0));
        out += line;
    }
    return out;
}

}  // namespace veinpipe
