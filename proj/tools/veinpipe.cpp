// veinpipe: end-to-end forearm vein segmentation pipeline on synthetic or
// directory datasets: data generation, training, evaluation, post-training
// quantization, latency benchmarking, single-image inference, angle labeling.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include <veinpipe/augment.hpp>
#include <veinpipe/bench.hpp>
#include <veinpipe/eval.hpp>
#include <veinpipe/postprocess.hpp>
#include <veinpipe/quantize.hpp>
#include <veinpipe/train.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace veinpipe;

namespace {

void write_json_atomic(const json& j, const fs::path& path) {
    binio::atomic_write_file(path, j.dump(2) + "\n");
}

Dataset load_with_preprocess(const fs::path& root, bool apply_clahe) {
    Dataset ds = load_dataset(root);
    if (apply_clahe)
        for (auto& s : ds) s.image = clahe(s.image);
    return ds;
}

Dataset pick_split(const Dataset& ds, const std::string& which, std::uint64_t split_seed) {
    if (which == "all") return ds;
    const auto manifest = split(ds, split_seed);
    const auto& ids = which == "train" ? manifest.train
                      : which == "val" ? manifest.val
                                       : manifest.test;
    return select_by_ids(ds, ids);
}

// a weights file may hold either a float32 model or a quantized one; both
// expose the same forward contract
struct AnyModel {
    std::optional<ModelWeights<float>> floats;
    std::optional<QuantizedModel> quantized;

    static AnyModel load(const fs::path& path) {
        const auto bytes = binio::read_file(path);
        AnyModel m;
        if (bytes.size() >= 5 && std::memcmp(bytes.data(), kQuantizedMagic, 5) == 0)
            m.quantized = load_quantized(path);
        else
            m.floats = load_weights<float>(path);
        return m;
    }

    const UNetConfig& config() const { return floats ? floats->config : quantized->config; }

    ForwardResult<float> run(const Tensor<float>& batch) const {
        return floats ? forward(*floats, batch) : quantized_forward(*quantized, batch);
    }
};

int threads_from(const CLI::Option* opt, int flag_value) {
    if (opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("VEINPIPE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return flag_value;
}

struct TrainFlags {
    std::string data, config_path, out_weights, log_path;
    int epochs = 10, batch = 8;
    double lr = TrainConfig{}.learning_rate;
    std::uint64_t seed = 0, split_seed = 0;
    int input_size = 64, depth = 3, base = 8, hidden = 64;
    bool use_clahe = false;
    int checkpoint_every = 0;
    std::string checkpoint_prefix;
};

int run_train(const TrainFlags& f, const CLI::App& cmd) {
    UNetConfig mc;
    mc.input_size = f.input_size;
    mc.depth = f.depth;
    mc.base_channels = f.base;
    mc.regression_hidden = f.hidden;
    TrainConfig tc;
    tc.epochs = f.epochs;
    tc.batch_size = f.batch;
    tc.learning_rate = f.lr;
    tc.seed = f.seed;
    tc.checkpoint_every = f.checkpoint_every;
    tc.checkpoint_prefix = f.checkpoint_prefix;

    if (!f.config_path.empty()) {
        const auto raw = binio::read_file(f.config_path);
        const json j = json::parse(std::string(raw.begin(), raw.end()));
        if (j.contains("model")) {
            const auto& m = j["model"];
            mc.input_size = m.value("input_size", mc.input_size);
            mc.depth = m.value("depth", mc.depth);
            mc.base_channels = m.value("base_channels", mc.base_channels);
            mc.regression_hidden = m.value("regression_hidden", mc.regression_hidden);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            tc.batch_size = t.value("batch_size", tc.batch_size);
            tc.epochs = t.value("epochs", tc.epochs);
            tc.learning_rate = t.value("learning_rate", tc.learning_rate);
            tc.seed = t.value("seed", tc.seed);
        }
        // explicit flags win over the config file
        const std::vector<std::pair<std::string, std::function<void()>>> overrides = {
            {"--epochs", [&] { tc.epochs = f.epochs; }},
            {"--batch", [&] { tc.batch_size = f.batch; }},
            {"--lr", [&] { tc.learning_rate = f.lr; }},
            {"--seed", [&] { tc.seed = f.seed; }},
            {"--input-size", [&] { mc.input_size = f.input_size; }},
            {"--depth", [&] { mc.depth = f.depth; }},
            {"--base", [&] { mc.base_channels = f.base; }},
            {"--hidden", [&] { mc.regression_hidden = f.hidden; }}};
        for (const auto& [flag, apply] : overrides)
            if (cmd.get_option(flag)->count() > 0) apply();
    }
    mc.validate();
    tc.validate();

    const Dataset ds = load_with_preprocess(f.data, f.use_clahe);
    const auto manifest = split(ds, f.split_seed);
    const Dataset train_set = select_by_ids(ds, manifest.train);
    const Dataset val_set = select_by_ids(ds, manifest.val);

    const auto initial = build<float>(mc, tc.seed);
    auto [weights, log] = train(initial, train_set, val_set, tc);
    save_weights(weights, f.out_weights);
    if (!f.log_path.empty()) write_json_atomic(to_json(log), f.log_path);
    const auto& last = log.epochs.back();
    std::cout << "trained " << tc.epochs << " epochs on " << train_set.size()
              << " samples; final loss " << last.mean_loss << ", val IoU " << last.val_iou
              << "\nweights: " << f.out_weights << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forearm vein segmentation + antecubital fossa localization pipeline"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    int synth_count = 64, synth_size = 64;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    double synth_amin = SynthParams{}.angle_min_deg, synth_amax = SynthParams{}.angle_max_deg;
    synth->add_option("--count", synth_count, "number of samples")
        ->check(CLI::PositiveNumber)
        ->required();
    synth->add_option("--size", synth_size, "image size in pixels (square)")
        ->check(CLI::Range(32, 4096));
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--angle-min", synth_amin, "minimum arm angle in degrees");
    synth->add_option("--angle-max", synth_amax, "maximum arm angle in degrees");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train the multitask model");
    TrainFlags tf;
    train_cmd->add_option("--data", tf.data, "dataset directory")->required();
    train_cmd->add_option("--config", tf.config_path, "JSON config file (flags override)");
    train_cmd->add_option("--out-weights", tf.out_weights, "output weights file")->required();
    train_cmd->add_option("--log", tf.log_path, "training log JSON");
    train_cmd->add_option("--epochs", tf.epochs)->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", tf.batch)->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", tf.lr)->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--seed", tf.seed);
    train_cmd->add_option("--split-seed", tf.split_seed);
    train_cmd->add_option("--input-size", tf.input_size);
    train_cmd->add_option("--depth", tf.depth);
    train_cmd->add_option("--base", tf.base);
    train_cmd->add_option("--hidden", tf.hidden);
    train_cmd->add_flag("--clahe", tf.use_clahe, "apply CLAHE at load time");
    train_cmd->add_option("--checkpoint-every", tf.checkpoint_every);
    train_cmd->add_option("--checkpoint-prefix", tf.checkpoint_prefix);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model or external masks");
    std::string eval_weights, eval_masks, eval_data, eval_split = "test", eval_report;
    std::uint64_t eval_split_seed = 0;
    bool eval_clahe = false;
    eval_cmd->add_option("--weights", eval_weights, "model weights (float32 or quantized)");
    eval_cmd->add_option("--masks", eval_masks,
                         "directory of externally predicted masks (<id>.png)");
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--split", eval_split)
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval_cmd->add_option("--split-seed", eval_split_seed);
    eval_cmd->add_option("--report", eval_report, "write the metric report JSON here");
    eval_cmd->add_flag("--clahe", eval_clahe);

    // ---- quantize ----
    auto* quant_cmd = app.add_subcommand("quantize", "apply a post-training compression scheme");
    std::string q_weights, q_scheme, q_out, q_calib;
    int q_calib_count = 8;
    bool q_clahe = false;
    quant_cmd->add_option("--weights", q_weights)->required();
    quant_cmd->add_option("--scheme", q_scheme)
        ->required()
        ->check(CLI::IsMember({"dynamic-range", "float16", "full-int", "float-fallback"}));
    quant_cmd->add_option("--out", q_out)->required();
    quant_cmd->add_option("--calib", q_calib, "dataset directory for activation calibration");
    quant_cmd->add_option("--calib-count", q_calib_count)->check(CLI::PositiveNumber);
    quant_cmd->add_flag("--clahe", q_clahe);

    // ---- bench ----
    auto* bench_cmd = app.add_subcommand("bench", "latency + metric sweep over schemes");
    std::string b_weights, b_data, b_schemes = "all", b_report, b_split = "test";
    int b_warmup = 5, b_runs = 20, b_threads = 1, b_calib_count = 8;
    std::uint64_t b_split_seed = 0;
    bool b_clahe = false;
    bench_cmd->add_option("--weights", b_weights)->required();
    bench_cmd->add_option("--data", b_data)->required();
    bench_cmd->add_option(
        "--schemes", b_schemes,
        "'all' or comma list of: float32,dynamic-range,float16,full-int,float-fallback");
    bench_cmd->add_option("--warmup", b_warmup)->check(CLI::NonNegativeNumber);
    bench_cmd->add_option("--runs", b_runs)->check(CLI::PositiveNumber);
    auto* threads_opt =
        bench_cmd
            ->add_option("--threads", b_threads, "worker threads (env VEINPIPE_THREADS as fallback)")
            ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--report", b_report, "write the BenchReport JSON here");
    bench_cmd->add_option("--split", b_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
    bench_cmd->add_option("--split-seed", b_split_seed);
    bench_cmd->add_option("--calib-count", b_calib_count)->check(CLI::PositiveNumber);
    bench_cmd->add_flag("--clahe", b_clahe);

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "segment one image and render the fossa overlay");
    std::string i_weights, i_image, i_overlay, i_json;
    double i_frac_w = 0.4, i_frac_h = 0.25;
    bool i_clahe = false;
    infer_cmd->add_option("--weights", i_weights)->required();
    infer_cmd->add_option("--image", i_image)->required();
    infer_cmd->add_option("--overlay-out", i_overlay)->required();
    infer_cmd->add_option("--json-out", i_json, "sidecar JSON (default: overlay path + .json)");
    infer_cmd->add_option("--roi-frac-w", i_frac_w,
                          "ROI width as a fraction of image (>=1 keeps all veins)");
    infer_cmd->add_option("--roi-frac-h", i_frac_h,
                          "ROI height as a fraction of image (>=1 keeps all veins)");
    infer_cmd->add_flag("--clahe", i_clahe);

    // ---- label-angles ----
    auto* label_cmd = app.add_subcommand("label-angles", "derive arm angles from mask PNGs");
    std::string l_masks, l_csv;
    label_cmd->add_option("--masks", l_masks, "directory of arm mask PNGs")->required();
    label_cmd->add_option("--csv-out", l_csv)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            SynthParams sp;
            sp.angle_min_deg = synth_amin;
            sp.angle_max_deg = synth_amax;
            const auto ds = synth_generate(synth_count, synth_size, synth_seed, sp);
            save_dataset(ds, synth_out);
            std::cout << "wrote " << ds.size() << " samples to " << synth_out << "\n";
            return 0;
        }

        if (*train_cmd) return run_train(tf, *train_cmd);

        if (*eval_cmd) {
            if (eval_weights.empty() == eval_masks.empty())
                throw std::invalid_argument("eval needs exactly one of --weights or --masks");
            const Dataset ds = load_with_preprocess(eval_data, eval_clahe);
            const Dataset subset = pick_split(ds, eval_split, eval_split_seed);
            require(!subset.empty(), "selected split is empty");
            EvalReport report;
            if (!eval_masks.empty()) {
                report = evaluate_external_masks(subset, eval_masks);
            } else {
                const auto model = AnyModel::load(eval_weights);
                report = evaluate_dataset<float>(
                    [&model](const Tensor<float>& b) { return model.run(b); }, subset);
            }
            const json j = to_json(report);
            if (!eval_report.empty()) write_json_atomic(j, eval_report);
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (*quant_cmd) {
            const auto weights = load_weights<float>(q_weights);
            const Scheme scheme = *parse_scheme(q_scheme);
            CalibTable calib;
            const bool integer = scheme == Scheme::FullInteger || scheme == Scheme::FloatFallback;
            if (integer) {
                if (q_calib.empty())
                    throw std::invalid_argument(std::string(scheme_name(scheme)) +
                                                " quantization requires calibration data "
                                                "(--calib <dataset dir>)");
                const Dataset cal = load_with_preprocess(q_calib, q_clahe);
                require(!cal.empty(), "calibration dataset is empty");
                std::vector<Tensor<float>> batches;
                const std::size_t n =
                    std::min<std::size_t>(cal.size(), static_cast<std::size_t>(q_calib_count));
                for (std::size_t i = 0; i < n; ++i)
                    batches.push_back(make_batch<float>(cal, {i}).images);
                calib = calibrate(weights, batches);
            }
            const auto qm = apply_scheme(weights, scheme, integer ? &calib : nullptr);
            save_quantized(qm, q_out);
            const auto in_bytes = fs::file_size(q_weights);
            const auto out_bytes = fs::file_size(q_out);
            std::cout << scheme_name(scheme) << ": " << in_bytes << " -> " << out_bytes
                      << " bytes ("
                      << (100.0 * static_cast<double>(out_bytes) / static_cast<double>(in_bytes))
                      << "%)\n";
            return 0;
        }

        if (*bench_cmd) {
            set_thread_count(threads_from(threads_opt, b_threads));
            const auto weights = load_weights<float>(b_weights);
            const Dataset ds = load_with_preprocess(b_data, b_clahe);
            const auto manifest = split(ds, b_split_seed);
            const Dataset eval_split_ds = pick_split(ds, b_split, b_split_seed);
            require(!eval_split_ds.empty(), "selected split is empty");
            const Dataset calib_ds = select_by_ids(ds, manifest.train);

            BenchOptions opts;
            opts.warmup = b_warmup;
            opts.runs = b_runs;
            opts.calib_batches = b_calib_count;
            if (b_schemes != "all") {
                opts.schemes.clear();
                std::stringstream ss(b_schemes);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    const auto s = parse_scheme(item);
                    if (!s)
                        throw CLI::ValidationError(
                            "--schemes", "unknown scheme '" + item +
                                             "' (valid: float32, dynamic-range, float16, "
                                             "full-int, float-fallback, or 'all')");
                    opts.schemes.push_back(*s);
                }
                require(!opts.schemes.empty(), "no schemes selected");
            }
            const auto report = run_bench(weights, eval_split_ds, calib_ds, opts);
            if (!b_report.empty()) write_json_atomic(to_json(report), b_report);
            std::cout << bench_table(report);
            return 0;
        }

        if (*infer_cmd) {
            const auto model = AnyModel::load(i_weights);
            const int s = model.config().input_size;
            GrayImage original = read_gray_png(i_image);
            GrayImage working = original;
            if (i_clahe) working = clahe(working);
            const GrayImage net_input =
                (working.width == s && working.height == s) ? working : resize(working, s);
            const auto out = model.run(image_to_tensor<float>(net_input));
            GrayImage mask_s = logits_to_mask(out.logits);
            // map the mask and the prediction back to the input resolution
            GrayImage mask = mask_s;
            if (original.width != s || original.height != s) {
                GrayImage scaled(original.width, original.height);
                for (int y = 0; y < original.height; ++y)
                    for (int x = 0; x < original.width; ++x) {
                        const int sx = std::min(s - 1, x * s / original.width);
                        const int sy = std::min(s - 1, y * s / original.height);
                        scaled.at(x, y) = mask_s.at(sx, sy);
                    }
                mask = std::move(scaled);
            }
            Tensor<float> raw({3},
                              {out.fossa.at2(0, 0), out.fossa.at2(0, 1), out.fossa.at2(0, 2)});
            FossaPrediction fossa = decode_fossa(raw, s, i_frac_w, i_frac_h);
            fossa.cx *= static_cast<double>(original.width) / s;
            fossa.cy *= static_cast<double>(original.height) / s;
            fossa.roi_width = i_frac_w * original.width;
            fossa.roi_height = i_frac_h * original.height;
            GrayImage filtered;
            if (i_frac_w >= 1.0 && i_frac_h >= 1.0) {
                filtered = mask;  // whole-image ROI keeps every vein pixel
                fossa.roi_width = fossa.roi_height = 4.0 * (original.width + original.height);
            } else {
                filtered = roi_filter(mask, fossa);
            }
            const auto overlay = render_overlay(original, filtered, fossa);
            write_rgb_png(overlay, i_overlay);
            json sidecar;
            sidecar["cx"] = fossa.cx;
            sidecar["cy"] = fossa.cy;
            sidecar["angle_deg"] = fossa.angle_deg;
            sidecar["roi_width"] = fossa.roi_width;
            sidecar["roi_height"] = fossa.roi_height;
            sidecar["vein_pixels"] = mask_area(filtered);
            write_json_atomic(sidecar, i_json.empty() ? i_overlay + ".json" : i_json);
            std::cout << "overlay: " << i_overlay << " (cx " << fossa.cx << ", cy " << fossa.cy
                      << ", angle " << fossa.angle_deg << ")\n";
            return 0;
        }

        if (*label_cmd) {
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(l_masks))
                if (entry.is_regular_file() && entry.path().extension() == ".png")
                    files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            require(!files.empty(), "no PNG masks found in " + l_masks);
            std::string csv = "id,angle_deg,status\n";
            int ok = 0;
            for (const auto& f : files) {
                const std::string id = f.stem().string();
                try {
                    const GrayImage mask = read_gray_png(f);
                    const double angle = arm_angle(mask, id);
                    char buf[64];
                    std::snprintf(buf, sizeof buf, "%.2f", angle);
                    csv += id + "," + buf + ",ok\n";
                    ++ok;
                } catch (const std::exception& e) {
                    csv += id + ",,error\n";
                    std::cerr << "warning: " << id << ": " << e.what() << "\n";
                }
            }
            binio::atomic_write_file(l_csv, csv);
            std::cout << "labeled " << ok << "/" << files.size() << " masks -> " << l_csv << "\n";
            return 0;
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
