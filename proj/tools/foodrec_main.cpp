// foodrec: image-classification toolkit CLI.
// Subcommands: ingest, synth, split, train-cnn, train-bof, eval, gradcheck,
// augment-preview. Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "foodrec/augment.hpp"
#include "foodrec/bof.hpp"
#include "foodrec/dataset.hpp"
#include "foodrec/error.hpp"
#include "foodrec/image_io.hpp"
#include "foodrec/metrics.hpp"
#include "foodrec/network.hpp"
#include "foodrec/parallel.hpp"

namespace fs = std::filesystem;
using namespace foodrec;

namespace {

struct AugmentFlags {
    double max_rotation = 20.0;
    double max_translate = 0.10;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double fill = 0.0;

    AugmentConfig to_config() const {
        AugmentConfig c;
        c.max_rotation_deg = max_rotation;
        c.max_translate_frac = max_translate;
        c.scale_min = scale_min;
        c.scale_max = scale_max;
        c.fill_value = static_cast<float>(fill);
        c.validate();
        return c;
    }
};

void add_augment_flags(CLI::App* cmd, AugmentFlags& f) {
    cmd->add_option("--max-rotation", f.max_rotation, "Rotation bound, degrees")
        ->capture_default_str();
    cmd->add_option("--max-translate", f.max_translate, "Translation bound, fraction of size")
        ->capture_default_str();
    cmd->add_option("--scale-min", f.scale_min, "Lower scale bound")->capture_default_str();
    cmd->add_option("--scale-max", f.scale_max, "Upper scale bound")->capture_default_str();
    cmd->add_option("--fill", f.fill, "Fill value for out-of-image samples")
        ->capture_default_str();
}

std::string sniff_magic(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::io_error, "cannot open: " + path);
    char buf[6] = {0};
    is.read(buf, 6);
    if (is.gcount() != 6) raise(Errc::truncated, "file too short: " + path);
    return std::string(buf, 6);
}

void write_image_png(const std::string& path, const Tensor& image) {
    const int h = image.extent(0), w = image.extent(1);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w * 3);
    const float* d = image.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        float v = d[i] * 255.0f + 0.5f;
        if (v < 0.0f) v = 0.0f;
        if (v > 255.0f) v = 255.0f;
        bytes[i] = static_cast<std::uint8_t>(v);
    }
    encode_png(path, w, h, bytes);
}

metrics::EvalReport report_from_predictions(const PackedDataset& data,
                                            const std::vector<int>& preds) {
    std::vector<int> truths(data.records.size());
    for (std::size_t i = 0; i < data.records.size(); ++i) truths[i] = data.records[i].label;
    const auto m =
        metrics::confusion_matrix(truths, preds, static_cast<int>(data.class_names.size()));
    return metrics::build_report(m, data.class_names);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"foodrec: small-image classification toolkit (CNN + bag-of-features)"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags (--seed/--threads/--config) work after subcommands
    app.set_config("--config", "", "Config file mirroring flag names (flags take precedence)");

    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("--seed", seed, "Master RNG seed")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads; 0 = auto, 1 = sequential")
        ->capture_default_str();

    // ---- ingest ----
    auto* c_ingest = app.add_subcommand("ingest", "Pack a directory of class folders");
    std::string ingest_root, ingest_out;
    int ingest_size = 128;
    c_ingest->add_option("root", ingest_root, "Directory with one subdirectory per class")
        ->required();
    c_ingest->add_option("out", ingest_out, "Output packed dataset")->required();
    c_ingest->add_option("--size", ingest_size, "Target square resolution")
        ->capture_default_str();

    // ---- synth ----
    auto* c_synth = app.add_subcommand("synth", "Generate the synthetic shape benchmark");
    std::string synth_out;
    int synth_per_class = 100, synth_size = 128;
    c_synth->add_option("out", synth_out, "Output packed dataset")->required();
    c_synth->add_option("--per-class", synth_per_class, "Images per class")
        ->capture_default_str();
    c_synth->add_option("--size", synth_size, "Square resolution")->capture_default_str();

    // ---- split ----
    auto* c_split = app.add_subcommand("split", "Stratified train/test split");
    std::string split_in, split_train, split_test;
    double split_frac = 0.8;
    c_split->add_option("in", split_in, "Input packed dataset")->required();
    c_split->add_option("train_out", split_train, "Output training dataset")->required();
    c_split->add_option("test_out", split_test, "Output test dataset")->required();
    c_split->add_option("--frac", split_frac, "Training fraction, in (0,1)")
        ->capture_default_str();

    // ---- train-cnn ----
    auto* c_cnn = app.add_subcommand("train-cnn", "Train the five-layer CNN");
    std::string cnn_train, cnn_test, cnn_ckpt, cnn_curves, cnn_chart;
    TrainConfig cnn_cfg;
    int cnn_input_size = 0;
    bool cnn_augment = false;
    AugmentFlags cnn_aug;
    c_cnn->add_option("train", cnn_train, "Training packed dataset")->required();
    c_cnn->add_option("test", cnn_test, "Test packed dataset")->required();
    c_cnn->add_option("--checkpoint-out", cnn_ckpt, "Output checkpoint")->required();
    c_cnn->add_option("--curves-out", cnn_curves, "Output per-epoch CSV")->required();
    c_cnn->add_option("--chart", cnn_chart, "Optional SVG chart of the curves");
    c_cnn->add_option("--epochs", cnn_cfg.max_epochs, "Maximum epochs")->capture_default_str();
    c_cnn->add_option("--batch-size", cnn_cfg.batch_size, "Minibatch size")
        ->capture_default_str();
    c_cnn->add_option("--eta0", cnn_cfg.eta0, "Base learning rate")->capture_default_str();
    c_cnn->add_option("--eta-max", cnn_cfg.eta_max, "Learning-rate ceiling")
        ->capture_default_str();
    c_cnn->add_option("--patience", cnn_cfg.patience,
                      "Epochs without test-accuracy improvement before stopping")
        ->capture_default_str();
    c_cnn->add_option("--input-size", cnn_input_size,
                      "Train at this square resolution (0 = dataset native)")
        ->capture_default_str();
    c_cnn->add_flag("--augment,!--no-augment", cnn_augment,
                    "Expand training images with random affine warps");
    add_augment_flags(c_cnn, cnn_aug);

    // ---- train-bof ----
    auto* c_bof = app.add_subcommand("train-bof", "Train the bag-of-features baseline");
    std::string bof_train, bof_out;
    bof::BofTrainOptions bof_opt;
    c_bof->add_option("train", bof_train, "Training packed dataset")->required();
    c_bof->add_option("--model-out", bof_out, "Output model file")->required();
    c_bof->add_option("--k", bof_opt.k, "Vocabulary size")->capture_default_str();
    c_bof->add_option("--lambda", bof_opt.lambda, "SVM regularization strength")
        ->capture_default_str();
    c_bof->add_option("--svm-epochs", bof_opt.svm_epochs, "SVM training epochs")
        ->capture_default_str();
    c_bof->add_option("--kmeans-iters", bof_opt.kmeans_iters, "Max Lloyd iterations")
        ->capture_default_str();
    c_bof->add_option("--step", bof_opt.step, "Descriptor grid step, pixels")
        ->capture_default_str();
    c_bof->add_option("--patch", bof_opt.patch, "Descriptor patch size, pixels")
        ->capture_default_str();
    c_bof->add_option("--max-descriptors", bof_opt.max_descriptors,
                      "Vocabulary training pool cap (0 = all)")
        ->capture_default_str();

    // ---- eval ----
    auto* c_eval = app.add_subcommand("eval", "Evaluate a model on a packed dataset");
    std::string eval_model, eval_data, eval_report;
    int eval_input_size = 0, eval_step = 8, eval_patch = 16;
    c_eval->add_option("model", eval_model, "Checkpoint or bof model (detected by magic)")
        ->required();
    c_eval->add_option("test", eval_data, "Packed dataset to evaluate")->required();
    c_eval->add_option("--report-out", eval_report, "Output JSON report")->required();
    c_eval->add_option("--input-size", eval_input_size,
                       "Resize dataset for a CNN trained at this resolution (0 = native)")
        ->capture_default_str();
    c_eval->add_option("--step", eval_step, "BoF descriptor grid step")->capture_default_str();
    c_eval->add_option("--patch", eval_patch, "BoF descriptor patch size")
        ->capture_default_str();

    // ---- gradcheck ----
    auto* c_grad = app.add_subcommand("gradcheck",
                                      "Finite-difference gradient check (exit 0 iff < 1e-5)");
    bool grad_self_test = false;
    c_grad->add_flag("--self-test", grad_self_test,
                     "Corrupt the analytic gradients to verify the checker detects it");

    // ---- augment-preview ----
    auto* c_prev = app.add_subcommand("augment-preview", "Write warped sample images");
    std::string prev_data, prev_dir;
    int prev_n = 5;
    AugmentFlags prev_aug;
    c_prev->add_option("dataset", prev_data, "Packed dataset")->required();
    c_prev->add_option("--out-dir", prev_dir, "Output directory")->required();
    c_prev->add_option("--n", prev_n, "Number of records to preview")->capture_default_str();
    add_augment_flags(c_prev, prev_aug);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        par::set_threads(threads);

        if (*c_ingest) {
            const DatasetManifest manifest = ingest_directory(ingest_root);
            PackedDataset packed;
            packed.width = static_cast<std::uint16_t>(ingest_size);
            packed.height = static_cast<std::uint16_t>(ingest_size);
            packed.channels = 3;
            packed.class_names = manifest.classes;
            int warnings = manifest.warnings;
            for (const auto& item : manifest.items) {
                try {
                    const Tensor t = load_resize(item.path, ingest_size, ingest_size);
                    PackedDataset::Record rec;
                    rec.label = static_cast<std::uint8_t>(item.class_index);
                    rec.pixels.resize(t.size());
                    for (std::size_t i = 0; i < t.size(); ++i) {
                        float v = t.data()[i] * 255.0f + 0.5f;
                        rec.pixels[i] = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
                    }
                    packed.records.push_back(std::move(rec));
                } catch (const Error&) {
                    ++warnings; // undecodable file: skip
                }
            }
            if (packed.records.empty()) raise(Errc::empty_input, "no decodable images found");
            save_packed(packed, ingest_out);
            std::printf("packed %zu records, %zu classes, %d warnings -> %s\n",
                        packed.records.size(), packed.class_names.size(), warnings,
                        ingest_out.c_str());
        } else if (*c_synth) {
            const PackedDataset data = make_synthetic(10, synth_per_class, seed, synth_size);
            save_packed(data, synth_out);
            std::printf("synthesized %zu records at %dx%d -> %s\n", data.records.size(),
                        synth_size, synth_size, synth_out.c_str());
        } else if (*c_split) {
            if (!(split_frac > 0.0 && split_frac < 1.0))
                throw CLI::ValidationError("--frac", "must be in (0,1)");
            const PackedDataset data = load_packed(split_in);
            auto [train_set, test_set] = split_packed(data, split_frac, seed);
            save_packed(train_set, split_train);
            save_packed(test_set, split_test);
            std::printf("split %zu records -> %zu train / %zu test\n", data.records.size(),
                        train_set.records.size(), test_set.records.size());
        } else if (*c_cnn) {
            PackedDataset train_set = load_packed(cnn_train);
            PackedDataset test_set = load_packed(cnn_test);
            if (cnn_input_size > 0) {
                train_set = prepare_resolution(train_set, cnn_input_size);
                test_set = prepare_resolution(test_set, cnn_input_size);
            }
            cnn_cfg.seed = seed;
            if (cnn_augment) cnn_cfg.augment = cnn_aug.to_config();
            cnn_cfg.validate();
            NetworkModel model = build_five_layer_network(train_set.height, train_set.width,
                                                     train_set.channels, train_set.class_names,
                                                     seed);
            std::printf("training CNN: %zu parameters, %zu train / %zu test records at %ux%u\n",
                        model.parameter_count(), train_set.records.size(),
                        test_set.records.size(), train_set.width, train_set.height);
            TrainResult result = train(std::move(model), train_set, test_set, cnn_cfg);
            save_checkpoint(result.model, cnn_ckpt);
            metrics::emit_curves(result.curves, cnn_curves);
            if (!cnn_chart.empty()) metrics::emit_curves_chart(result.curves, cnn_chart);
            double best = 0.0;
            for (const auto& r : result.curves) best = std::max(best, r.test_acc);
            std::printf("done after %zu epochs; best test accuracy %.4f\n",
                        result.curves.size(), best);
        } else if (*c_bof) {
            const PackedDataset train_set = load_packed(bof_train);
            bof_opt.seed = seed;
            const bof::BofModel model = bof::train_pipeline(train_set, bof_opt);
            bof::save_bof(model, bof_out);
            const auto train_preds =
                bof::predict_pipeline(model, train_set, bof_opt.step, bof_opt.patch);
            const auto report = report_from_predictions(train_set, train_preds);
            std::printf("bof model: k=%d; training accuracy %.4f -> %s\n", bof_opt.k,
                        report.overall_accuracy, bof_out.c_str());
        } else if (*c_eval) {
            PackedDataset data = load_packed(eval_data);
            const std::string magic = sniff_magic(eval_model);
            std::vector<int> preds;
            if (magic == std::string("CNCK1\0", 6)) {
                const NetworkModel model = load_checkpoint(eval_model);
                if (eval_input_size > 0) data = prepare_resolution(data, eval_input_size);
                const EvalStats stats = evaluate(model, data);
                preds = stats.predictions;
            } else if (magic == std::string("BOFM1\0", 6)) {
                const bof::BofModel model = bof::load_bof(eval_model);
                preds = bof::predict_pipeline(model, data, eval_step, eval_patch);
            } else {
                raise(Errc::bad_magic, "unknown model format: " + eval_model);
            }
            const auto report = report_from_predictions(data, preds);
            metrics::emit_report(report, eval_report);
            std::fputs(metrics::format_report_text(report).c_str(), stdout);
            std::printf("report -> %s\n", eval_report.c_str());
        } else if (*c_grad) {
            const double err = gradient_check(seed, grad_self_test);
            std::printf("max relative error: %.3e\n", err);
            return err < 1e-5 ? 0 : 1;
        } else if (*c_prev) {
            const PackedDataset data = load_packed(prev_data);
            if (data.records.empty()) raise(Errc::empty_input, "dataset has no records");
            const AugmentConfig cfg = prev_aug.to_config();
            fs::create_directories(prev_dir);
            Rng rng(seed);
            const int n = std::min<int>(prev_n, static_cast<int>(data.records.size()));
            for (int i = 0; i < n; ++i) {
                const Tensor orig = data.record_tensor(static_cast<std::size_t>(i));
                const AffineParams params =
                    sample_affine(cfg, data.width, data.height, rng);
                const Tensor warped =
                    warp_bilinear(orig, affine_matrix(params, data.width, data.height),
                                  cfg.fill_value);
                char name[64];
                std::snprintf(name, sizeof name, "%03d_original.png", i);
                write_image_png((fs::path(prev_dir) / name).string(), orig);
                std::snprintf(name, sizeof name, "%03d_warped.png", i);
                write_image_png((fs::path(prev_dir) / name).string(), warped);
            }
            std::printf("wrote %d original/warped pairs to %s\n", n, prev_dir.c_str());
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
