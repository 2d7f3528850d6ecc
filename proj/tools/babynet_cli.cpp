// Command-line entry point: synthetic data generation, training,
// cross-validation, prediction, and gradient checking.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <unordered_map>

#include "babynet/checkpoint.hpp"
#include "babynet/data.hpp"
#include "babynet/eval.hpp"
#include "babynet/gradcheck.hpp"
#include "babynet/reference.hpp"
#include "babynet/model.hpp"
#include "babynet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace babynet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// All knobs of one run; serialized verbatim into the output directory so
// every run is self-describing and re-runnable.
struct RunConfig {
    std::string command;
    std::string data_dir;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string preset;

    std::string variant = "rtm_tpe";
    int frames = 16;
    int height = 64;
    int width = 64;
    int heads = 4;
    double width_mult = 1.0;

    int epochs = 200;
    int batch_size = 2;
    double lr = 1e-4;
    double lr_decay = 0.1;
    int lr_step_epochs = 160;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool raw_targets = false;
    bool no_augment = false;

    int folds = 5;
    int jobs = 1;
    bool ablation = false;

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.variant = variant_from_name(variant);
        mc.in_frames = frames;
        mc.in_height = height;
        mc.in_width = width;
        mc.num_heads = heads;
        mc.width_multiplier = width_mult;
        return mc;
    }

    TrainConfig train_config() const {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.schedule.initial_lr = lr;
        tc.schedule.decay_factor = lr_decay;
        tc.schedule.step_epochs = lr_step_epochs;
        tc.schedule.total_epochs = epochs;
        tc.adam.weight_decay = static_cast<float>(weight_decay);
        tc.adam.beta1 = static_cast<float>(beta1);
        tc.adam.beta2 = static_cast<float>(beta2);
        tc.adam.epsilon = static_cast<float>(adam_eps);
        tc.raw_targets = raw_targets;
        tc.augment.enabled = !no_augment;
        tc.seed = mix_seed({seed, 0x747261696eULL});
        return tc;
    }

    json to_json() const {
        return json{{"command", command},
                    {"data", data_dir},
                    {"out", out_dir},
                    {"seed", seed},
                    {"preset", preset},
                    {"variant", variant},
                    {"frames", frames},
                    {"height", height},
                    {"width", width},
                    {"heads", heads},
                    {"width_mult", width_mult},
                    {"epochs", epochs},
                    {"batch_size", batch_size},
                    {"lr", lr},
                    {"lr_decay", lr_decay},
                    {"lr_step_epochs", lr_step_epochs},
                    {"weight_decay", weight_decay},
                    {"beta1", beta1},
                    {"beta2", beta2},
                    {"adam_eps", adam_eps},
                    {"raw_targets", raw_targets},
                    {"no_augment", no_augment},
                    {"folds", folds},
                    {"jobs", jobs},
                    {"ablation", ablation}};
    }
};

void add_model_options(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--variant", rc.variant, "Architecture variant: base|rtm|rtm_tpe")
        ->check(CLI::IsMember({"base", "rtm", "rtm_tpe"}));
    cmd->add_option("--frames", rc.frames, "Input frames per segment (T0)");
    cmd->add_option("--height", rc.height, "Input frame height (H0)");
    cmd->add_option("--width", rc.width, "Input frame width (W0)");
    cmd->add_option("--heads", rc.heads, "Attention heads");
    cmd->add_option("--width-mult", rc.width_mult, "Channel width multiplier");
}

void add_train_options(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--epochs", rc.epochs, "Training epochs");
    cmd->add_option("--batch", rc.batch_size, "Mini-batch size");
    cmd->add_option("--lr", rc.lr, "Initial learning rate");
    cmd->add_option("--lr-decay", rc.lr_decay, "Step decay factor");
    cmd->add_option("--lr-step", rc.lr_step_epochs, "Epochs between decays");
    cmd->add_option("--wd", rc.weight_decay, "Weight decay (coupled L2)");
    cmd->add_flag("--raw-targets", rc.raw_targets, "Train on grams instead of z-scores");
    cmd->add_flag("--no-augment", rc.no_augment, "Disable training augmentation");
}

// Desk preset: small enough for laptops and CI. The learning rate is raised
// along with the shrunken model so short runs still converge, and the decay
// step lands at 80% of the budget as in the full-scale schedule.
struct PresetGuards {
    bool epochs = true;
    bool lr = true;
    bool lr_step = true;
    bool batch = true;
};

void apply_preset(RunConfig& rc, const PresetGuards& untouched) {
    if (rc.preset.empty()) return;
    if (rc.preset != "desk") throw ValueError("unknown preset '" + rc.preset + "'");
    rc.frames = 8;
    rc.height = 16;
    rc.width = 16;
    rc.width_mult = 0.125;
    if (untouched.epochs) rc.epochs = 30;
    if (untouched.lr) rc.lr = 1e-3;
    if (untouched.lr_step) rc.lr_step_epochs = std::max(1, rc.epochs * 4 / 5);
    // At this width the deepest feature map is [N,C,1,1,1]; batch 4 keeps its
    // batch statistics away from the two-sample degenerate case.
    if (untouched.batch) rc.batch_size = 4;
}

void write_run_config(const RunConfig& rc) {
    fs::create_directories(rc.out_dir);
    std::ofstream out(fs::path(rc.out_dir) / "config.json");
    if (!out) throw IoError("cannot write config.json in " + rc.out_dir);
    out << rc.to_json().dump(2) << '\n';
}

std::vector<PatientRecord> load_dataset_checked(const std::string& dir) {
    if (dir.empty()) throw ValueError("no dataset path given");
    if (!fs::exists(fs::path(dir) / "manifest.txt"))
        throw ValueError("dataset not found at '" + dir + "' (missing manifest.txt)");
    return read_dataset(dir);
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const RunConfig& rc, SyntheticConfig sc) {
    sc.weight_min_g = std::clamp(sc.weight_min_g, 2085.0, 4995.0);
    sc.weight_max_g = std::clamp(sc.weight_max_g, 2085.0, 4995.0);
    if (!(sc.weight_max_g > sc.weight_min_g))
        throw ValueError("weight range is empty after clamping to [2085, 4995]");
    sc.seed = rc.seed;
    auto records = generate_synthetic_dataset(sc);
    write_dataset(rc.out_dir, records);
    std::cout << "wrote " << records.size() << " patients to " << rc.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const RunConfig& rc) {
    auto records = load_dataset_checked(rc.data_dir);
    write_run_config(rc);

    Model model = build_model(rc.model_config(), mix_seed({rc.seed, 0x6d6f64656cULL}));
    TrainResult result = train_model(model, records, rc.train_config());

    fs::path out(rc.out_dir);
    write_loss_csv(out / "loss.csv", result.curve);
    save_checkpoint(out / "checkpoint", model, result.scaler);
    std::cout << "trained " << rc.variant << " for " << rc.epochs << " epochs on "
              << records.size() << " patients\n";
    std::cout << "final train MSE " << result.curve.back().train_mse << " (scaled targets)\n";
    std::cout << "checkpoint written to " << (out / "checkpoint").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// cv
// ---------------------------------------------------------------------------

int run_cv(const RunConfig& rc) {
    auto records = load_dataset_checked(rc.data_dir);
    write_run_config(rc);

    std::vector<std::string> variants =
        rc.ablation ? std::vector<std::string>{"base", "rtm", "rtm_tpe"}
                    : std::vector<std::string>{rc.variant};

    // per-variant absolute percentage errors keyed by patient, for the
    // pairwise significance tests of the ablation grid
    std::vector<std::map<std::string, double>> ape_by_variant;

    for (const std::string& variant : variants) {
        RunConfig vrc = rc;
        vrc.variant = variant;
        CrossValidationConfig cv;
        cv.model = vrc.model_config();
        cv.train = vrc.train_config();
        cv.num_folds = rc.folds;
        cv.seed = mix_seed({rc.seed, 0x6376ULL});
        cv.jobs = rc.jobs;

        MetricsReport report = run_cross_validation(records, cv);

        fs::path vdir = fs::path(rc.out_dir) / variant;
        fs::create_directories(vdir);
        write_predictions_csv(vdir / "predictions.csv", report.predictions);
        write_report_json(vdir / "report.json", report);
        for (std::size_t f = 0; f < report.fold_curves.size(); ++f)
            write_loss_csv(vdir / ("loss_fold" + std::to_string(f) + ".csv"),
                           report.fold_curves[f]);

        std::map<std::string, double> ape;
        for (const auto& p : report.predictions)
            ape[p.patient_id] = 100.0 * std::abs(p.pred_g - p.target_g) / p.target_g;
        ape_by_variant.push_back(std::move(ape));

        std::cout << variant << ": MAE " << fmt_g(report.overall.mae) << " g, RMSE "
                  << fmt_g(report.overall.rmse) << " g, MAPE " << fmt_g(report.overall.mape)
                  << " % over " << report.overall.n << " out-of-fold patients\n";
    }

    if (variants.size() > 1) {
        // Paired two-sided tests on per-patient percentage errors.
        json comparisons = json::array();
        for (std::size_t i = 0; i < variants.size(); ++i)
            for (std::size_t j = i + 1; j < variants.size(); ++j) {
                std::vector<double> a, b;
                for (const auto& [id, ape] : ape_by_variant[i]) {
                    a.push_back(ape);
                    b.push_back(ape_by_variant[j].at(id));
                }
                json entry{{"a", variants[i]}, {"b", variants[j]}};
                try {
                    TTestResult t = paired_t_test(a, b);
                    entry["t"] = t.t;
                    entry["p"] = t.p;
                    entry["dof"] = t.dof;
                    std::cout << "paired t-test " << variants[i] << " vs " << variants[j]
                              << ": p = " << t.p << "\n";
                } catch (const ValueError& e) {
                    entry["degenerate"] = e.what();
                }
                comparisons.push_back(std::move(entry));
            }
        std::ofstream out(fs::path(rc.out_dir) / "ablation_comparison.json");
        if (!out) throw IoError("cannot write ablation_comparison.json in " + rc.out_dir);
        out << json{{"paired_ape_tests", comparisons}}.dump(2) << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

int run_predict(const std::string& checkpoint_dir, const std::string& data_dir,
                const std::string& out_file, const std::string& estimates_file) {
    if (!fs::exists(fs::path(checkpoint_dir) / "manifest.json"))
        throw ValueError("checkpoint not found at '" + checkpoint_dir + "'");
    Checkpoint ck = load_checkpoint(checkpoint_dir);
    auto records = load_dataset_checked(data_dir);

    std::vector<std::pair<std::string, double>> preds;
    for (const auto& rec : records)
        preds.emplace_back(rec.patient_id, predict_patient(ck.model, rec, ck.scaler));

    std::ofstream out(out_file);
    if (!out) throw IoError("cannot write predictions to " + out_file);
    char buf[64];
    auto fmt = [&](double v) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        if (ec != std::errc{}) throw IoError("failed to format number");
        return std::string(buf, ptr);
    };

    if (estimates_file.empty()) {
        out << "patient_id,target_g,pred_g\n";
        for (std::size_t i = 0; i < records.size(); ++i)
            out << records[i].patient_id << ',' << fmt(records[i].birth_weight_g) << ','
                << fmt(preds[i].second) << '\n';
    } else {
        auto estimates = read_estimates_csv(estimates_file);
        for (const auto& [id, v] : estimates) {
            bool known = false;
            for (const auto& rec : records) known = known || rec.patient_id == id;
            if (!known) throw ValueError("estimates file names unknown patient '" + id + "'");
        }
        auto ens = ensemble_average(preds, estimates);
        std::unordered_map<std::string, double> emap(estimates.begin(), estimates.end());
        out << "patient_id,target_g,pred_g,estimate_g,ensemble_g\n";
        for (std::size_t i = 0; i < records.size(); ++i)
            out << records[i].patient_id << ',' << fmt(records[i].birth_weight_g) << ','
                << fmt(preds[i].second) << ',' << fmt(emap.at(records[i].patient_id)) << ','
                << fmt(ens[i].second) << '\n';
    }
    std::cout << "wrote predictions for " << records.size() << " patients to " << out_file << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int run_gradcheck(const RunConfig& rc, int samples, double tol, double eps,
                  const std::string& report_file) {
    Model model = build_model(rc.model_config(), mix_seed({rc.seed, 0x6d6f64656cULL}));

    // Batch of 8 keeps the per-channel batch statistics of the deepest
    // stage well away from degeneracy.
    constexpr int kBatch = 8;
    Rng rng(mix_seed({rc.seed, 0x696e707574ULL}));
    Tensor input = Tensor::zeros({kBatch, 1, rc.frames, rc.height, rc.width});
    for (float& v : input.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor target = Tensor::zeros({kBatch, 1});
    for (float& v : target.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    auto f = [&](Graph* g) { return mse_loss(g, model.forward(g, input, Mode::Train), target); };
    auto probe = [&]() { return reference::mse(model, input, target, Mode::Train); };

    GradCheckOptions options;
    options.total_samples = samples;
    options.seed = rc.seed;
    options.eps = eps > 0 ? eps : 1e-5;
    GradCheckReport report = finite_difference_check(f, probe, named_parameters(model), options);

    std::ostringstream summary;
    summary << "checked " << report.entries.size() << " sampled parameters\n"
            << "max relative error " << report.max_rel_error << " (tolerance " << tol << ")\n"
            << "worst parameter " << report.worst_param << "[" << report.worst_index << "]\n"
            << (report.passed(tol) ? "PASS" : "FAIL") << "\n";
    std::cout << summary.str();
    if (!report_file.empty()) {
        std::ofstream out(report_file);
        out << summary.str();
        for (const auto& e : report.entries)
            out << e.param << "[" << e.index << "] analytic=" << e.analytic
                << " numeric=" << e.numeric << " rel=" << e.rel_error << "\n";
    }
    if (!report.passed(tol)) {
        std::cerr << "gradient check failed\n";
        return kExitNumeric;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BabyNet: 3D residual transformer video regression"};
    app.require_subcommand(1);

    RunConfig rc;
    SyntheticConfig sc;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic video regression dataset");
    synth->add_option("--out", rc.out_dir, "Output dataset directory")->required();
    synth->add_option("--seed", rc.seed, "RNG seed");
    synth->add_option("--patients", sc.num_patients, "Number of patients");
    synth->add_option("--videos", sc.videos_per_patient, "Videos per patient");
    synth->add_option("--video-frames", sc.frames_per_video, "Frames per video");
    synth->add_option("--frame-height", sc.frame_height, "Frame height");
    synth->add_option("--frame-width", sc.frame_width, "Frame width");
    synth->add_option("--noise", sc.noise_sigma, "Gaussian pixel noise sigma");
    synth->add_option("--weight-min", sc.weight_min_g, "Minimum birth weight (clamped to 2085)");
    synth->add_option("--weight-max", sc.weight_max_g, "Maximum birth weight (clamped to 4995)");
    synth->add_option("--radius-min", sc.radius_min_px, "Ellipse radius at the minimum weight");
    synth->add_option("--radius-max", sc.radius_max_px, "Ellipse radius at the maximum weight");
    synth->add_option("--jitter", sc.jitter_px, "Per-frame center jitter in pixels");

    auto* train = app.add_subcommand("train", "Train one model on a dataset");
    train->add_option("--data", rc.data_dir, "Dataset directory")->required();
    train->add_option("--out", rc.out_dir, "Run output directory")->required();
    train->add_option("--seed", rc.seed, "RNG seed");
    train->add_option("--preset", rc.preset, "Configuration preset (desk)");
    add_model_options(train, rc);
    add_train_options(train, rc);

    auto* cv = app.add_subcommand("cv", "Grouped K-fold cross-validation");
    cv->add_option("--data", rc.data_dir, "Dataset directory")->required();
    cv->add_option("--out", rc.out_dir, "Run output directory")->required();
    cv->add_option("--seed", rc.seed, "RNG seed");
    cv->add_option("--preset", rc.preset, "Configuration preset (desk)");
    cv->add_option("--folds", rc.folds, "Number of folds");
    cv->add_option("--jobs", rc.jobs, "Fold worker threads");
    cv->add_flag("--ablation", rc.ablation, "Run all three variants");
    add_model_options(cv, rc);
    add_train_options(cv, rc);

    std::string checkpoint_dir, out_file, estimates_file;
    auto* predict = app.add_subcommand("predict", "Predict per-patient weights");
    predict->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
    predict->add_option("--data", rc.data_dir, "Dataset directory")->required();
    predict->add_option("--out", out_file, "Output CSV file")->required();
    predict->add_option("--estimates", estimates_file,
                        "External estimates CSV for ensemble averaging");

    int gc_samples = 32;
    double gc_tol = 1e-2, gc_eps = 0.0;
    std::string gc_report;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck->add_option("--seed", rc.seed, "RNG seed");
    gradcheck->add_option("--preset", rc.preset, "Configuration preset (desk)");
    gradcheck->add_option("--samples", gc_samples, "Sampled parameter count");
    gradcheck->add_option("--tol", gc_tol, "Relative error tolerance");
    gradcheck->add_option("--eps", gc_eps, "Finite-difference step");
    gradcheck->add_option("--out", gc_report, "Report file");
    add_model_options(gradcheck, rc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        PresetGuards untouched;
        for (auto* cmd : {train, cv})
            if (cmd->parsed()) {
                if (cmd->count("--epochs") > 0) untouched.epochs = false;
                if (cmd->count("--lr") > 0) untouched.lr = false;
                if (cmd->count("--lr-step") > 0) untouched.lr_step = false;
                if (cmd->count("--batch") > 0) untouched.batch = false;
            }
        if (gradcheck->parsed() && rc.preset.empty()) rc.preset = "desk";
        apply_preset(rc, untouched);

        if (synth->parsed()) {
            rc.command = "synth";
            return run_synth(rc, sc);
        }
        if (train->parsed()) {
            rc.command = "train";
            return run_train(rc);
        }
        if (cv->parsed()) {
            rc.command = "cv";
            return run_cv(rc);
        }
        if (predict->parsed()) {
            rc.command = "predict";
            return run_predict(checkpoint_dir, rc.data_dir, out_file, estimates_file);
        }
        if (gradcheck->parsed()) {
            rc.command = "gradcheck";
            return run_gradcheck(rc, gc_samples, gc_tol, gc_eps, gc_report);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
