#include "babynet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace babynet {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace

MetricsEntry evaluate_metrics(const std::vector<double>& preds,
                              const std::vector<double>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw ValueError("evaluate_metrics: prediction and target lists must be nonempty and aligned");
    std::vector<double> abs_err, ape;
    abs_err.reserve(preds.size());
    ape.reserve(preds.size());
    double sse = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!(targets[i] > 0.0))
            throw ValueError("evaluate_metrics: non-positive target at index " + std::to_string(i));
        double e = preds[i] - targets[i];
        abs_err.push_back(std::abs(e));
        ape.push_back(100.0 * std::abs(e) / targets[i]);
        sse += e * e;
    }
    double n = static_cast<double>(preds.size());
    MetricsEntry m;
    m.n = static_cast<int>(preds.size());
    m.mae = std::accumulate(abs_err.begin(), abs_err.end(), 0.0) / n;
    m.rmse = std::sqrt(sse / n);
    m.mape = std::accumulate(ape.begin(), ape.end(), 0.0) / n;
    m.mae_std = sample_std(abs_err, m.mae);
    m.mape_std = sample_std(ape, m.mape);
    return m;
}

// ---------------------------------------------------------------------------
// Grouped K-fold
// ---------------------------------------------------------------------------

int FoldAssignment::fold_of(const std::string& patient_id) const {
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (const auto& id : folds[f])
            if (id == patient_id) return static_cast<int>(f);
    return -1;
}

FoldAssignment grouped_kfold_split(std::vector<std::string> patient_ids, int k,
                                   std::uint64_t seed) {
    if (k < 2) throw ValueError("grouped_kfold_split: need at least 2 folds");
    if (static_cast<int>(patient_ids.size()) < k)
        throw ValueError("grouped_kfold_split: fewer patients (" +
                         std::to_string(patient_ids.size()) + ") than folds (" +
                         std::to_string(k) + ")");
    {
        std::unordered_set<std::string> uniq(patient_ids.begin(), patient_ids.end());
        if (uniq.size() != patient_ids.size())
            throw ValueError("grouped_kfold_split: duplicate patient ids");
    }
    Rng rng(mix_seed({seed, 0x666f6c64ULL}));
    rng.shuffle(patient_ids);
    FoldAssignment fa;
    fa.num_folds = k;
    fa.folds.resize(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < patient_ids.size(); ++i)
        fa.folds[i % static_cast<std::size_t>(k)].push_back(patient_ids[i]);
    return fa;
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, double>> ensemble_average(
    const std::vector<std::pair<std::string, double>>& a,
    const std::vector<std::pair<std::string, double>>& b) {
    std::unordered_map<std::string, double> bmap;
    for (const auto& [id, v] : b) {
        if (!bmap.emplace(id, v).second)
            throw ValueError("ensemble_average: duplicate patient id '" + id + "'");
    }
    if (a.size() != b.size())
        throw ValueError("ensemble_average: patient sets differ in size (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    std::vector<std::pair<std::string, double>> out;
    out.reserve(a.size());
    for (const auto& [id, v] : a) {
        auto it = bmap.find(id);
        if (it == bmap.end())
            throw ValueError("ensemble_average: patient '" + id + "' missing from second set");
        out.emplace_back(id, (v + it->second) / 2.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-290;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw ValueError("regularized_incomplete_beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int dof) {
    if (dof < 1) throw ValueError("student_t_two_sided_p: dof must be >= 1");
    double v = static_cast<double>(dof);
    return regularized_incomplete_beta(v / 2.0, 0.5, v / (v + t * t));
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValueError("paired_t_test: lists must be aligned");
    if (a.size() < 2) throw ValueError("paired_t_test: need at least 2 pairs");
    std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n - 1);
    double sd = std::sqrt(var);
    TTestResult r;
    r.dof = static_cast<int>(n) - 1;
    if (sd == 0.0) {
        if (mean == 0.0) return r;  // identical inputs: t = 0, p = 1
        throw ValueError("paired_t_test: degenerate input (all differences equal and nonzero)");
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_sided_p(r.t, r.dof);
    return r;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

MetricsReport metrics_report_from_predictions(const std::vector<PatientPrediction>& predictions,
                                              int num_folds) {
    MetricsReport report;
    report.predictions = predictions;
    std::vector<double> all_preds, all_targets;
    std::vector<double> fold_mae, fold_rmse, fold_mape;
    for (int f = 0; f < num_folds; ++f) {
        std::vector<double> preds, targets;
        for (const auto& p : predictions)
            if (p.fold == f) {
                preds.push_back(p.pred_g);
                targets.push_back(p.target_g);
            }
        if (preds.empty()) throw ValueError("metrics report: fold " + std::to_string(f) +
                                            " has no predictions");
        MetricsEntry e = evaluate_metrics(preds, targets);
        fold_mae.push_back(e.mae);
        fold_rmse.push_back(e.rmse);
        fold_mape.push_back(e.mape);
        report.per_fold.push_back(e);
        all_preds.insert(all_preds.end(), preds.begin(), preds.end());
        all_targets.insert(all_targets.end(), targets.begin(), targets.end());
    }
    report.overall = evaluate_metrics(all_preds, all_targets);
    auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    report.fold_mae_mean = mean_of(fold_mae);
    report.fold_mae_std = sample_std(fold_mae, report.fold_mae_mean);
    report.fold_rmse_mean = mean_of(fold_rmse);
    report.fold_rmse_std = sample_std(fold_rmse, report.fold_rmse_mean);
    report.fold_mape_mean = mean_of(fold_mape);
    report.fold_mape_std = sample_std(fold_mape, report.fold_mape_mean);
    return report;
}

MetricsReport run_cross_validation(const std::vector<PatientRecord>& records,
                                   const CrossValidationConfig& config) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.patient_id);
    FoldAssignment fa =
        grouped_kfold_split(ids, config.num_folds, mix_seed({config.seed, 0x73706c6974ULL}));

    std::vector<std::vector<PatientPrediction>> fold_preds(
        static_cast<std::size_t>(config.num_folds));
    std::vector<std::vector<EpochStat>> fold_curves(static_cast<std::size_t>(config.num_folds));

    auto run_fold = [&](int f) {
        std::unordered_set<std::string> held_out(fa.folds[static_cast<std::size_t>(f)].begin(),
                                                 fa.folds[static_cast<std::size_t>(f)].end());
        std::vector<PatientRecord> train_set;
        std::vector<const PatientRecord*> test_set;
        for (const auto& r : records) {
            if (held_out.count(r.patient_id))
                test_set.push_back(&r);
            else
                train_set.push_back(r);
        }
        Model model =
            build_model(config.model, mix_seed({config.seed, 0x696e6974ULL,
                                                static_cast<std::uint64_t>(f)}));
        TrainConfig tc = config.train;
        tc.seed = mix_seed({config.seed, 0x747261696eULL, static_cast<std::uint64_t>(f)});
        TrainResult tr = train_model(model, train_set, tc);
        fold_curves[static_cast<std::size_t>(f)] = tr.curve;
        for (const PatientRecord* r : test_set) {
            double pred = predict_patient(model, *r, tr.scaler);
            fold_preds[static_cast<std::size_t>(f)].push_back(
                PatientPrediction{r->patient_id, r->birth_weight_g, pred, f});
        }
    };

    int jobs = std::max(1, std::min(config.jobs, config.num_folds));
    if (jobs == 1) {
        for (int f = 0; f < config.num_folds; ++f) run_fold(f);
    } else {
        // Folds are independent; each worker owns its model and RNG streams,
        // so the result set is identical to a sequential run.
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
        for (int wk = 0; wk < jobs; ++wk) {
            workers.emplace_back([&, wk]() {
                try {
                    for (int f = next.fetch_add(1); f < config.num_folds; f = next.fetch_add(1))
                        run_fold(f);
                } catch (...) {
                    errors[static_cast<std::size_t>(wk)] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<PatientPrediction> predictions;
    for (const auto& fp : fold_preds) predictions.insert(predictions.end(), fp.begin(), fp.end());
    MetricsReport report = metrics_report_from_predictions(predictions, config.num_folds);
    report.fold_curves = std::move(fold_curves);
    return report;
}

// ---------------------------------------------------------------------------
// CSV / JSON I/O
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("failed to format number");
    return std::string(buf, ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PatientPrediction>& predictions) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write predictions: " + path.string());
    out << "patient_id,target_g,pred_g,fold\n";
    for (const auto& p : predictions)
        out << p.patient_id << ',' << fmt_double(p.target_g) << ',' << fmt_double(p.pred_g) << ','
            << p.fold << '\n';
}

std::vector<PatientPrediction> read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open predictions: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "patient_id,target_g,pred_g,fold")
        throw IoError("predictions CSV has unexpected header: " + path.string());
    std::vector<PatientPrediction> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw IoError("predictions CSV has malformed row: " + path.string());
        out.push_back(PatientPrediction{fields[0], std::stod(fields[1]), std::stod(fields[2]),
                                        std::stoi(fields[3])});
    }
    return out;
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& report) {
    using nlohmann::json;
    auto entry = [](const MetricsEntry& e) {
        return json{{"n", e.n},           {"mae", e.mae},
                    {"rmse", e.rmse},     {"mape", e.mape},
                    {"mae_std", e.mae_std}, {"mape_std", e.mape_std}};
    };
    json folds = json::array();
    for (const auto& e : report.per_fold) folds.push_back(entry(e));
    json j{{"per_fold", folds},
           {"overall", entry(report.overall)},
           {"cross_fold",
            {{"mae_mean", report.fold_mae_mean},
             {"mae_std", report.fold_mae_std},
             {"rmse_mean", report.fold_rmse_mean},
             {"rmse_std", report.fold_rmse_std},
             {"mape_mean", report.fold_mape_mean},
             {"mape_std", report.fold_mape_std}}}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<std::pair<std::string, double>> read_estimates_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open estimates: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "patient_id,estimate_g")
        throw IoError("estimates CSV must start with header patient_id,estimate_g: " +
                      path.string());
    std::vector<std::pair<std::string, double>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2) throw IoError("estimates CSV has malformed row: " + path.string());
        double v = 0.0;
        try {
            v = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw IoError("estimates CSV has non-numeric estimate for '" + fields[0] + "'");
        }
        out.emplace_back(fields[0], v);
    }
    return out;
}

}  // namespace babynet
