#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "babynet/data.hpp"
#include "babynet/model.hpp"
#include "babynet/train.hpp"

namespace babynet {

// MAE/RMSE/MAPE over aligned per-patient predictions and targets, plus the
// across-patient spread (sample std) of absolute and percentage errors.
struct MetricsEntry {
    int n = 0;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;      // percent
    double mae_std = 0.0;   // across-patient std of |error|
    double mape_std = 0.0;  // across-patient std of absolute percentage error
};

MetricsEntry evaluate_metrics(const std::vector<double>& preds, const std::vector<double>& targets);

// Partition of patient ids into K folds: seeded shuffle, then round-robin.
struct FoldAssignment {
    int num_folds = 0;
    std::vector<std::vector<std::string>> folds;

    int fold_of(const std::string& patient_id) const;  // -1 when absent
};

FoldAssignment grouped_kfold_split(std::vector<std::string> patient_ids, int k, std::uint64_t seed);

// Elementwise mean of two per-patient prediction sets over an identical
// patient set (order of `a` is preserved).
std::vector<std::pair<std::string, double>> ensemble_average(
    const std::vector<std::pair<std::string, double>>& a,
    const std::vector<std::pair<std::string, double>>& b);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int dof = 0;
};

// Paired two-sided Student t-test on aligned per-patient error lists.
// Identical lists give p = 1; zero-variance nonzero differences are
// rejected as degenerate.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta function (continued-fraction evaluation),
// exposed for the t-distribution CDF it backs.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, int dof);

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct PatientPrediction {
    std::string patient_id;
    double target_g = 0.0;
    double pred_g = 0.0;
    int fold = 0;
};

struct MetricsReport {
    std::vector<MetricsEntry> per_fold;
    MetricsEntry overall;  // over all out-of-fold predictions
    // Cross-fold mean and std of each per-fold metric.
    double fold_mae_mean = 0.0, fold_mae_std = 0.0;
    double fold_rmse_mean = 0.0, fold_rmse_std = 0.0;
    double fold_mape_mean = 0.0, fold_mape_std = 0.0;
    std::vector<PatientPrediction> predictions;
    std::vector<std::vector<EpochStat>> fold_curves;
};

struct CrossValidationConfig {
    ModelConfig model;
    TrainConfig train;
    int num_folds = 5;
    std::uint64_t seed = 0;
    int jobs = 1;  // folds trained in parallel worker threads
};

// Trains one model per fold on the other folds' patients and predicts the
// held-out patients, so every patient receives exactly one out-of-fold
// prediction.
MetricsReport run_cross_validation(const std::vector<PatientRecord>& records,
                                   const CrossValidationConfig& config);

MetricsReport metrics_report_from_predictions(const std::vector<PatientPrediction>& predictions,
                                              int num_folds);

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PatientPrediction>& predictions);
std::vector<PatientPrediction> read_predictions_csv(const std::filesystem::path& path);

void write_report_json(const std::filesystem::path& path, const MetricsReport& report);

// External estimates file: header patient_id,estimate_g.
std::vector<std::pair<std::string, double>> read_estimates_csv(const std::filesystem::path& path);

}  // namespace babynet
