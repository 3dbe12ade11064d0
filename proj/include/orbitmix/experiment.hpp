#pragma once

#include "orbitmix/io.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace orbitmix {

enum class ExperimentKind { RateCheck, JCalibration, KConsistency, ContaminationSweep, BoundCheck };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(std::string_view s);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::RateCheck;
    ModelSpec model;
    std::vector<long long> n_values;
    std::vector<double> eps_values{0.0};
    int replicates = 1;
    std::uint64_t seed = 0;
    std::string output;  // writes <output>.csv and <output>.json when nonempty

    // rate_check, j_calibration, bound_check
    bool fit = true;
    int restarts = 0;               // random restarts on top of the oracle start
    std::string estimator = "mean";
    std::string cov = "iid";
    // contamination_sweep
    std::vector<std::string> estimators{"mean", "mom:20", "catoni:0.05"};
    double outlier = 1e6;
    // k_consistency
    int K_max = 3;
    double tau = 2.0;
    double t = -1.0;  // < 0: log n
    int true_K = -1;  // < 0: model K
    // bound_check
    double floor = 0.0;  // sigma_min(I_Q) below this marks a replicate ill-conditioned

    /// Keys mirror the field names; "model" holds a model JSON object and "kind" a kind name.
    static ExperimentSpec from_json(const Json& j);
    void validate() const;
};

struct ExperimentRow {
    int replicate = 0;
    long long n = 0;
    double eps = 0.0;
    std::string estimator;
    std::string status = "ok";
    std::vector<std::pair<std::string, double>> metrics;

    double metric(const std::string& name) const;  // NaN when absent
};

struct ExperimentResult {
    std::vector<ExperimentRow> rows;
    Json summary;
    std::string csv() const;
};

/// Runs the replicate grid. Replicate r at grid point i uses seed derive_seed(derive_seed(seed, i), r);
/// rows are ordered by (n, eps, replicate, estimator) whatever the thread schedule.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Least-squares slope of log y on log x.
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);
double median(std::vector<double> v);

}  // namespace orbitmix
