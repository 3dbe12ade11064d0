#include "orbitmix/experiment.hpp"

#include "orbitmix/error.hpp"
#include "orbitmix/gmm_fit.hpp"
#include "orbitmix/orbit_metric.hpp"
#include "orbitmix/rng.hpp"
#include "orbitmix/selection.hpp"
#include "orbitmix/stack_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace orbitmix {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Context {
    const ExperimentSpec& spec;
    FiniteGroup G;
    InvariantMap map;
    Eigen::VectorXd psi_star;
    int true_K;
};

FitReport fit_with_oracle_start(const Context& ctx, const Eigen::MatrixXd& data, const Eigen::VectorXd& psi_hat,
                                const Eigen::MatrixXd& W, std::uint64_t seed) {
    FitConfig cfg;
    cfg.init = {ctx.spec.model.params.thetas};
    cfg.restarts = ctx.spec.restarts;
    cfg.seed = seed;
    cfg.record_trajectory = false;
    set_box_from_data(cfg, data);
    return fit(ctx.map, psi_hat, W, ctx.spec.model.params.K(), ctx.spec.model.params.sigma2, cfg);
}

void rate_or_j(const Context& ctx, const Eigen::MatrixXd& data, std::uint64_t seed, ExperimentRow& row) {
    const auto& spec = ctx.spec;
    const MixtureParams& truth = spec.model.params;
    const Eigen::MatrixXd F = ctx.map.feature_matrix(data);
    const Eigen::VectorXd psi = aggregate(F, EstimatorSpec::parse(spec.estimator));
    row.metrics.emplace_back("stack_err", (psi - ctx.psi_star).norm());
    if (spec.kind == ExperimentKind::RateCheck && !spec.fit) return;

    const Eigen::MatrixXd Sigma = covariance(F, CovSpec::parse(spec.cov)).matrix;
    const Eigen::MatrixXd W = inverse_weight(Sigma, 0.0);
    const FitReport rep = fit_with_oracle_start(ctx, data, psi, W, derive_seed(seed, 1));
    const long long n = data.rows();
    const JTest jt = j_test(ctx.map, rep.params, psi, W, n);
    row.metrics.emplace_back("objective", rep.objective);
    row.metrics.emplace_back("converged", rep.converged ? 1.0 : 0.0);
    row.metrics.emplace_back("iterations", rep.iterations);

    if (spec.kind == ExperimentKind::RateCheck) {
        const MixtureParams aligned = align_to(ctx.G, rep.params, truth);
        row.metrics.emplace_back("param_err", bottleneck_orbit_error(ctx.G, rep.params.thetas, truth.thetas));
        row.metrics.emplace_back("weight_err", (aligned.weights - truth.weights).norm());
        row.metrics.emplace_back("J", jt.J);
        return;
    }
    if (spec.kind == ExperimentKind::JCalibration) {
        row.metrics.emplace_back("J", jt.J);
        row.metrics.emplace_back("df", jt.df);
        row.metrics.emplace_back("p_value", jt.p_value.value_or(kNaN));
        row.metrics.emplace_back("reject5", jt.p_value && *jt.p_value < 0.05 ? 1.0 : 0.0);
        return;
    }
    // bound_check
    const MixtureParams aligned = align_to(ctx.G, rep.params, truth);
    const Eigen::MatrixXd Gj = chart_jacobian(ctx.map, truth);
    const QuotientFisher qf = quotient_fisher_from_jacobian(Gj, W);
    const double lhs = (to_chart(aligned) - to_chart(truth)).norm();
    const double rhs = 4.0 / qf.sigma_min * (Gj.transpose() * W * (psi - ctx.psi_star)).norm();
    row.metrics.emplace_back("lhs", lhs);
    row.metrics.emplace_back("rhs", rhs);
    row.metrics.emplace_back("sigma_min_IQ", qf.sigma_min);
    row.metrics.emplace_back("well_conditioned", qf.sigma_min >= spec.floor ? 1.0 : 0.0);
    row.metrics.emplace_back("holds", lhs <= rhs ? 1.0 : 0.0);
}

void k_consistency(const Context& ctx, const Eigen::MatrixXd& data, std::uint64_t seed, ExperimentRow& row) {
    const auto& spec = ctx.spec;
    const Eigen::MatrixXd F = ctx.map.feature_matrix(data);
    const Eigen::VectorXd psi = aggregate(F, EstimatorSpec::parse(spec.estimator));
    FitConfig cfg;
    cfg.restarts = spec.restarts;
    cfg.seed = derive_seed(seed, 1);
    cfg.record_trajectory = false;
    set_box_from_data(cfg, data);
    ResidualCurve curve = residual_curve(ctx.map, psi, spec.K_max, spec.model.params.sigma2, cfg);
    const long long n = data.rows();
    const int K_hat = select_k(curve, n, ctx.map.dim(), spec.tau, spec.t);

    double gamma = 0.0;
    try {
        std::vector<Eigen::VectorXd> atoms;
        for (const auto& t : spec.model.params.thetas) atoms.push_back(ctx.map.phi(t, spec.model.params.sigma2));
        gamma = simplex_margin(atoms, spec.model.params.weights).gamma;
    } catch (const Error&) {
        gamma = 0.0;
    }
    const double err = (psi - ctx.psi_star).norm();
    const bool event = err <= curve.eta / 2 && curve.eta <= gamma / 2;
    for (std::size_t i = 0; i < curve.Ks.size(); ++i) {
        row.metrics.emplace_back("r" + std::to_string(curve.Ks[i]), curve.residuals[i]);
    }
    row.metrics.emplace_back("eta", curve.eta);
    row.metrics.emplace_back("K_hat", K_hat);
    row.metrics.emplace_back("stack_err", err);
    row.metrics.emplace_back("gamma_star", gamma);
    row.metrics.emplace_back("sandwich_event", event ? 1.0 : 0.0);
    row.metrics.emplace_back("sandwich_ok", !event || K_hat == ctx.true_K ? 1.0 : 0.0);
}

std::vector<ExperimentRow> contamination(const Context& ctx, const Eigen::MatrixXd& clean, int r) {
    const auto& spec = ctx.spec;
    const long long n = clean.rows();
    const double base = std::sqrt(static_cast<double>(ctx.map.dim()) / static_cast<double>(n));
    std::vector<ExperimentRow> rows;
    for (double eps : spec.eps_values) {
        Eigen::MatrixXd data = clean;
        const long long bad = static_cast<long long>(std::floor(eps * static_cast<double>(n)));
        data.topRows(bad).setConstant(spec.outlier);
        const Eigen::MatrixXd F = ctx.map.feature_matrix(data);
        for (const auto& est : spec.estimators) {
            ExperimentRow row;
            row.replicate = r;
            row.n = n;
            row.eps = eps;
            row.estimator = est;
            try {
                const double err = (aggregate(F, EstimatorSpec::parse(est)) - ctx.psi_star).norm();
                row.metrics.emplace_back("stack_err", err);
                row.metrics.emplace_back("ratio", err / (base + eps));
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string sanitize(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

Json summarize(const ExperimentSpec& spec, const std::vector<ExperimentRow>& rows, int true_K) {
    Json s;
    s["kind"] = to_string(spec.kind);
    s["replicates"] = spec.replicates;
    s["seed"] = spec.seed;
    int failures = 0;
    for (const auto& r : rows) failures += r.status == "ok" ? 0 : 1;
    s["failures"] = failures;

    auto collect = [&](long long n, const std::string& metric, double eps = kNaN, const std::string& est = "") {
        std::vector<double> v;
        for (const auto& r : rows) {
            if (r.n != n || r.status != "ok") continue;
            if (!std::isnan(eps) && r.eps != eps) continue;
            if (!est.empty() && r.estimator != est) continue;
            const double x = r.metric(metric);
            if (!std::isnan(x)) v.push_back(x);
        }
        return v;
    };
    auto mean_of = [](const std::vector<double>& v) {
        double t = 0.0;
        for (double x : v) t += x;
        return v.empty() ? kNaN : t / static_cast<double>(v.size());
    };

    Json per_n = Json::array();
    std::vector<double> ns, stack_med, param_med;
    for (long long n : spec.n_values) {
        Json e;
        e["n"] = n;
        switch (spec.kind) {
            case ExperimentKind::RateCheck: {
                const auto st = collect(n, "stack_err");
                e["median_stack_err"] = median(st);
                ns.push_back(static_cast<double>(n));
                stack_med.push_back(median(st));
                if (spec.fit) {
                    const auto pe = collect(n, "param_err");
                    std::size_t below = 0;
                    for (double x : pe) below += x < 0.1 ? 1 : 0;
                    e["median_param_err"] = median(pe);
                    e["median_weight_err"] = median(collect(n, "weight_err"));
                    e["frac_param_err_below_0.1"] = pe.empty() ? kNaN : static_cast<double>(below) / pe.size();
                    param_med.push_back(median(pe));
                }
                break;
            }
            case ExperimentKind::JCalibration: {
                e["mean_J"] = mean_of(collect(n, "J"));
                e["rejection_rate_5"] = mean_of(collect(n, "reject5"));
                const auto df = collect(n, "df");
                e["df"] = df.empty() ? kNaN : df[0];
                break;
            }
            case ExperimentKind::KConsistency: {
                const auto kh = collect(n, "K_hat");
                std::size_t hit = 0, under = 0;
                for (double k : kh) {
                    hit += static_cast<int>(k) == true_K ? 1 : 0;
                    under += static_cast<int>(k) < true_K ? 1 : 0;
                }
                e["true_K"] = true_K;
                e["p_correct"] = kh.empty() ? kNaN : static_cast<double>(hit) / kh.size();
                e["p_under"] = kh.empty() ? kNaN : static_cast<double>(under) / kh.size();
                e["sandwich_events"] = collect(n, "sandwich_event").size() ? mean_of(collect(n, "sandwich_event")) : kNaN;
                e["sandwich_ok_rate"] = mean_of(collect(n, "sandwich_ok"));
                break;
            }
            case ExperimentKind::ContaminationSweep: {
                Json cells = Json::array();
                for (double eps : spec.eps_values) {
                    for (const auto& est : spec.estimators) {
                        Json c;
                        c["eps"] = eps;
                        c["estimator"] = est;
                        c["median_stack_err"] = median(collect(n, "stack_err", eps, est));
                        c["median_ratio"] = median(collect(n, "ratio", eps, est));
                        cells.push_back(c);
                    }
                }
                e["cells"] = cells;
                break;
            }
            case ExperimentKind::BoundCheck: {
                std::size_t well = 0, holds = 0;
                for (const auto& r : rows) {
                    if (r.n != n || r.status != "ok" || r.metric("well_conditioned") != 1.0) continue;
                    ++well;
                    holds += r.metric("holds") == 1.0 ? 1 : 0;
                }
                e["well_conditioned"] = well;
                e["holds_rate"] = well ? static_cast<double>(holds) / well : kNaN;
                break;
            }
        }
        per_n.push_back(e);
    }
    s["per_n"] = per_n;
    if (spec.kind == ExperimentKind::RateCheck && ns.size() >= 2) {
        s["stack_err_slope"] = log_log_slope(ns, stack_med);
        if (spec.fit) s["param_err_slope"] = log_log_slope(ns, param_med);
    }
    return s;
}

}  // namespace

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::RateCheck: return "rate_check";
        case ExperimentKind::JCalibration: return "j_calibration";
        case ExperimentKind::KConsistency: return "k_consistency";
        case ExperimentKind::ContaminationSweep: return "contamination_sweep";
        case ExperimentKind::BoundCheck: return "bound_check";
    }
    return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
    for (auto k : {ExperimentKind::RateCheck, ExperimentKind::JCalibration, ExperimentKind::KConsistency,
                   ExperimentKind::ContaminationSweep, ExperimentKind::BoundCheck}) {
        if (s == to_string(k)) return k;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown experiment kind '" + std::string(s) + "'");
}

ExperimentSpec ExperimentSpec::from_json(const Json& j) {
    ExperimentSpec s;
    try {
        s.kind = parse_experiment_kind(j.at("kind").get<std::string>());
        s.model = model_from_json(j.at("model"));
        s.n_values = j.at("n_values").get<std::vector<long long>>();
        if (j.contains("eps_values")) s.eps_values = j.at("eps_values").get<std::vector<double>>();
        s.replicates = j.value("replicates", s.replicates);
        s.seed = j.value("seed", s.seed);
        s.output = j.value("output", s.output);
        s.fit = j.value("fit", s.fit);
        s.restarts = j.value("restarts", s.restarts);
        s.estimator = j.value("estimator", s.estimator);
        s.cov = j.value("cov", s.cov);
        if (j.contains("estimators")) s.estimators = j.at("estimators").get<std::vector<std::string>>();
        s.outlier = j.value("outlier", s.outlier);
        s.K_max = j.value("K_max", s.K_max);
        s.tau = j.value("tau", s.tau);
        s.t = j.value("t", s.t);
        s.true_K = j.value("true_K", s.true_K);
        s.floor = j.value("floor", s.floor);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed experiment spec: ") + e.what());
    }
    s.validate();
    return s;
}

void ExperimentSpec::validate() const {
    if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "replicates must be >= 1");
    if (n_values.empty()) throw Error(ErrorCode::InvalidArgument, "n_values is empty");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (n_values[i] < 2 || (i > 0 && n_values[i] <= n_values[i - 1])) {
            throw Error(ErrorCode::InvalidArgument, "n_values must be increasing and >= 2");
        }
    }
    for (double e : eps_values) {
        if (!(e >= 0 && e < 0.5)) throw Error(ErrorCode::InvalidArgument, "eps values must lie in [0, 0.5)");
    }
    if (K_max < 1) throw Error(ErrorCode::InvalidArgument, "K_max must be >= 1");
    EstimatorSpec::parse(estimator);
    CovSpec::parse(cov);
    for (const auto& e : estimators) EstimatorSpec::parse(e);
}

double ExperimentRow::metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
        if (k == name) return v;
    }
    return kNaN;
}

std::string ExperimentResult::csv() const {
    std::vector<std::string> cols;
    for (const auto& r : rows) {
        for (const auto& kv : r.metrics) {
            if (std::find(cols.begin(), cols.end(), kv.first) == cols.end()) cols.push_back(kv.first);
        }
    }
    std::ostringstream os;
    os << std::setprecision(17) << "replicate,n,eps,estimator,status";
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    for (const auto& r : rows) {
        os << r.replicate << ',' << r.n << ',' << r.eps << ',' << sanitize(r.estimator) << ',' << sanitize(r.status);
        for (const auto& c : cols) {
            const double v = r.metric(c);
            os << ',';
            if (std::isnan(v)) {
                os << "nan";
            } else {
                os << v;
            }
        }
        os << '\n';
    }
    return os.str();
}

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    const std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + h, v.end());
    if (v.size() % 2 == 1) return v[h];
    return 0.5 * (v[h] + *std::max_element(v.begin(), v.begin() + h));
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "slope needs >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    FiniteGroup G = FiniteGroup::parse(spec.model.group);
    spec.model.params.validate(&G);
    InvariantMap map = InvariantMap::up_to(G, spec.model.m_star);
    const Eigen::VectorXd psi_star = map.mixture_stack(spec.model.params);
    const int true_K = spec.true_K > 0 ? spec.true_K : spec.model.params.K();
    const Context ctx{spec, G, map, psi_star, true_K};

    const std::size_t cells = spec.n_values.size();
    const std::size_t tasks = cells * static_cast<std::size_t>(spec.replicates);
    std::vector<std::vector<ExperimentRow>> out(tasks);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t task = 0; task < tasks; ++task) {
        const std::size_t cell = task / spec.replicates;
        const int r = static_cast<int>(task % spec.replicates);
        const long long n = spec.n_values[cell];
        const std::uint64_t seed = derive_seed(derive_seed(spec.seed, cell), static_cast<std::uint64_t>(r));
        try {
            const Eigen::MatrixXd data = sample(spec.model.params, G, static_cast<int>(n), seed);
            if (spec.kind == ExperimentKind::ContaminationSweep) {
                out[task] = contamination(ctx, data, r);
                continue;
            }
            ExperimentRow row;
            row.replicate = r;
            row.n = n;
            row.estimator = spec.estimator;
            try {
                if (spec.kind == ExperimentKind::KConsistency) {
                    k_consistency(ctx, data, seed, row);
                } else {
                    rate_or_j(ctx, data, seed, row);
                }
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
                row.metrics.clear();
            }
            out[task].push_back(std::move(row));
        } catch (const std::exception& e) {
            ExperimentRow row;
            row.replicate = r;
            row.n = n;
            row.status = std::string("error: ") + e.what();
            out[task].push_back(std::move(row));
        }
    }

    ExperimentResult res;
    // Task order is (n, replicate); contamination rows are regrouped to (n, eps, replicate, estimator).
    for (std::size_t cell = 0; cell < cells; ++cell) {
        if (spec.kind == ExperimentKind::ContaminationSweep) {
            for (double eps : spec.eps_values) {
                for (int r = 0; r < spec.replicates; ++r) {
                    for (const auto& row : out[cell * spec.replicates + r]) {
                        if (row.eps == eps) res.rows.push_back(row);
                    }
                }
            }
        } else {
            for (int r = 0; r < spec.replicates; ++r) {
                for (const auto& row : out[cell * spec.replicates + r]) res.rows.push_back(row);
            }
        }
    }
    res.summary = summarize(spec, res.rows, true_K);
    if (!spec.output.empty()) {
        write_text(spec.output + ".csv", res.csv());
        write_text(spec.output + ".json", res.summary.dump(2) + "\n");
    }
    return res;
}

}  // namespace orbitmix
