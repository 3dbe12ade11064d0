#include "orbitmix/cli.hpp"

#include "orbitmix/error.hpp"
#include "orbitmix/experiment.hpp"
#include "orbitmix/gmm_fit.hpp"
#include "orbitmix/io.hpp"
#include "orbitmix/molien.hpp"
#include "orbitmix/orbit_metric.hpp"
#include "orbitmix/selection.hpp"
#include "orbitmix/stack_estimators.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace orbitmix {

namespace {

struct DataOptions {
    std::string data;
    bool header = false;
    std::string group;
    int m_star = 4;
    double sigma = 1.0;
    std::string estimator = "mean";
    std::string cov = "iid";
    int restarts = 20;
    std::uint64_t seed = 0;
    std::string out;
};

void add_data_options(CLI::App* app, DataOptions& o) {
    app->add_option("--data", o.data, "CSV file, one observation per row")->required();
    app->add_flag("--header", o.header, "skip the first CSV line");
    app->add_option("--group", o.group, "group spec, e.g. hyperoct:2")->required();
    app->add_option("--mstar", o.m_star, "highest moment degree")->check(CLI::Range(1, kMaxIsserlisOrder));
    app->add_option("--sigma", o.sigma, "known component standard deviation")->check(CLI::PositiveNumber);
    app->add_option("--estimator", o.estimator, "mean | mom:B | catoni:delta");
    app->add_option("--cov", o.cov, "iid | hac | hac:b");
    app->add_option("--restarts", o.restarts, "random restarts")->check(CLI::NonNegativeNumber);
    app->add_option("--seed", o.seed, "master seed");
    app->add_option("--out", o.out, "output path (stdout when omitted)");
}

void emit(const Json& j, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << j.dump(2) << '\n';
    } else {
        write_text(path, j.dump(2) + "\n");
    }
}

Json maybe(std::optional<double> v) { return v ? Json(*v) : Json(nullptr); }

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json tiny_table(int d, int m) {
    Json rows = Json::array();
    const std::vector<std::string> specs = {"signflips:" + std::to_string(d), "sym:" + std::to_string(d),
                                            "hyperoct:" + std::to_string(d), "dihedral:" + std::to_string(m)};
    for (const auto& spec : specs) {
        const MolienSeries closed = molien_family(spec, 4);
        const MolienSeries generic = molien_generic(FiniteGroup::parse(spec), 4);
        Json r;
        r["group"] = spec;
        r["coeffs"] = closed.coeffs;
        r["generic_agrees"] = closed.coeffs == generic.coeffs;
        rows.push_back(r);
    }
    return rows;
}

int cmd_simulate(const std::string& model_path, long long n, std::uint64_t seed, const std::string& out_path,
                 std::ostream& out) {
    const ModelSpec model = read_model(model_path);
    const FiniteGroup G = FiniteGroup::parse(model.group);
    model.params.validate(&G);
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "--n must be >= 1");
    const Eigen::MatrixXd data = sample(model.params, G, static_cast<int>(n), seed);
    if (out_path.empty()) {
        out << format_csv(data);
    } else {
        write_csv(out_path, data);
    }
    return 0;
}

struct FitOptions {
    DataOptions data;
    int K = 1;
    std::string init;
    std::string weight = "inverse_cov";
    std::string theta_step = "gauss_newton";
    int max_iter = 500;
    bool bias = false;
};

int cmd_fit(const FitOptions& o, std::ostream& out) {
    const FiniteGroup G = FiniteGroup::parse(o.data.group);
    const Eigen::MatrixXd X = read_csv(o.data.data, o.data.header);
    if (X.cols() != G.dim()) throw Error(ErrorCode::DimensionMismatch, "data columns differ from the group dimension");
    const InvariantMap map = InvariantMap::up_to(G, o.data.m_star);
    const Eigen::MatrixXd F = map.feature_matrix(X);
    const EstimatorSpec est = EstimatorSpec::parse(o.data.estimator);
    const Eigen::VectorXd psi = aggregate(F, est);
    const CovEstimate cov = covariance(F, CovSpec::parse(o.data.cov));
    const Eigen::MatrixXd Wopt = inverse_weight(cov.matrix, 0.0);
    const Eigen::MatrixXd W = o.weight == "identity" ? Eigen::MatrixXd::Identity(map.dim(), map.dim()) : Wopt;
    const Eigen::VectorXd sigma2 = isotropic(G.dim(), o.data.sigma * o.data.sigma);

    FitConfig cfg;
    cfg.restarts = o.data.restarts;
    cfg.seed = o.data.seed;
    cfg.max_iter = o.max_iter;
    cfg.record_trajectory = false;
    cfg.theta_step = o.theta_step == "gradient" ? ThetaStep::Gradient : ThetaStep::GaussNewton;
    set_box_from_data(cfg, X);
    if (!o.init.empty()) cfg.init = {read_model(o.init).params.thetas};
    const FitReport rep = fit(map, psi, W, o.K, sigma2, cfg);

    const long long n = X.rows();
    const QuotientFisher qf = quotient_fisher_diag(map, rep.params, Wopt);
    const JTest jt = j_test(map, rep.params, psi, Wopt, n);
    const double s_min = std::sqrt(qf.sigma_min);

    Json j;
    j["params"] = to_json(rep.params.thetas);
    j["weights"] = to_json(rep.params.weights);
    j["converged"] = rep.converged;
    j["iterations"] = rep.iterations;
    j["objective"] = rep.objective;
    j["sigma_min_IQ"] = qf.sigma_min;
    j["cond_IQ"] = finite_or_null(qf.cond);
    j["J"] = jt.J;
    j["df"] = jt.df;
    j["p_value"] = maybe(jt.p_value);
    j["radius_95"] = s_min > 0 ? Json(confidence_radius(s_min, map.dim(), n, 0.05)) : Json(nullptr);
    j["group"] = G.spec();
    j["m_star"] = o.data.m_star;
    j["D_inv"] = map.dim();
    j["n"] = n;
    j["estimator"] = est.to_string();
    if (est.kind == EstimatorKind::Mom) j["mom_dropped_rows"] = n % est.blocks;
    j["cov"] = o.data.cov;
    j["message"] = rep.message;
    if (o.bias) {
        std::string msg;
        const MixtureParams bc = bias_correct(map, rep.params, cov.matrix, n, &msg);
        j["bias_corrected"] = {{"params", to_json(bc.thetas)}, {"weights", to_json(bc.weights)}, {"message", msg}};
    }
    emit(j, o.data.out, out);
    return 0;
}

struct SelectOptions {
    DataOptions data;
    int K_max = 4;
    double tau = 2.0;
    double t = -1.0;
    std::string model;
};

int cmd_select(const SelectOptions& o, std::ostream& out) {
    const FiniteGroup G = FiniteGroup::parse(o.data.group);
    const Eigen::MatrixXd X = read_csv(o.data.data, o.data.header);
    if (X.cols() != G.dim()) throw Error(ErrorCode::DimensionMismatch, "data columns differ from the group dimension");
    const InvariantMap map = InvariantMap::up_to(G, o.data.m_star);
    const Eigen::VectorXd psi = aggregate(map.feature_matrix(X), EstimatorSpec::parse(o.data.estimator));
    const Eigen::VectorXd sigma2 = isotropic(G.dim(), o.data.sigma * o.data.sigma);
    FitConfig cfg;
    cfg.restarts = o.data.restarts;
    cfg.seed = o.data.seed;
    cfg.record_trajectory = false;
    set_box_from_data(cfg, X);
    ResidualCurve curve = residual_curve(map, psi, o.K_max, sigma2, cfg);
    select_k(curve, X.rows(), map.dim(), o.tau, o.t);
    Json j;
    j["residuals"] = curve.residuals;
    j["eta_n"] = curve.eta;
    j["K_hat"] = curve.K_hat;
    j["D_inv"] = map.dim();
    if (!o.model.empty()) {
        const ModelSpec m = read_model(o.model);
        std::vector<Eigen::VectorXd> atoms;
        for (const auto& t : m.params.thetas) atoms.push_back(map.phi(t, m.params.sigma2));
        try {
            j["margin_oracle"] = finite_or_null(simplex_margin(atoms, m.params.weights).gamma);
        } catch (const Error&) {
            j["margin_oracle"] = 0.0;
        }
    }
    emit(j, o.data.out, out);
    return 0;
}

int cmd_molien(const std::string& group, const std::string& family, int max_degree, const std::vector<int>& mstars,
               bool table, int table_d, int table_m, const std::string& out_path, std::ostream& out) {
    Json j;
    if (table) {
        j["tiny_table"] = tiny_table(table_d, table_m);
        emit(j, out_path, out);
        return 0;
    }
    if (group.empty() == family.empty()) throw CLI::ValidationError("exactly one of --group or --family is required");
    MolienSeries series;
    if (!group.empty()) {
        series = molien_generic(FiniteGroup::parse(group), max_degree);
        j["group"] = group;
        j["coeffs"] = series.coeffs;
        j["closed_form"] = molien_family(group, max_degree).coeffs;
    } else {
        series = molien_family(family, max_degree);
        j["family"] = family;
        j["coeffs"] = series.coeffs;
    }
    Json budgets = Json::array();
    for (int m : mstars) {
        if (m < 0 || m > max_degree) throw Error(ErrorCode::InvalidArgument, "--mstar must lie in [0, max-degree]");
        const DimBudget b = dim_budget(series, m);
        budgets.push_back({{"m_star", m}, {"inclusive", b.inclusive}, {"exclusive", b.exclusive}});
    }
    if (!mstars.empty()) j["budgets"] = budgets;
    emit(j, out_path, out);
    return 0;
}

int cmd_dist(const std::string& a_path, const std::string& b_path, const std::string& group, bool header,
             const std::string& out_path, std::ostream& out) {
    const FiniteGroup G = FiniteGroup::parse(group);
    const Eigen::MatrixXd A = read_csv(a_path, header);
    const Eigen::MatrixXd B = read_csv(b_path, header);
    if (A.cols() != G.dim() || B.cols() != G.dim()) throw Error(ErrorCode::DimensionMismatch, "multisets must have p columns");
    if (A.rows() != B.rows()) throw Error(ErrorCode::DimensionMismatch, "multisets must have equal size");
    std::vector<Eigen::VectorXd> a, b;
    for (Eigen::Index i = 0; i < A.rows(); ++i) a.push_back(A.row(i).transpose());
    for (Eigen::Index i = 0; i < B.rows(); ++i) b.push_back(B.row(i).transpose());
    const Eigen::MatrixXd C = cost_matrix(G, a, b);
    const double dH = hausdorff_multiset(C);
    const BottleneckResult bn = bottleneck_matching(C);
    Json j;
    j["cost_matrix"] = to_json(C);
    j["d_H"] = dH;
    j["bottleneck"] = bn.value;
    j["assignment"] = bn.assignment;
    j["exact_at_hausdorff"] = bn.exact_at_hausdorff;
    j["ratio"] = dH > 0 ? Json(bn.value / dH) : Json(nullptr);
    emit(j, out_path, out);
    return 0;
}

int cmd_experiment(const std::string& spec_path, std::optional<std::uint64_t> seed, const std::string& out_prefix,
                   std::ostream& out) {
    Json sj;
    try {
        sj = Json::parse(read_text(spec_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::Io, std::string("cannot parse experiment spec: ") + e.what());
    }
    ExperimentSpec spec = ExperimentSpec::from_json(sj);
    if (seed) spec.seed = *seed;
    if (!out_prefix.empty()) spec.output = out_prefix;
    if (!spec.output.empty()) {
        for (const char* ext : {".csv", ".json"}) {
            std::error_code ec;
            if (std::filesystem::equivalent(spec.output + ext, spec_path, ec)) {
                throw Error(ErrorCode::InvalidArgument, "output " + spec.output + ext + " would overwrite the spec");
            }
        }
    }
    const ExperimentResult res = run_experiment(spec);
    out << res.summary.dump(2) << '\n';
    return 0;
}

void configure_threads() {
#ifdef _OPENMP
    if (const char* env = std::getenv("ORBITMIX_THREADS")) {
        const int t = std::atoi(env);
        if (t > 0) omp_set_num_threads(t);
    }
#endif
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    configure_threads();
    CLI::App app{"Finite mixtures identifiable up to a finite group action"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::string model_path, sim_out;
    long long sim_n = 1000;
    std::uint64_t sim_seed = 0;
    auto* sim = app.add_subcommand("simulate", "sample a folded Gaussian mixture");
    sim->add_option("--model", model_path, "model JSON")->required();
    sim->add_option("--n", sim_n, "sample size");
    sim->add_option("--seed", sim_seed, "seed");
    sim->add_option("--out", sim_out, "CSV output (stdout when omitted)");

    FitOptions fo;
    auto* fitc = app.add_subcommand("fit", "invariant GMM fit");
    add_data_options(fitc, fo.data);
    fitc->add_option("--K", fo.K, "number of components")->check(CLI::PositiveNumber);
    fitc->add_option("--init", fo.init, "model JSON whose thetas seed the first start");
    fitc->add_option("--weight", fo.weight, "inverse_cov | identity")->check(CLI::IsMember({"inverse_cov", "identity"}));
    fitc->add_option("--theta-step", fo.theta_step, "gauss_newton | gradient")
        ->check(CLI::IsMember({"gauss_newton", "gradient"}));
    fitc->add_option("--max-iter", fo.max_iter, "iteration cap")->check(CLI::PositiveNumber);
    fitc->add_flag("--bias-correct", fo.bias, "also report the curvature-corrected estimate");

    SelectOptions so;
    auto* sel = app.add_subcommand("select-k", "choose the number of components");
    add_data_options(sel, so.data);
    sel->add_option("--Kmax", so.K_max, "largest K tried")->check(CLI::PositiveNumber);
    sel->add_option("--tau", so.tau, "threshold multiplier")->check(CLI::PositiveNumber);
    sel->add_option("--t", so.t, "confidence term (default log n)");
    sel->add_option("--model", so.model, "true model JSON, for the margin oracle");

    std::string mol_group, mol_family, mol_out;
    int mol_deg = 6, table_d = 4, table_m = 3;
    std::vector<int> mol_mstar;
    bool mol_table = false;
    std::uint64_t unused_seed = 0;
    auto* mol = app.add_subcommand("molien", "Molien series coefficients and invariant budgets");
    mol->add_option("--group", mol_group, "enumerable group spec");
    mol->add_option("--family", mol_family, "closed-form family (also platonic:T|O|I, gmpn:m,p,n)");
    mol->add_option("--max-degree", mol_deg, "highest degree")->check(CLI::Range(0, 200));
    mol->add_option("--mstar", mol_mstar, "degrees for the dimension budget");
    mol->add_flag("--tiny-table", mol_table, "render the small-degree table for the standard families");
    mol->add_option("--table-d", table_d, "d for the table rows")->check(CLI::Range(1, 6));
    mol->add_option("--table-m", table_m, "m for the dihedral row")->check(CLI::Range(2, 64));
    mol->add_option("--seed", unused_seed, "accepted for uniformity; unused");
    mol->add_option("--out", mol_out, "output path");

    std::string dist_a, dist_b, dist_group, dist_out;
    bool dist_header = false;
    auto* dist = app.add_subcommand("dist", "orbit distances between two multisets");
    dist->add_option("--a", dist_a, "CSV of K parameters")->required();
    dist->add_option("--b", dist_b, "CSV of K parameters")->required();
    dist->add_option("--group", dist_group, "group spec")->required();
    dist->add_flag("--header", dist_header, "skip the first CSV line");
    dist->add_option("--seed", unused_seed, "accepted for uniformity; unused");
    dist->add_option("--out", dist_out, "output path");

    std::string exp_spec, exp_out;
    std::optional<std::uint64_t> exp_seed;
    auto* exp = app.add_subcommand("experiment", "Monte Carlo experiment harness");
    exp->add_option("--spec", exp_spec, "experiment spec JSON")->required();
    exp->add_option("--seed", exp_seed, "override the spec seed");
    exp->add_option("--out", exp_out, "output prefix for <out>.csv and <out>.json");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(model_path, sim_n, sim_seed, sim_out, out);
        if (fitc->parsed()) return cmd_fit(fo, out);
        if (sel->parsed()) return cmd_select(so, out);
        if (mol->parsed()) {
            return cmd_molien(mol_group, mol_family, mol_deg, mol_mstar, mol_table, table_d, table_m, mol_out, out);
        }
        if (dist->parsed()) return cmd_dist(dist_a, dist_b, dist_group, dist_header, dist_out, out);
        if (exp->parsed()) return cmd_experiment(exp_spec, exp_seed, exp_out, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace orbitmix
