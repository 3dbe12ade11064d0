#include "orbitmix/stack_estimators.hpp"

#include "orbitmix/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <vector>

namespace orbitmix {

namespace {

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double hi = v[n / 2];
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + n / 2);
    return 0.5 * (lo + hi);
}

double parse_double(std::string_view s, std::string_view what) {
    try {
        std::size_t used = 0;
        std::string buf(s);
        double v = std::stod(buf, &used);
        if (used != buf.size()) throw std::invalid_argument(buf);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "cannot parse number in '" + std::string(what) + "'");
    }
}

// Sum_i psi(a (x_i - u)) and its u-derivative.
std::pair<double, double> catoni_equation(const double* x, Eigen::Index n, Eigen::Index stride, double a, double u) {
    double f = 0.0, df = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double z = a * (x[i * stride] - u);
        const double az = std::abs(z);
        f += std::copysign(std::log1p(az + 0.5 * z * z), z);
        df -= a * (1.0 + az) / (1.0 + az + 0.5 * z * z);
    }
    return {f, df};
}

double catoni_root(const double* x, Eigen::Index n, Eigen::Index stride, double a) {
    double lo = x[0], hi = x[0];
    for (Eigen::Index i = 1; i < n; ++i) {
        lo = std::min(lo, x[i * stride]);
        hi = std::max(hi, x[i * stride]);
    }
    if (lo == hi) return lo;
    // The estimating function is strictly decreasing in u, positive at min(x)-1 and negative at max(x)+1.
    lo -= 1.0;
    hi += 1.0;
    const double tol = 1e-10 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
    for (int it = 0; it < 200 && hi - lo > 1e-6 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (catoni_equation(x, n, stride, a, mid).first > 0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    double u = 0.5 * (lo + hi);
    for (int it = 0; it < 50; ++it) {
        auto [f, df] = catoni_equation(x, n, stride, a, u);
        if (df == 0.0) break;
        double next = u - f / df;
        if (next < lo || next > hi) next = 0.5 * (lo + hi);
        if (f > 0) {
            lo = u;
        } else {
            hi = u;
        }
        const bool done = std::abs(next - u) <= tol;
        u = next;
        if (done) break;
    }
    return u;
}

}  // namespace

EstimatorSpec EstimatorSpec::parse(std::string_view s) {
    EstimatorSpec spec;
    if (s == "mean") return spec;
    if (s.starts_with("mom:")) {
        spec.kind = EstimatorKind::Mom;
        const double b = parse_double(s.substr(4), s);
        if (b < 1 || b != std::floor(b)) throw Error(ErrorCode::InvalidArgument, "MOM block count must be a positive integer");
        spec.blocks = static_cast<int>(b);
        return spec;
    }
    if (s.starts_with("catoni:")) {
        spec.kind = EstimatorKind::Catoni;
        spec.delta = parse_double(s.substr(7), s);
        if (!(spec.delta > 0 && spec.delta < 1)) throw Error(ErrorCode::InvalidArgument, "Catoni delta must be in (0,1)");
        return spec;
    }
    throw Error(ErrorCode::InvalidArgument, "estimator must be mean, mom:B or catoni:delta");
}

std::string EstimatorSpec::to_string() const {
    std::ostringstream os;
    switch (kind) {
        case EstimatorKind::Mean: os << "mean"; break;
        case EstimatorKind::Mom: os << "mom:" << blocks; break;
        case EstimatorKind::Catoni: os << "catoni:" << delta; break;
    }
    return os.str();
}

Eigen::VectorXd mom_mean(const Eigen::MatrixXd& values, int B) {
    const Eigen::Index n = values.rows();
    if (B < 1 || B > n) throw Error(ErrorCode::InvalidArgument, "MOM needs 1 <= B <= n");
    const Eigen::Index size = n / B;
    Eigen::MatrixXd means(B, values.cols());
    for (int b = 0; b < B; ++b) means.row(b) = values.middleRows(b * size, size).colwise().mean();
    Eigen::VectorXd out(values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        out[j] = median_of(std::vector<double>(means.col(j).data(), means.col(j).data() + B));
    }
    return out;
}

double catoni_psi(double x) { return std::copysign(std::log1p(std::abs(x) + 0.5 * x * x), x); }

Eigen::VectorXd catoni_mean(const Eigen::MatrixXd& values, double delta, const Eigen::VectorXd& c) {
    const Eigen::Index n = values.rows();
    const Eigen::Index D = values.cols();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "Catoni needs n >= 2");
    if (!(delta > 0 && delta < 1)) throw Error(ErrorCode::InvalidArgument, "Catoni delta must be in (0,1)");
    if (c.size() != 0 && c.size() != D) throw Error(ErrorCode::DimensionMismatch, "Catoni scale vector has wrong length");
    const double base = std::sqrt(std::log(2.0 * static_cast<double>(D) / delta) / static_cast<double>(n));
    Eigen::VectorXd out(D);
    for (Eigen::Index j = 0; j < D; ++j) {
        const double a = (c.size() ? c[j] : 1.0) * base;
        out[j] = catoni_root(values.col(j).data(), n, 1, a);
    }
    return out;
}

Eigen::VectorXd robust_scale(const Eigen::MatrixXd& values) {
    Eigen::VectorXd s(values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        std::vector<double> col(values.col(j).data(), values.col(j).data() + values.rows());
        const double med = median_of(col);
        for (double& v : col) v = std::abs(v - med);
        double scale = 1.4826 * median_of(col);
        if (!(scale > 0)) {
            const double mean = values.col(j).mean();
            scale = std::sqrt((values.col(j).array() - mean).square().mean());
        }
        s[j] = scale > 0 ? scale : 1.0;
    }
    return s;
}

Eigen::VectorXd aggregate(const Eigen::MatrixXd& values, const EstimatorSpec& spec) {
    if (values.rows() < 1) throw Error(ErrorCode::InvalidArgument, "no observations");
    switch (spec.kind) {
        case EstimatorKind::Mean: return values.colwise().mean().transpose();
        case EstimatorKind::Mom:
            if (spec.blocks > values.rows()) throw Error(ErrorCode::InvalidArgument, "MOM block count exceeds n");
            return mom_mean(values, spec.blocks);
        case EstimatorKind::Catoni: {
            Eigen::VectorXd c;
            if (spec.scale == CatoniScale::Robust) c = robust_scale(values).cwiseInverse();
            return catoni_mean(values, spec.delta, c);
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown estimator");
}

InvariantStack empirical_stack(const InvariantMap& map, const Eigen::MatrixXd& data, const EstimatorSpec& spec) {
    return map.wrap(aggregate(map.feature_matrix(data), spec));
}

CovSpec CovSpec::parse(std::string_view s) {
    CovSpec spec;
    if (s == "iid") return spec;
    if (s == "hac") {
        spec.mode = CovMode::Hac;
        return spec;
    }
    if (s.starts_with("hac:")) {
        spec.mode = CovMode::Hac;
        const double b = parse_double(s.substr(4), s);
        if (b < 0 || b != std::floor(b)) throw Error(ErrorCode::InvalidArgument, "HAC bandwidth must be a nonnegative integer");
        spec.bandwidth = static_cast<int>(b);
        return spec;
    }
    throw Error(ErrorCode::InvalidArgument, "covariance must be iid, hac or hac:b");
}

int default_hac_bandwidth(long long n) {
    return static_cast<int>(std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 2.0 / 9.0)));
}

CovEstimate covariance(const Eigen::MatrixXd& features, const CovSpec& spec) {
    const Eigen::Index n = features.rows();
    const Eigen::Index D = features.cols();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "covariance needs n >= 2");
    if (n <= D) std::cerr << "warning: covariance with n=" << n << " <= D=" << D << " is rank deficient\n";
    const Eigen::MatrixXd Z = features.rowwise() - features.colwise().mean();
    CovEstimate est;
    est.mode = spec.mode;
    est.matrix = Z.transpose() * Z / static_cast<double>(n);
    if (spec.mode == CovMode::Hac) {
        est.bandwidth = spec.bandwidth >= 0 ? spec.bandwidth : default_hac_bandwidth(n);
        for (int l = 1; l <= est.bandwidth && l < n; ++l) {
            const Eigen::MatrixXd gamma = Z.bottomRows(n - l).transpose() * Z.topRows(n - l) / static_cast<double>(n);
            est.matrix += (1.0 - static_cast<double>(l) / (est.bandwidth + 1)) * (gamma + gamma.transpose());
        }
    }
    est.matrix = 0.5 * (est.matrix + est.matrix.transpose()).eval();
    if (spec.ridge >= 0) {
        est.ridge = spec.ridge;
        est.matrix.diagonal().array() += est.ridge;
    } else {
        // Feature scales differ by orders of magnitude across degrees; ridge each variance relatively.
        est.ridge = kRelativeRidge;
        est.relative_ridge = true;
        est.matrix.diagonal() *= 1.0 + kRelativeRidge;
    }
    return est;
}

CovEstimate covariance(const InvariantMap& map, const Eigen::MatrixXd& data, const CovSpec& spec) {
    return covariance(map.feature_matrix(data), spec);
}

}  // namespace orbitmix
