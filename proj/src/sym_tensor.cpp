#include "orbitmix/sym_tensor.hpp"

#include "orbitmix/error.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <tuple>

namespace orbitmix {

namespace {

long long binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    long long r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > 4 * kMaxSymDim * kMaxSymDim) return r;  // large enough to trip any guard
    }
    return r;
}

// Position of a sorted multi-index in the lexicographic list of nondecreasing sequences.
int rank_sorted(int d, const std::vector<int>& idx) {
    const int m = static_cast<int>(idx.size());
    long long r = 0;
    int prev = 0;
    for (int k = 0; k < m; ++k) {
        const int rest = m - k - 1;
        for (int v = prev; v < idx[k]; ++v) r += binom(d - v + rest - 1, rest);
        prev = idx[k];
    }
    return static_cast<int>(r);
}

std::unique_ptr<MultiIndexTable> make_table(int d, int m) {
    auto t = std::make_unique<MultiIndexTable>();
    t->d = d;
    t->m = m;
    std::vector<int> cur(m, 0);
    while (true) {
        t->index.push_back(cur);
        int pos = m - 1;
        while (pos >= 0 && cur[pos] == d - 1) --pos;
        if (pos < 0) break;
        ++cur[pos];
        for (int k = pos + 1; k < m; ++k) cur[k] = cur[pos];
    }
    double mfact = 1.0;
    for (int i = 2; i <= m; ++i) mfact *= i;
    for (const auto& idx : t->index) {
        double denom = 1.0;
        int run = 1;
        for (int k = 1; k <= m; ++k) {
            if (k < m && idx[k] == idx[k - 1]) {
                ++run;
            } else {
                for (int i = 2; i <= run; ++i) denom *= i;
                run = 1;
            }
        }
        t->multiplicity.push_back(mfact / denom);
        std::vector<int> up(d);
        for (int j = 0; j < d; ++j) {
            std::vector<int> raised(idx);
            raised.insert(std::upper_bound(raised.begin(), raised.end(), j), j);
            up[j] = rank_sorted(d, raised);
        }
        t->raise.push_back(std::move(up));
    }
    return t;
}

struct GroupDegreeKey {
    std::string spec;
    int m;
    bool operator<(const GroupDegreeKey& o) const { return std::tie(spec, m) < std::tie(o.spec, o.m); }
};

}  // namespace

long long sym_dim(int d, int m) { return binom(d + m - 1, m); }

const MultiIndexTable& multi_indices(int d, int m) {
    if (d < 1 || m < 0) throw Error(ErrorCode::InvalidArgument, "multi_indices needs d >= 1 and m >= 0");
    if (sym_dim(d, m) > kMaxSymDim) {
        throw Error(ErrorCode::Sizing, "Sym^" + std::to_string(m) + "(R^" + std::to_string(d) + ") exceeds 10^5 coordinates");
    }
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<MultiIndexTable>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{d, m}];
    if (!slot) slot = make_table(d, m);
    return *slot;
}

SymTensor::SymTensor(int d, int m) : d_(d), m_(m), coords_(Eigen::VectorXd::Zero(multi_indices(d, m).size())) {}

SymTensor::SymTensor(int d, int m, Eigen::VectorXd coords) : d_(d), m_(m), coords_(std::move(coords)) {
    if (coords_.size() != multi_indices(d, m).size()) {
        throw Error(ErrorCode::DimensionMismatch, "SymTensor coordinate length does not match C(d+m-1, m)");
    }
}

SymTensor SymTensor::rank_one(const Eigen::VectorXd& x, int m) {
    return SymTensor(static_cast<int>(x.size()), m, monomials(x, m));
}

double SymTensor::at(std::vector<int> idx) const {
    if (static_cast<int>(idx.size()) != m_) throw Error(ErrorCode::DimensionMismatch, "multi-index has wrong order");
    std::sort(idx.begin(), idx.end());
    return coords_[rank_sorted(d_, idx)];
}

double inner(const SymTensor& a, const SymTensor& b) {
    if (a.d() != b.d() || a.m() != b.m()) throw Error(ErrorCode::DimensionMismatch, "inner: tensor shapes differ");
    const auto& t = multi_indices(a.d(), a.m());
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) s += t.multiplicity[i] * a.coords()[i] * b.coords()[i];
    return s;
}

Eigen::VectorXd monomials(const Eigen::VectorXd& x, int m) {
    const auto& t = multi_indices(static_cast<int>(x.size()), m);
    Eigen::VectorXd out(t.size());
    for (int a = 0; a < t.size(); ++a) {
        double v = 1.0;
        for (int i : t.index[a]) v *= x[i];
        out[a] = v;
    }
    return out;
}

Eigen::MatrixXd induced_action(const Eigen::MatrixXd& Q, int m) {
    const int d = static_cast<int>(Q.rows());
    const auto& target = multi_indices(d, m);
    std::vector<const MultiIndexTable*> tables;
    for (int k = 0; k <= m; ++k) tables.push_back(&multi_indices(d, k));

    // Row alpha holds the coefficients of prod_k (Q_{alpha_k, .} . y) as a polynomial in y.
    Eigen::MatrixXd A(target.size(), target.size());
    std::vector<Eigen::VectorXd> poly(m + 1);
    for (int k = 0; k <= m; ++k) poly[k].resize(tables[k]->size());
    for (int alpha = 0; alpha < target.size(); ++alpha) {
        poly[0].setConstant(1.0);
        for (int k = 0; k < m; ++k) {
            poly[k + 1].setZero();
            const int row = target.index[alpha][k];
            for (int a = 0; a < tables[k]->size(); ++a) {
                const double c = poly[k][a];
                if (c == 0.0) continue;
                for (int j = 0; j < d; ++j) {
                    const double q = Q(row, j);
                    if (q != 0.0) poly[k + 1][tables[k]->raise[a][j]] += c * q;
                }
            }
        }
        A.row(alpha) = poly[m].transpose();
    }
    return A;
}

const Eigen::MatrixXd& reynolds_matrix(const FiniteGroup& G, int m) {
    static std::mutex mu;
    static std::map<GroupDegreeKey, std::unique_ptr<Eigen::MatrixXd>> cache;
    GroupDegreeKey key{G.spec(), m};
    {
        std::lock_guard lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return *it->second;
    }
    const int N = multi_indices(G.dim(), m).size();
    auto P = std::make_unique<Eigen::MatrixXd>(Eigen::MatrixXd::Zero(N, N));
    for (int i = 0; i < G.order(); ++i) *P += induced_action(G.matrix(i), m);
    *P /= G.order();
    std::lock_guard lock(mu);
    auto& slot = cache[key];
    if (!slot) slot = std::move(P);
    return *slot;
}

SymTensor reynolds_project(const FiniteGroup& G, const SymTensor& T) {
    if (T.d() != G.dim()) throw Error(ErrorCode::DimensionMismatch, "reynolds_project: tensor dimension != group dimension");
    return SymTensor(T.d(), T.m(), reynolds_matrix(G, T.m()) * T.coords());
}

std::shared_ptr<const InvariantBasis> invariant_basis(const FiniteGroup& G, int m) {
    static std::mutex mu;
    static std::map<GroupDegreeKey, std::shared_ptr<const InvariantBasis>> cache;
    GroupDegreeKey key{G.spec(), m};
    {
        std::lock_guard lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    const auto& t = multi_indices(G.dim(), m);
    const Eigen::MatrixXd& P = reynolds_matrix(G, m);
    Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(t.multiplicity.data(), t.size()).cwiseSqrt();

    // D^{1/2} P D^{-1/2} is the same projector written in a Euclidean-orthonormal frame.
    Eigen::MatrixXd Pt = s.asDiagonal() * P * s.cwiseInverse().asDiagonal();
    Pt = 0.5 * (Pt + Pt.transpose()).eval();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Pt, Eigen::ComputeThinU);
    int rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
        if (svd.singularValues()[i] > kRankCutoff) ++rank;
    }
    auto basis = std::make_shared<InvariantBasis>();
    basis->d = G.dim();
    basis->m = m;
    basis->vectors.resize(t.size(), rank);
    for (int j = 0; j < rank; ++j) {
        Eigen::VectorXd u = svd.matrixU().col(j);
        Eigen::Index arg;
        u.cwiseAbs().maxCoeff(&arg);
        if (u[arg] < 0) u = -u;
        basis->vectors.col(j) = u.cwiseQuotient(s);
    }
    basis->dual = (basis->vectors.array().colwise() * (s.array() * s.array())).matrix().transpose();

    std::lock_guard lock(mu);
    auto& slot = cache[key];
    if (!slot) slot = basis;
    return slot;
}

Eigen::VectorXd invariant_coordinates(const InvariantBasis& basis, const SymTensor& T) {
    if (T.d() != basis.d || T.m() != basis.m) throw Error(ErrorCode::DimensionMismatch, "tensor shape differs from basis");
    return basis.dual * T.coords();
}

}  // namespace orbitmix
