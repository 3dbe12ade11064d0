#include "orbitmix/group_action.hpp"

#include "orbitmix/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace orbitmix {

namespace {

int parse_int(std::string_view s, std::string_view what) {
    int value = 0;
    auto trimmed = s;
    while (!trimmed.empty() && trimmed.front() == ' ') trimmed.remove_prefix(1);
    while (!trimmed.empty() && trimmed.back() == ' ') trimmed.remove_suffix(1);
    auto [ptr, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), value);
    if (ec != std::errc() || ptr != trimmed.data() + trimmed.size()) {
        throw Error(ErrorCode::InvalidArgument, "cannot parse integer '" + std::string(s) + "' in " + std::string(what));
    }
    return value;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

Eigen::MatrixXd rotation(double angle) {
    Eigen::MatrixXd r(2, 2);
    r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return r;
}

// Rounds entries that are within 1e-15 of 0 or ±1 so that e.g. cos(pi/2) is exactly 0.
void snap(Eigen::MatrixXd& q) {
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        double& v = q.data()[i];
        for (double target : {-1.0, 0.0, 1.0}) {
            if (std::abs(v - target) < 1e-15) v = target;
        }
    }
}

void validate(const GroupFamily& f) {
    switch (f.kind) {
        case FamilyKind::SignFlips:
        case FamilyKind::Symmetric:
        case FamilyKind::Hyperoctahedral:
            if (f.n < 1) throw Error(ErrorCode::InvalidArgument, "group dimension d must be >= 1");
            break;
        case FamilyKind::Dihedral:
            if (f.n < 2) throw Error(ErrorCode::InvalidArgument, "dihedral order m must be >= 2");
            break;
        case FamilyKind::CyclicWeighted:
            if (f.n < 1) throw Error(ErrorCode::InvalidArgument, "cyclic order M must be >= 1");
            if (f.weights.empty()) throw Error(ErrorCode::InvalidArgument, "cyclic action needs at least one weight");
            break;
        case FamilyKind::Product:
            if (f.factors.empty()) throw Error(ErrorCode::InvalidArgument, "product needs at least one factor");
            for (const auto& factor : f.factors) validate(factor);
            break;
    }
}

std::vector<GroupElement> enumerate(const GroupFamily& f) {
    std::vector<GroupElement> out;
    switch (f.kind) {
        case FamilyKind::SignFlips: {
            const int d = f.n;
            std::vector<int> perm(d);
            std::iota(perm.begin(), perm.end(), 0);
            for (long long mask = 0; mask < (1LL << d); ++mask) {
                std::vector<int> signs(d);
                for (int i = 0; i < d; ++i) signs[i] = ((mask >> i) & 1) ? -1 : 1;
                out.push_back(GroupElement::signed_permutation(perm, std::move(signs)));
            }
            break;
        }
        case FamilyKind::Symmetric: {
            std::vector<int> perm(f.n);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                out.push_back(GroupElement::signed_permutation(perm, std::vector<int>(f.n, 1)));
            } while (std::next_permutation(perm.begin(), perm.end()));
            break;
        }
        case FamilyKind::Hyperoctahedral: {
            const int d = f.n;
            std::vector<int> perm(d);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                for (long long mask = 0; mask < (1LL << d); ++mask) {
                    std::vector<int> signs(d);
                    for (int i = 0; i < d; ++i) signs[i] = ((mask >> i) & 1) ? -1 : 1;
                    out.push_back(GroupElement::signed_permutation(perm, std::move(signs)));
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
            break;
        }
        case FamilyKind::Dihedral: {
            const int m = f.n;
            Eigen::MatrixXd flip(2, 2);
            flip << 1, 0, 0, -1;
            for (int k = 0; k < m; ++k) {
                Eigen::MatrixXd r = rotation(2.0 * std::numbers::pi * k / m);
                snap(r);
                out.push_back(GroupElement::dense(r));
            }
            for (int k = 0; k < m; ++k) {
                Eigen::MatrixXd s = rotation(2.0 * std::numbers::pi * k / m) * flip;
                snap(s);
                out.push_back(GroupElement::dense(s));
            }
            break;
        }
        case FamilyKind::CyclicWeighted: {
            const int M = f.n;
            const int blocks = static_cast<int>(f.weights.size());
            std::vector<Eigen::MatrixXd> seen;
            for (int k = 0; k < M; ++k) {
                Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2 * blocks, 2 * blocks);
                for (int j = 0; j < blocks; ++j) {
                    long long turns = (static_cast<long long>(k) * f.weights[j]) % M;
                    q.block(2 * j, 2 * j, 2, 2) = rotation(2.0 * std::numbers::pi * static_cast<double>(turns) / M);
                }
                snap(q);
                bool dup = std::any_of(seen.begin(), seen.end(), [&](const Eigen::MatrixXd& s) {
                    return (s - q).cwiseAbs().maxCoeff() <= kElementMatchTol;
                });
                if (dup) continue;
                seen.push_back(q);
                out.push_back(GroupElement::dense(q));
            }
            break;
        }
        case FamilyKind::Product: {
            std::vector<std::vector<GroupElement>> parts;
            std::vector<int> dims;
            bool compact = true;
            for (const auto& factor : f.factors) {
                parts.push_back(enumerate(factor));
                dims.push_back(factor.dim());
                for (const auto& g : parts.back()) compact = compact && g.is_signed_permutation();
            }
            const int p = std::accumulate(dims.begin(), dims.end(), 0);
            // Mixed-radix counter over factor indices; factor 0 varies slowest so the identity comes first.
            std::vector<std::size_t> idx(parts.size(), 0);
            while (true) {
                if (compact) {
                    std::vector<int> perm(p), signs(p);
                    int offset = 0;
                    for (std::size_t f_i = 0; f_i < parts.size(); ++f_i) {
                        const auto* sp = parts[f_i][idx[f_i]].as_signed_permutation();
                        for (int i = 0; i < dims[f_i]; ++i) {
                            perm[offset + i] = offset + sp->perm[i];
                            signs[offset + i] = sp->signs[i];
                        }
                        offset += dims[f_i];
                    }
                    out.push_back(GroupElement::signed_permutation(std::move(perm), std::move(signs)));
                } else {
                    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p, p);
                    int offset = 0;
                    for (std::size_t f_i = 0; f_i < parts.size(); ++f_i) {
                        q.block(offset, offset, dims[f_i], dims[f_i]) = parts[f_i][idx[f_i]].matrix();
                        offset += dims[f_i];
                    }
                    out.push_back(GroupElement::dense(std::move(q)));
                }
                int pos = static_cast<int>(parts.size()) - 1;
                while (pos >= 0 && ++idx[pos] == parts[pos].size()) {
                    idx[pos] = 0;
                    --pos;
                }
                if (pos < 0) break;
            }
            break;
        }
    }
    return out;
}

// Lexicographic comparison that treats coordinates within a relative 1e-9 as tied.
bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        double tol = 1e-9 * (1.0 + std::max(std::abs(a[i]), std::abs(b[i])));
        if (a[i] < b[i] - tol) return true;
        if (a[i] > b[i] + tol) return false;
    }
    return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// GroupElement

GroupElement GroupElement::signed_permutation(std::vector<int> perm, std::vector<int> signs) {
    if (perm.size() != signs.size()) {
        throw Error(ErrorCode::DimensionMismatch, "signed permutation: perm and signs differ in length");
    }
    std::vector<int> check(perm);
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i) {
        if (check[i] != static_cast<int>(i)) throw Error(ErrorCode::InvalidArgument, "perm is not a permutation");
    }
    for (int s : signs) {
        if (s != 1 && s != -1) throw Error(ErrorCode::InvalidArgument, "signs must be +-1");
    }
    return GroupElement(SignedPermutation{std::move(perm), std::move(signs)});
}

GroupElement GroupElement::dense(Eigen::MatrixXd q) {
    if (q.rows() != q.cols()) throw Error(ErrorCode::DimensionMismatch, "group matrix must be square");
    const double err = (q.transpose() * q - Eigen::MatrixXd::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff();
    if (err > kElementMatchTol) throw Error(ErrorCode::InvalidArgument, "group matrix is not orthogonal");
    return GroupElement(std::move(q));
}

GroupElement GroupElement::identity(int p) {
    std::vector<int> perm(p);
    std::iota(perm.begin(), perm.end(), 0);
    return signed_permutation(std::move(perm), std::vector<int>(p, 1));
}

std::optional<GroupElement> GroupElement::compact_from_matrix(const Eigen::MatrixXd& q) {
    const int p = static_cast<int>(q.rows());
    if (q.cols() != p) return std::nullopt;
    std::vector<int> perm(p, -1), signs(p, 0);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
            const double v = q(i, j);
            if (v == 0.0) continue;
            if ((v != 1.0 && v != -1.0) || perm[i] != -1) return std::nullopt;
            perm[i] = j;
            signs[i] = static_cast<int>(v);
        }
        if (perm[i] == -1) return std::nullopt;
    }
    try {
        return signed_permutation(std::move(perm), std::move(signs));
    } catch (const Error&) {
        return std::nullopt;
    }
}

int GroupElement::dim() const {
    if (const auto* sp = as_signed_permutation()) return static_cast<int>(sp->perm.size());
    return static_cast<int>(std::get<Eigen::MatrixXd>(rep_).rows());
}

Eigen::MatrixXd GroupElement::matrix() const {
    if (const auto* sp = as_signed_permutation()) {
        const int p = static_cast<int>(sp->perm.size());
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p, p);
        for (int i = 0; i < p; ++i) q(i, sp->perm[i]) = sp->signs[i];
        return q;
    }
    return std::get<Eigen::MatrixXd>(rep_);
}

Eigen::VectorXd GroupElement::apply(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "apply: vector length " + std::to_string(x.size()) + " != " + std::to_string(dim()));
    }
    if (const auto* sp = as_signed_permutation()) {
        Eigen::VectorXd out(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = sp->signs[i] * x[sp->perm[i]];
        return out;
    }
    return std::get<Eigen::MatrixXd>(rep_) * x;
}

GroupElement GroupElement::compose(const GroupElement& other) const {
    if (other.dim() != dim()) throw Error(ErrorCode::DimensionMismatch, "compose: dimension mismatch");
    const auto* a = as_signed_permutation();
    const auto* b = other.as_signed_permutation();
    if (a && b) {
        const std::size_t p = a->perm.size();
        std::vector<int> perm(p), signs(p);
        for (std::size_t i = 0; i < p; ++i) {
            perm[i] = b->perm[a->perm[i]];
            signs[i] = a->signs[i] * b->signs[a->perm[i]];
        }
        return GroupElement(SignedPermutation{std::move(perm), std::move(signs)});
    }
    return GroupElement(Eigen::MatrixXd(matrix() * other.matrix()));
}

GroupElement GroupElement::inverse() const {
    if (const auto* sp = as_signed_permutation()) {
        const std::size_t p = sp->perm.size();
        std::vector<int> perm(p), signs(p);
        for (std::size_t i = 0; i < p; ++i) {
            perm[sp->perm[i]] = static_cast<int>(i);
            signs[sp->perm[i]] = sp->signs[i];
        }
        return GroupElement(SignedPermutation{std::move(perm), std::move(signs)});
    }
    return GroupElement(Eigen::MatrixXd(std::get<Eigen::MatrixXd>(rep_).transpose()));
}

Eigen::VectorXd apply(const GroupElement& g, const Eigen::VectorXd& x) { return g.apply(x); }

// ---------------------------------------------------------------------------
// GroupFamily

GroupFamily GroupFamily::parse(std::string_view spec) {
    auto colon = spec.find(':');
    if (colon == std::string_view::npos) {
        throw Error(ErrorCode::InvalidArgument, "group spec '" + std::string(spec) + "' has no ':'");
    }
    auto head = spec.substr(0, colon);
    auto rest = spec.substr(colon + 1);
    GroupFamily f;
    if (head == "signflips") {
        f = sign_flips(parse_int(rest, spec));
    } else if (head == "sym") {
        f = symmetric(parse_int(rest, spec));
    } else if (head == "hyperoct") {
        f = hyperoctahedral(parse_int(rest, spec));
    } else if (head == "dihedral") {
        f = dihedral(parse_int(rest, spec));
    } else if (head == "cyclic") {
        auto parts = split(rest, ':');
        if (parts.size() != 2) throw Error(ErrorCode::InvalidArgument, "cyclic spec is cyclic:M:w1,w2,...");
        std::vector<int> w;
        for (auto piece : split(parts[1], ',')) w.push_back(parse_int(piece, spec));
        f = cyclic_weighted(parse_int(parts[0], spec), std::move(w));
    } else if (head == "product") {
        std::vector<GroupFamily> factors;
        for (auto piece : split(rest, ';')) {
            auto inner = parse(piece);
            if (inner.kind == FamilyKind::Product) {
                throw Error(ErrorCode::InvalidArgument, "nested products are not supported in specs");
            }
            factors.push_back(std::move(inner));
        }
        f = product(std::move(factors));
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown group family '" + std::string(head) + "'");
    }
    validate(f);
    return f;
}

std::string GroupFamily::spec() const {
    std::ostringstream os;
    switch (kind) {
        case FamilyKind::SignFlips: os << "signflips:" << n; break;
        case FamilyKind::Symmetric: os << "sym:" << n; break;
        case FamilyKind::Hyperoctahedral: os << "hyperoct:" << n; break;
        case FamilyKind::Dihedral: os << "dihedral:" << n; break;
        case FamilyKind::CyclicWeighted:
            os << "cyclic:" << n << ':';
            for (std::size_t i = 0; i < weights.size(); ++i) os << (i ? "," : "") << weights[i];
            break;
        case FamilyKind::Product:
            os << "product:";
            for (std::size_t i = 0; i < factors.size(); ++i) os << (i ? ";" : "") << factors[i].spec();
            break;
    }
    return os.str();
}

int GroupFamily::dim() const {
    switch (kind) {
        case FamilyKind::SignFlips:
        case FamilyKind::Symmetric:
        case FamilyKind::Hyperoctahedral: return n;
        case FamilyKind::Dihedral: return 2;
        case FamilyKind::CyclicWeighted: return 2 * static_cast<int>(weights.size());
        case FamilyKind::Product: {
            int p = 0;
            for (const auto& f : factors) p += f.dim();
            return p;
        }
    }
    return 0;
}

long long family_order(const GroupFamily& f) {
    auto capped_mul = [](long long a, long long b) {
        if (a > kMaxGroupOrder || b > kMaxGroupOrder) return kMaxGroupOrder + 1;
        long long r = a * b;
        return r > kMaxGroupOrder ? kMaxGroupOrder + 1 : r;
    };
    auto factorial = [&](int d) {
        long long r = 1;
        for (int i = 2; i <= d; ++i) r = capped_mul(r, i);
        return r;
    };
    auto pow2 = [&](int d) {
        long long r = 1;
        for (int i = 0; i < d; ++i) r = capped_mul(r, 2);
        return r;
    };
    switch (f.kind) {
        case FamilyKind::SignFlips: return pow2(f.n);
        case FamilyKind::Symmetric: return factorial(f.n);
        case FamilyKind::Hyperoctahedral: return capped_mul(pow2(f.n), factorial(f.n));
        case FamilyKind::Dihedral: return 2LL * f.n;
        case FamilyKind::CyclicWeighted: return f.n;
        case FamilyKind::Product: {
            long long r = 1;
            for (const auto& g : f.factors) r = capped_mul(r, family_order(g));
            return r;
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// FiniteGroup

FiniteGroup::FiniteGroup(GroupFamily family, int dim, std::vector<GroupElement> elements)
    : family_(std::move(family)), dim_(dim), elements_(std::move(elements)) {
    matrices_.reserve(elements_.size());
    for (const auto& g : elements_) matrices_.push_back(g.matrix());
}

FiniteGroup FiniteGroup::build(const GroupFamily& family) {
    validate(family);
    const long long order = family_order(family);
    if (order > kMaxGroupOrder) {
        throw Error(ErrorCode::Sizing, "group " + family.spec() + " has order above the 10^7 enumeration cap");
    }
    return FiniteGroup(family, family.dim(), enumerate(family));
}

FiniteGroup build_group(const GroupFamily& family) { return FiniteGroup::build(family); }

std::optional<std::size_t> FiniteGroup::find(const Eigen::MatrixXd& q) const {
    if (q.rows() != dim_ || q.cols() != dim_) return std::nullopt;
    for (std::size_t i = 0; i < matrices_.size(); ++i) {
        if ((matrices_[i] - q).cwiseAbs().maxCoeff() <= kElementMatchTol) return i;
    }
    return std::nullopt;
}

std::size_t FiniteGroup::compose_index(std::size_t i, std::size_t j) const {
    auto idx = find(matrices_[i] * matrices_[j]);
    if (!idx) throw Error(ErrorCode::InvalidArgument, "group is not closed under composition");
    return *idx;
}

Eigen::VectorXd FiniteGroup::apply(std::size_t i, const Eigen::VectorXd& x) const { return elements_[i].apply(x); }

Eigen::VectorXd FiniteGroup::canonical_rep(const Eigen::VectorXd& theta) const {
    if (theta.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "canonical_rep: wrong vector length");
    switch (family_.kind) {
        case FamilyKind::SignFlips: return theta.cwiseAbs();
        case FamilyKind::Symmetric: {
            Eigen::VectorXd out = theta;
            std::sort(out.data(), out.data() + out.size(), std::greater<>());
            return out;
        }
        case FamilyKind::Hyperoctahedral: {
            Eigen::VectorXd out = theta.cwiseAbs();
            std::sort(out.data(), out.data() + out.size(), std::greater<>());
            return out;
        }
        case FamilyKind::Dihedral: {
            const double r = theta.norm();
            if (r == 0.0) return Eigen::VectorXd::Zero(2);
            const double wedge = 2.0 * std::numbers::pi / family_.n;
            double phi = std::fmod(std::atan2(theta[1], theta[0]), wedge);
            if (phi < 0) phi += wedge;
            if (phi > wedge / 2) phi = wedge - phi;
            Eigen::VectorXd out(2);
            out << r * std::cos(phi), r * std::sin(phi);
            return out;
        }
        case FamilyKind::CyclicWeighted:
        case FamilyKind::Product: {
            Eigen::VectorXd best = theta;
            for (const auto& q : matrices_) {
                Eigen::VectorXd img = q * theta;
                if (lex_less(img, best)) best = std::move(img);
            }
            return best;
        }
    }
    return theta;
}

Eigen::VectorXd canonical_rep(const FiniteGroup& G, const Eigen::VectorXd& theta) { return G.canonical_rep(theta); }

bool verify_group_axioms(const FiniteGroup& G, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    const std::size_t n = static_cast<std::size_t>(G.order());
    const int p = G.dim();
    if (n == 0) return fail("empty group");
    if ((G.matrix(0) - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() > kElementMatchTol) {
        return fail("element 0 is not the identity");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& q = G.matrix(i);
        if ((q.transpose() * q - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() > kElementMatchTol) {
            return fail("element " + std::to_string(i) + " is not orthogonal");
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            if ((q - G.matrix(j)).cwiseAbs().maxCoeff() <= kElementMatchTol) {
                return fail("duplicate elements " + std::to_string(i) + ", " + std::to_string(j));
            }
        }
        if (!G.find(q.transpose())) return fail("inverse of element " + std::to_string(i) + " missing");
        for (std::size_t j = 0; j < n; ++j) {
            if (!G.find(q * G.matrix(j))) {
                return fail("product of " + std::to_string(i) + " and " + std::to_string(j) + " not in group");
            }
        }
    }
    return true;
}

}  // namespace orbitmix
