#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace orbitmix {

/// Compact encoding of a signed permutation matrix: (Q x)_i = signs[i] * x[perm[i]].
struct SignedPermutation {
    std::vector<int> perm;
    std::vector<int> signs;

    bool operator==(const SignedPermutation&) const = default;
};

/// One element of a finite orthogonal group acting on R^p.
class GroupElement {
public:
    static GroupElement signed_permutation(std::vector<int> perm, std::vector<int> signs);
    static GroupElement dense(Eigen::MatrixXd q);
    static GroupElement identity(int p);

    /// Recovers the compact encoding when `q` is a signed permutation matrix (entries exactly 0/±1).
    static std::optional<GroupElement> compact_from_matrix(const Eigen::MatrixXd& q);

    int dim() const;
    bool is_signed_permutation() const { return std::holds_alternative<SignedPermutation>(rep_); }
    const SignedPermutation* as_signed_permutation() const { return std::get_if<SignedPermutation>(&rep_); }

    Eigen::MatrixXd matrix() const;
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;

    /// Matrix product this * other.
    GroupElement compose(const GroupElement& other) const;
    GroupElement inverse() const;

private:
    explicit GroupElement(std::variant<SignedPermutation, Eigen::MatrixXd> rep) : rep_(std::move(rep)) {}

    std::variant<SignedPermutation, Eigen::MatrixXd> rep_;
};

enum class FamilyKind { SignFlips, Symmetric, Hyperoctahedral, Dihedral, CyclicWeighted, Product };

/// Family tag plus parameters. `n` is d for sign flips / sym / hyperoctahedral, m for dihedral and M for
/// weighted cyclic groups.
struct GroupFamily {
    FamilyKind kind = FamilyKind::Symmetric;
    int n = 1;
    std::vector<int> weights;
    std::vector<GroupFamily> factors;

    static GroupFamily sign_flips(int d) { return {FamilyKind::SignFlips, d, {}, {}}; }
    static GroupFamily symmetric(int d) { return {FamilyKind::Symmetric, d, {}, {}}; }
    static GroupFamily hyperoctahedral(int d) { return {FamilyKind::Hyperoctahedral, d, {}, {}}; }
    static GroupFamily dihedral(int m) { return {FamilyKind::Dihedral, m, {}, {}}; }
    static GroupFamily cyclic_weighted(int M, std::vector<int> w) {
        return {FamilyKind::CyclicWeighted, M, std::move(w), {}};
    }
    static GroupFamily product(std::vector<GroupFamily> f) { return {FamilyKind::Product, 0, {}, std::move(f)}; }

    /// Grammar: "signflips:d", "sym:d", "hyperoct:d", "dihedral:m", "cyclic:M:w1,w2,...",
    /// "product:spec1;spec2". Nested products are not expressible in the grammar.
    static GroupFamily parse(std::string_view spec);
    std::string spec() const;

    /// Dimension p of the space acted on.
    int dim() const;
};

inline constexpr long long kMaxGroupOrder = 10'000'000;
inline constexpr double kElementMatchTol = 1e-10;

/// Fully enumerated finite group; identity at index 0. Immutable after construction.
class FiniteGroup {
public:
    static FiniteGroup build(const GroupFamily& family);
    static FiniteGroup parse(std::string_view spec) { return build(GroupFamily::parse(spec)); }

    int dim() const { return dim_; }
    int order() const { return static_cast<int>(elements_.size()); }
    const GroupFamily& family() const { return family_; }
    std::string spec() const { return family_.spec(); }

    const std::vector<GroupElement>& elements() const { return elements_; }
    const GroupElement& element(std::size_t i) const { return elements_[i]; }
    const Eigen::MatrixXd& matrix(std::size_t i) const { return matrices_[i]; }

    /// Index of the element whose matrix matches `q` entrywise to kElementMatchTol.
    std::optional<std::size_t> find(const Eigen::MatrixXd& q) const;
    /// Index of element(i) * element(j).
    std::size_t compose_index(std::size_t i, std::size_t j) const;

    Eigen::VectorXd apply(std::size_t i, const Eigen::VectorXd& x) const;
    /// Deterministic orbit representative, constant on orbits.
    Eigen::VectorXd canonical_rep(const Eigen::VectorXd& theta) const;

private:
    FiniteGroup(GroupFamily family, int dim, std::vector<GroupElement> elements);

    GroupFamily family_;
    int dim_ = 0;
    std::vector<GroupElement> elements_;
    std::vector<Eigen::MatrixXd> matrices_;
};

/// Group order implied by the family parameters (before deduplication of non-faithful cyclic actions).
long long family_order(const GroupFamily& family);

FiniteGroup build_group(const GroupFamily& family);
Eigen::VectorXd apply(const GroupElement& g, const Eigen::VectorXd& x);
Eigen::VectorXd canonical_rep(const FiniteGroup& G, const Eigen::VectorXd& theta);

/// Checks identity, closure, inverses and distinctness of the element list.
bool verify_group_axioms(const FiniteGroup& G, std::string* why = nullptr);

}  // namespace orbitmix
