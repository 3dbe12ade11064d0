#pragma once

#include "orbitmix/group_action.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace orbitmix {

inline constexpr long long kMaxSymDim = 100'000;
inline constexpr double kRankCutoff = 1e-9;

/// Nondecreasing multi-indices of order m over {0..d-1}, in lexicographic order, with multinomial
/// multiplicities (number of distinct permutations of each index).
struct MultiIndexTable {
    int d = 0;
    int m = 0;
    std::vector<std::vector<int>> index;
    std::vector<double> multiplicity;
    /// raise[a][j]: position in the order-(m+1) table of index a with j inserted.
    std::vector<std::vector<int>> raise;

    int size() const { return static_cast<int>(index.size()); }
};

long long sym_dim(int d, int m);

/// Cached table; thread-safe.
const MultiIndexTable& multi_indices(int d, int m);

/// Symmetric order-m tensor in canonical coordinates; each coordinate holds the common value of all
/// permuted entries.
class SymTensor {
public:
    SymTensor(int d, int m);
    SymTensor(int d, int m, Eigen::VectorXd coords);

    static SymTensor rank_one(const Eigen::VectorXd& x, int m);

    int d() const { return d_; }
    int m() const { return m_; }
    const Eigen::VectorXd& coords() const { return coords_; }
    Eigen::VectorXd& coords() { return coords_; }

    /// Entry at an arbitrary (unsorted) multi-index.
    double at(std::vector<int> idx) const;

private:
    int d_;
    int m_;
    Eigen::VectorXd coords_;
};

/// Full-array inner product: sum over canonical indices weighted by multiplicity.
double inner(const SymTensor& a, const SymTensor& b);

/// Matrix A with coords((Q.)^{(x)m} T) = A * coords(T).
Eigen::MatrixXd induced_action(const Eigen::MatrixXd& Q, int m);

/// Reynolds projector on canonical coordinates for degree m; cached per (group spec, m).
const Eigen::MatrixXd& reynolds_matrix(const FiniteGroup& G, int m);

SymTensor reynolds_project(const FiniteGroup& G, const SymTensor& T);

/// Vectors orthonormal in the multiplicity-weighted inner product, spanning the invariant subspace.
struct InvariantBasis {
    int d = 0;
    int m = 0;
    /// Columns are basis tensors in canonical coordinates.
    Eigen::MatrixXd vectors;
    /// Row j = vectors.col(j) .* multiplicity; coordinates of T are `dual * coords(T)`.
    Eigen::MatrixXd dual;

    int dim() const { return static_cast<int>(vectors.cols()); }
    SymTensor vector(int j) const { return SymTensor(d, m, vectors.col(j)); }
};

/// Cached per (group spec, m).
std::shared_ptr<const InvariantBasis> invariant_basis(const FiniteGroup& G, int m);

/// Invariant coordinates <b_j, T> of a tensor.
Eigen::VectorXd invariant_coordinates(const InvariantBasis& basis, const SymTensor& T);

/// All monomials x^alpha of order m in canonical order.
Eigen::VectorXd monomials(const Eigen::VectorXd& x, int m);

}  // namespace orbitmix
