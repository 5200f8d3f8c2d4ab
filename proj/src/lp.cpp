#include "graspqp/lp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace graspqp {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-11;

class Tableau {
 public:
  Tableau(const MatX& A, const VecX& b) : rows_(A.rows()), cols_(A.cols() + A.rows()) {
    // Columns: structural, then one artificial per row; last column is rhs.
    t_ = MatX::Zero(rows_, cols_ + 1);
    basis_.resize(rows_);
    for (Eigen::Index i = 0; i < rows_; ++i) {
      const double sign = b[i] < 0.0 ? -1.0 : 1.0;
      t_.row(i).head(A.cols()) = sign * A.row(i);
      t_(i, A.cols() + i) = 1.0;
      t_(i, cols_) = sign * b[i];
      basis_[i] = A.cols() + i;
    }
    structural_ = A.cols();
  }

  // Minimizes cost^T x over the current basis; `allowed` limits entering columns.
  LpStatus optimize(const VecX& cost, Eigen::Index allowed, int max_iter) {
    for (int iter = 0; iter < max_iter; ++iter) {
      // Reduced costs r_j = c_j - c_B^T B^-1 a_j, read off the tableau.
      Eigen::Index entering = -1;
      for (Eigen::Index j = 0; j < allowed; ++j) {
        double r = cost[j];
        for (Eigen::Index i = 0; i < rows_; ++i) r -= cost[basis_[i]] * t_(i, j);
        if (r < -kCostTol) {
          entering = j;  // Bland: lowest index
          break;
        }
      }
      if (entering < 0) return LpStatus::kOptimal;

      Eigen::Index leaving = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < rows_; ++i) {
        const double a = t_(i, entering);
        if (a > kPivotTol) {
          // Near-ties go to the larger pivot element.
          const double ratio = t_(i, cols_) / a;
          const double tie = leaving < 0 ? 0.0 : 1e-12 * (1.0 + std::abs(best_ratio));
          if (leaving < 0 || ratio < best_ratio - tie ||
              (std::abs(ratio - best_ratio) <= tie && a > t_(leaving, entering))) {
            best_ratio = ratio;
            leaving = i;
          }
        }
      }
      if (leaving < 0) return LpStatus::kUnbounded;
      pivot(leaving, entering);
    }
    return LpStatus::kIterationLimit;
  }

  void pivot(Eigen::Index row, Eigen::Index col) {
    t_.row(row) /= t_(row, col);
    for (Eigen::Index i = 0; i < rows_; ++i) {
      if (i != row && t_(i, col) != 0.0) t_.row(i) -= t_(i, col) * t_.row(row);
    }
    basis_[row] = col;
  }

  // Pivots artificial variables out of the basis where possible.
  void expel_artificials() {
    for (Eigen::Index i = 0; i < rows_; ++i) {
      if (basis_[i] < structural_) continue;
      for (Eigen::Index j = 0; j < structural_; ++j) {
        if (std::abs(t_(i, j)) > 1e-9) {
          pivot(i, j);
          break;
        }
      }
    }
  }

  VecX solution() const {
    VecX x = VecX::Zero(structural_);
    for (Eigen::Index i = 0; i < rows_; ++i) {
      if (basis_[i] < structural_) x[basis_[i]] = t_(i, cols_);
    }
    return x;
  }

  double artificial_sum() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < rows_; ++i) {
      if (basis_[i] >= structural_) s += t_(i, cols_);
    }
    return s;
  }

  Eigen::Index structural() const { return structural_; }
  Eigen::Index total_columns() const { return cols_; }

 private:
  Eigen::Index rows_;
  Eigen::Index cols_;
  Eigen::Index structural_ = 0;
  MatX t_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace

LpResult solve_standard_lp(const VecX& c, const MatX& A, const VecX& b) {
  if (A.cols() != c.size() || A.rows() != b.size()) throw std::invalid_argument("solve_standard_lp: shape mismatch");
  LpResult result;
  Tableau tab(A, b);
  const int max_iter = 50 * static_cast<int>(A.rows() + A.cols() + 10);

  VecX phase1 = VecX::Zero(tab.total_columns());
  phase1.tail(A.rows()).setOnes();
  const LpStatus s1 = tab.optimize(phase1, tab.total_columns(), max_iter);
  if (s1 == LpStatus::kIterationLimit) {
    result.status = s1;
    return result;
  }
  const double scale = 1.0 + b.cwiseAbs().maxCoeff();
  if (tab.artificial_sum() > 1e-9 * scale) {
    result.status = LpStatus::kInfeasible;
    return result;
  }
  tab.expel_artificials();

  VecX phase2 = VecX::Zero(tab.total_columns());
  phase2.head(c.size()) = c;
  const LpStatus s2 = tab.optimize(phase2, tab.structural(), max_iter);
  result.status = s2;
  result.x = tab.solution();
  result.objective = c.dot(result.x);
  return result;
}

}  // namespace graspqp
