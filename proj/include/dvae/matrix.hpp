#ifndef DVAE_MATRIX_HPP
#define DVAE_MATRIX_HPP

#include <initializer_list>
#include <string>
#include <vector>

#include "dvae/errors.hpp"

namespace dvae {

/// Dense row-major matrix of 64-bit floats. Column vectors are n x 1.
/// Construction from user data validates shape and finiteness; the
/// default-fill constructors are used internally by kernels.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols);  // zero-initialized
    Matrix(int rows, int cols, std::vector<double> data);
    Matrix(int rows, int cols, std::initializer_list<double> data);

    static Matrix identity(int n);
    static Matrix filled(int rows, int cols, double value);
    static Matrix col(std::vector<double> entries);
    static Matrix diag(const std::vector<double>& entries);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    long long size() const { return static_cast<long long>(rows_) * cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }
    double& operator[](size_t k) { return data_[k]; }
    double operator[](size_t k) const { return data_[k]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& storage() const { return data_; }

    double scalar() const;  // value of a 1x1 matrix
    bool all_finite() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Value-level linear algebra. All routines are pure and thread-safe on
// independent inputs; they dispatch to the serial/OpenMP kernels.
Matrix matmul(const Matrix& a, const Matrix& b);            // A B
Matrix matmul_nt(const Matrix& a, const Matrix& b);         // A B^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);         // A^T B
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix symmetrize(const Matrix& a);                         // (A + A^T) / 2
double dot(const Matrix& a, const Matrix& b);               // sum of elementwise products
double sum(const Matrix& a);
double sum_sq(const Matrix& a);
double max_abs(const Matrix& a);

/// Lower-triangular Cholesky factor of an SPD matrix.
struct CholFactor {
    Matrix L;
    double logdet() const;
};

/// Cholesky with no pivoting. On the first failure, retries once with
/// jitter 1e-10 * mean(diag) added to the diagonal; if that also fails,
/// throws numeric_error carrying the failing pivot index.
CholFactor cholesky(const Matrix& a);
Matrix chol_solve(const CholFactor& f, const Matrix& b);
Matrix chol_inverse(const CholFactor& f);

/// Solves a X = b for SPD a.
Matrix solve_spd(const Matrix& a, const Matrix& b);
double logdet_spd(const Matrix& a);

/// LU factorization with partial pivoting, for general square systems.
struct LuFactor {
    Matrix lu;
    std::vector<int> piv;
    int sign = 1;
};
LuFactor lu_factorize(const Matrix& a);
Matrix lu_solve(const LuFactor& f, const Matrix& b, bool trans = false);
Matrix solve_lu(const Matrix& a, const Matrix& b);

std::string shape_str(const Matrix& a);

} // namespace dvae

#endif
