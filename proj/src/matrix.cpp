#include "dvae/matrix.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dvae/kernels.hpp"

namespace dvae {

namespace {
// Covariance-sized buffers (e.g. 128 x 128 = 131 KB) sit just above glibc's
// default mmap threshold, turning every tape node into an mmap/munmap round
// trip. Keep such blocks on the heap free lists instead.
struct MallocTuning {
    MallocTuning() {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 64 * 1024 * 1024);
#endif
    }
};
const MallocTuning malloc_tuning;
} // namespace

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw dim_error("negative matrix dimension");
    data_.assign(static_cast<size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw dim_error("negative matrix dimension");
    if (data.size() != static_cast<size_t>(rows) * cols)
        throw dim_error("matrix data length " + std::to_string(data.size()) +
                        " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    data_ = std::move(data);
    if (!all_finite()) throw numeric_error("non-finite entry in matrix construction");
}

Matrix::Matrix(int rows, int cols, std::initializer_list<double> data)
    : Matrix(rows, cols, std::vector<double>(data)) {}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::filled(int rows, int cols, double value) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
}

Matrix Matrix::col(std::vector<double> entries) {
    const int n = static_cast<int>(entries.size());
    return Matrix(n, 1, std::move(entries));
}

Matrix Matrix::diag(const std::vector<double>& entries) {
    const int n = static_cast<int>(entries.size());
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = entries[i];
    return m;
}

double Matrix::scalar() const {
    if (!is_scalar()) throw dim_error("scalar() on " + shape_str(*this));
    return data_[0];
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const Matrix& a) {
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw dim_error("matmul " + shape_str(a) + " * " + shape_str(b));
    Matrix c(a.rows(), b.cols());
    kernels::mul_nn(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data());
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw dim_error("matmul_nt " + shape_str(a) + " * " + shape_str(b) + "^T");
    Matrix c(a.rows(), b.rows());
    kernels::mul_nt(a.rows(), a.cols(), b.rows(), a.data(), b.data(), c.data());
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw dim_error("matmul_tn " + shape_str(a) + "^T * " + shape_str(b));
    Matrix c(a.cols(), b.cols());
    kernels::mul_tn(a.cols(), a.rows(), b.cols(), a.data(), b.data(), c.data());
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dim_error("add " + shape_str(a) + " + " + shape_str(b));
    Matrix c(a.rows(), a.cols());
    for (long long i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dim_error("sub " + shape_str(a) + " - " + shape_str(b));
    Matrix c(a.rows(), a.cols());
    for (long long i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows(), a.cols());
    for (long long i = 0; i < a.size(); ++i) c[i] = a[i] * s;
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dim_error("hadamard " + shape_str(a) + " . " + shape_str(b));
    Matrix c(a.rows(), a.cols());
    for (long long i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix c(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) c(j, i) = a(i, j);
    return c;
}

Matrix symmetrize(const Matrix& a) {
    if (a.rows() != a.cols()) throw dim_error("symmetrize " + shape_str(a));
    Matrix c(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) c(i, j) = 0.5 * (a(i, j) + a(j, i));
    return c;
}

double dot(const Matrix& a, const Matrix& b) {
    if (a.size() != b.size()) throw dim_error("dot " + shape_str(a) + " . " + shape_str(b));
    double s = 0.0;
    for (long long i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sum(const Matrix& a) {
    double s = 0.0;
    for (long long i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double sum_sq(const Matrix& a) {
    double s = 0.0;
    for (long long i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return s;
}

double max_abs(const Matrix& a) {
    double s = 0.0;
    for (long long i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a[i]));
    return s;
}

double CholFactor::logdet() const {
    double s = 0.0;
    for (int i = 0; i < L.rows(); ++i) s += std::log(L(i, i));
    return 2.0 * s;
}

CholFactor cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) throw dim_error("cholesky " + shape_str(a));
    const int n = a.rows();
    Matrix w = a;
    int fail = kernels::chol_inplace(w.data(), n);
    if (fail >= 0) {
        // single jitter retry, then give up
        double md = 0.0;
        for (int i = 0; i < n; ++i) md += a(i, i);
        md = (n > 0) ? md / n : 0.0;
        w = a;
        for (int i = 0; i < n; ++i) w(i, i) += 1e-10 * md;
        fail = kernels::chol_inplace(w.data(), n);
        if (fail >= 0)
            throw numeric_error("cholesky failed at pivot " + std::to_string(fail), fail);
    }
    return CholFactor{std::move(w)};
}

Matrix chol_solve(const CholFactor& f, const Matrix& b) {
    if (f.L.rows() != b.rows())
        throw dim_error("chol_solve " + shape_str(f.L) + " \\ " + shape_str(b));
    Matrix x = b;
    kernels::chol_solve_inplace(f.L.data(), f.L.rows(), x.data(), b.cols());
    return x;
}

Matrix chol_inverse(const CholFactor& f) {
    return chol_solve(f, Matrix::identity(f.L.rows()));
}

Matrix solve_spd(const Matrix& a, const Matrix& b) { return chol_solve(cholesky(a), b); }

double logdet_spd(const Matrix& a) { return cholesky(a).logdet(); }

LuFactor lu_factorize(const Matrix& a) {
    if (a.rows() != a.cols()) throw dim_error("lu " + shape_str(a));
    LuFactor f;
    f.lu = a;
    f.piv.assign(a.rows(), 0);
    const int fail = kernels::lu_inplace(f.lu.data(), a.rows(), f.piv.data());
    if (fail >= 0) throw numeric_error("singular pivot in LU at column " + std::to_string(fail), fail);
    for (int k = 0; k < a.rows(); ++k)
        if (f.piv[k] != k) f.sign = -f.sign;
    return f;
}

Matrix lu_solve(const LuFactor& f, const Matrix& b, bool trans) {
    if (f.lu.rows() != b.rows())
        throw dim_error("lu_solve " + shape_str(f.lu) + " \\ " + shape_str(b));
    Matrix x = b;
    kernels::lu_solve_inplace(f.lu.data(), f.piv.data(), f.lu.rows(), x.data(), b.cols(), trans);
    return x;
}

Matrix solve_lu(const Matrix& a, const Matrix& b) { return lu_solve(lu_factorize(a), b); }

} // namespace dvae
