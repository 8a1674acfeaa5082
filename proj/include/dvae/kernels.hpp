#ifndef DVAE_KERNELS_HPP
#define DVAE_KERNELS_HPP

#include <cstddef>

// Low-level dense kernels. Each has a serial reference implementation and
// an OpenMP variant; the unsuffixed entry points dispatch on problem size
// and the global parallel switch. Parallelization is over output rows with
// a fixed-order inner accumulation, so results are bit-identical to the
// serial reference for any thread count.
namespace dvae::kernels {

void set_parallel(bool enabled);
bool parallel_enabled();

// C(m x n) = A(m x k) B(k x n), row-major, C overwritten
void mul_nn_serial(int m, int k, int n, const double* A, const double* B, double* C);
void mul_nn_omp(int m, int k, int n, const double* A, const double* B, double* C);
void mul_nn(int m, int k, int n, const double* A, const double* B, double* C);

// C(m x n) = A(m x k) B(n x k)^T
void mul_nt_serial(int m, int k, int n, const double* A, const double* B, double* C);
void mul_nt_omp(int m, int k, int n, const double* A, const double* B, double* C);
void mul_nt(int m, int k, int n, const double* A, const double* B, double* C);

// C(m x n) = A(k x m)^T B(k x n)
void mul_tn_serial(int m, int k, int n, const double* A, const double* B, double* C);
void mul_tn_omp(int m, int k, int n, const double* A, const double* B, double* C);
void mul_tn(int m, int k, int n, const double* A, const double* B, double* C);

// In-place lower Cholesky of n x n SPD matrix (upper triangle ignored).
// Returns -1 on success, else the failing pivot index.
int chol_inplace_serial(double* a, int n);
int chol_inplace_omp(double* a, int n);
int chol_inplace(double* a, int n);

// Solves L L^T X = B in place; B is n x nrhs row-major.
void chol_solve_inplace(const double* L, int n, double* b, int nrhs);

// In-place LU with partial pivoting; piv[k] = row swapped into k.
// Returns -1 on success, else the column with a vanishing pivot.
int lu_inplace_serial(double* a, int n, int* piv);
int lu_inplace_omp(double* a, int n, int* piv);
int lu_inplace(double* a, int n, int* piv);

// Solves A X = B (or A^T X = B) given the LU factors; B is n x nrhs.
void lu_solve_inplace(const double* lu, const int* piv, int n, double* b, int nrhs,
                      bool trans);

} // namespace dvae::kernels

#endif
