#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Dense>

#include <cstdint>

namespace cw {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

// C(m,n) = A(m,k) * B(k,n)
inline void gemm_nn(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate) {
    CMapM a(A, m, k);
    CMapM b(B, k, n);
    MapM c(C, m, n);
    if (accumulate)
        c.noalias() += a * b;
    else
        c.noalias() = a * b;
}

// C(m,n) = A(m,k) * B(n,k)^T
inline void gemm_nt(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate) {
    CMapM a(A, m, k);
    CMapM b(B, n, k);
    MapM c(C, m, n);
    if (accumulate)
        c.noalias() += a * b.transpose();
    else
        c.noalias() = a * b.transpose();
}

// C(m,n) = A(k,m)^T * B(k,n)
inline void gemm_tn(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                    std::int64_t n, bool accumulate) {
    CMapM a(A, k, m);
    CMapM b(B, k, n);
    MapM c(C, m, n);
    if (accumulate)
        c.noalias() += a.transpose() * b;
    else
        c.noalias() = a.transpose() * b;
}

}  // namespace cw
