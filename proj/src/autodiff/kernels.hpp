#pragma once

#include <cstddef>

namespace algebraformer::ad::kernels {

// Row-major GEMM variants accumulating into C.

/// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A,
                    const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        double* __restrict c = C + i * N;
        const double* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* __restrict b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) {
                c[j] += aik * b[j];
            }
        }
    }
}

/// C[M,K] += A[M,N] * B[K,N]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A,
                    const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* __restrict a = A + i * N;
        double* c = C + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double* __restrict b = B + k * N;
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                s += a[j] * b[j];
            }
            c[k] += s;
        }
    }
}

/// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const double* A,
                    const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        const double* __restrict b = B + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a[k];
            double* __restrict c = C + k * N;
            for (std::size_t j = 0; j < N; ++j) {
                c[j] += aik * b[j];
            }
        }
    }
}

} // namespace algebraformer::ad::kernels
