#pragma once

#include <cstdlib>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hetshadow {

// Thread cap: HETSHADOW_THREADS env var wins, otherwise OpenMP default.
inline int thread_count() {
#ifdef _OPENMP
    if (const char* env = std::getenv("HETSHADOW_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Serial reference loop. The parallel kernels below must agree with this
// exactly for order-independent bodies; tests compare the two.
template <typename Body>
void serial_for(long n, const Body& body) {
    for (long i = 0; i < n; ++i) body(i);
}

// OpenMP data-parallel loop over [0, n). Body must be safe to run
// concurrently for distinct i.
template <typename Body>
void parallel_for(long n, const Body& body) {
#ifdef _OPENMP
    int nt = thread_count();
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
    for (long i = 0; i < n; ++i) body(i);
#else
    serial_for(n, body);
#endif
}

// Parallel max-reduction of a per-index score.
template <typename Score>
double parallel_max(long n, const Score& score, double init) {
    double result = init;
#ifdef _OPENMP
    int nt = thread_count();
#pragma omp parallel num_threads(nt)
    {
        double local = init;
#pragma omp for schedule(dynamic, 1) nowait
        for (long i = 0; i < n; ++i) {
            double v = score(i);
            if (v > local) local = v;
        }
#pragma omp critical
        {
            if (local > result) result = local;
        }
    }
#else
    for (long i = 0; i < n; ++i) {
        double v = score(i);
        if (v > result) result = v;
    }
#endif
    return result;
}

}  // namespace hetshadow
