#pragma once

namespace mvr {

// Every data-parallel kernel takes an Exec tag. Serial is the reference
// path; Parallel distributes the outer loop with OpenMP. Both produce
// bitwise-identical results.
enum class Exec { Serial, Parallel };

int worker_count();

/// Runs f(i) for i in [0, n). Iterations must be independent.
template <class F>
void for_each_index(Exec exec, int n, F&& f) {
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (int i = 0; i < n; ++i) f(i);
    } else {
        for (int i = 0; i < n; ++i) f(i);
    }
}

}  // namespace mvr
