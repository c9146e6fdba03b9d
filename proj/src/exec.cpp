#include "mvr/exec.hpp"

#include <omp.h>

namespace mvr {

int worker_count() { return omp_get_max_threads(); }

}  // namespace mvr
