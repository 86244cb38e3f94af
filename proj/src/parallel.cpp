#include "tcri/parallel.hpp"

#include <omp.h>

namespace tcri::par {

namespace {
thread_local bool g_enabled = true;
}

bool enabled() { return g_enabled; }
void set_enabled(bool on) { g_enabled = on; }

int max_threads() { return omp_get_max_threads(); }

}  // namespace tcri::par
