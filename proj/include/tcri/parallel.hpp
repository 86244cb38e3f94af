#pragma once

namespace tcri::par {

// Kernel-level OpenMP switch. Scenario sweeps parallelize over cells instead
// and turn this off per worker thread to avoid oversubscription. The flag is
// thread-local so a worker's choice never leaks into other runs.
bool enabled();
void set_enabled(bool on);

int max_threads();

}  // namespace tcri::par
