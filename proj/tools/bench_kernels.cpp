// Timings of the OpenMP kernels against their serial reference
// implementations: RBF Gram construction, HSIC trace, matmul.

#include <chrono>
#include <cstdio>
#include <functional>

#include "tcri/kernels.hpp"
#include "tcri/parallel.hpp"
#include "tcri/rng.hpp"
#include "tcri/tensor.hpp"

using tcri::diff::Tensor;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  tcri::rng::Rng r(seed);
  Tensor m = Tensor::zeros({n, d});
  for (double& v : m.data()) v = r.normal();
  return m;
}

void row(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", tcri::par::max_threads());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  for (std::size_t n : {256, 512, 1024}) {
    const Tensor x = random_matrix(n, 8, 42);
    const double bw = tcri::kern::median_bandwidth_serial(x);
    char name[64];

    std::snprintf(name, sizeof name, "rbf_gram n=%zu", n);
    tcri::par::set_enabled(true);
    const double par_ms =
        time_ms([&] { tcri::kern::rbf_gram(x, bw); }, 5);
    const double ser_ms =
        time_ms([&] { tcri::kern::rbf_gram_serial(x, bw); }, 5);
    row(name, ser_ms, par_ms);

    const auto gx = tcri::kern::rbf_gram_serial(x, bw);
    const auto gy = tcri::kern::rbf_gram_serial(random_matrix(n, 8, 43), bw);
    std::snprintf(name, sizeof name, "hsic_v n=%zu", n);
    const double hp = time_ms([&] { tcri::kern::hsic_v(gx, gy); }, 10);
    const double hs = time_ms([&] { tcri::kern::hsic_v_serial(gx, gy); }, 10);
    row(name, hs, hp);

    std::snprintf(name, sizeof name, "median_bandwidth n=%zu", n);
    const double mp = time_ms([&] { tcri::kern::median_bandwidth(x); }, 5);
    const double ms = time_ms([&] { tcri::kern::median_bandwidth_serial(x); }, 5);
    row(name, ms, mp);
  }

  for (std::size_t n : {128, 256}) {
    const Tensor a = random_matrix(n, n, 1);
    const Tensor b = random_matrix(n, n, 2);
    char name[64];
    std::snprintf(name, sizeof name, "matmul %zux%zu", n, n);
    const double mp = time_ms([&] { tcri::diff::matmul_value(a, b); }, 10);
    const double ms =
        time_ms([&] { tcri::diff::matmul_value_serial(a, b); }, 10);
    row(name, ms, mp);
  }
  return 0;
}
