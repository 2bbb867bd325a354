#include "batmil/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

#include "batmil/rng.hpp"
#include "batmil/ssm.hpp"

namespace batmil::bench {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<KernelTiming> kernel_bench(const std::vector<std::size_t>& lengths, std::size_t runs, std::size_t channels,
                                       std::size_t n_state, std::uint64_t seed) {
  const ssm::SsmLayerParams layer = ssm::hippo_diag_init(n_state, channels, seed);
  std::vector<ssm::DiscreteChannel> chans;
  for (std::size_t c = 0; c < channels; ++c) chans.push_back(ssm::discrete_channel(layer, c));
  volatile double sink = 0.0;
  std::vector<std::vector<double>> inputs;
  for (std::size_t L : lengths) {
    Rng rng = make_rng(seed, L);
    std::normal_distribution<double> nd;
    std::vector<double> u(L);
    for (double& v : u) v = nd(rng);
    // Warm the FFT plan cache so every timed run does the same work.
    sink = sink + ssm::conv_apply<double>(u, ssm::ssm_kernel(chans[0], L), chans[0].skip).back();
    inputs.push_back(std::move(u));
  }
  // Lengths are interleaved within each round so machine-level slowdowns hit all of them alike.
  std::vector<std::vector<double>> conv_t(lengths.size()), scan_t(lengths.size());
  for (std::size_t r = 0; r < runs; ++r) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const auto& u = inputs[i];
      const std::size_t L = lengths[i];
      conv_t[i].push_back(time_ms([&] {
        for (const auto& ch : chans) sink = sink + ssm::conv_apply<double>(u, ssm::ssm_kernel(ch, L), ch.skip).back();
      }));
      scan_t[i].push_back(time_ms([&] {
        for (const auto& ch : chans) sink = sink + ssm::recurrent_scan<double>(u, ch).back();
      }));
    }
  }
  std::vector<KernelTiming> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) out.push_back({lengths[i], median(conv_t[i]), median(scan_t[i])});
  return out;
}

std::string format_table(const std::vector<KernelTiming>& rows) {
  std::string s = "length\tconv_ms\tscan_ms\tconv_ratio_vs_prev\n";
  char buf[128];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double ratio = i == 0 ? 0.0 : rows[i].conv_ms / rows[i - 1].conv_ms;
    if (i == 0) {
      std::snprintf(buf, sizeof buf, "%zu\t%.4f\t%.4f\t-\n", rows[i].length, rows[i].conv_ms, rows[i].scan_ms);
    } else {
      std::snprintf(buf, sizeof buf, "%zu\t%.4f\t%.4f\t%.3f\n", rows[i].length, rows[i].conv_ms, rows[i].scan_ms, ratio);
    }
    s += buf;
  }
  return s;
}

}  // namespace batmil::bench
