#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace batmil::bench {

struct KernelTiming {
  std::size_t length = 0;
  double conv_ms = 0.0;  // median, FFT causal convolution (kernel generation included)
  double scan_ms = 0.0;  // median, recurrent scan
};

/// Times one SSM layer of `channels` channels per run; medians over `runs`.
std::vector<KernelTiming> kernel_bench(const std::vector<std::size_t>& lengths, std::size_t runs = 20,
                                       std::size_t channels = 8, std::size_t n_state = 64, std::uint64_t seed = 0);

std::string format_table(const std::vector<KernelTiming>& rows);

}  // namespace batmil::bench
